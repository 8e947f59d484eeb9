"""Pattern search and condition evaluation over byte subjects.

All literal patterns of a ruleset are searched in one pass with an
Aho-Corasick automaton (two automata: one over the raw subject for
case-sensitive patterns, one over the ASCII-lowercased subject for
``nocase`` patterns). Hex wildcards and regexes fall back to per-pattern
regex scans.
"""

from __future__ import annotations

import re
from collections import deque

from wsdetect.rulelang.model import (
    And,
    BoolLiteral,
    Condition,
    HexBody,
    MatchReport,
    Not,
    OfExpr,
    Or,
    Pattern,
    PatternMatch,
    Rule,
    RuleSet,
    StringRef,
    TextBody,
)

_WORD_BYTES = frozenset(
    b"abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789")


class _AcNode:
    __slots__ = ("children", "fail", "outputs")

    def __init__(self):
        self.children: dict[int, _AcNode] = {}
        self.fail: _AcNode | None = None
        self.outputs: list[tuple[int, int]] = []  # (pattern index, length)


class _Automaton:
    """Byte-level Aho-Corasick over a set of literal needles."""

    def __init__(self, needles: list[bytes]):
        self.root = _AcNode()
        for idx, needle in enumerate(needles):
            node = self.root
            for byte in needle:
                node = node.children.setdefault(byte, _AcNode())
            node.outputs.append((idx, len(needle)))
        self._build_failure_links()

    def _build_failure_links(self) -> None:
        queue: deque[_AcNode] = deque()
        for child in self.root.children.values():
            child.fail = self.root
            queue.append(child)
        while queue:
            node = queue.popleft()
            for byte, child in node.children.items():
                fallback = node.fail
                while fallback is not self.root and byte not in fallback.children:
                    fallback = fallback.fail
                child.fail = fallback.children.get(byte, self.root)
                if child.fail is child:
                    child.fail = self.root
                child.outputs = child.outputs + child.fail.outputs
                queue.append(child)

    def scan(self, subject: bytes) -> list[list[int]]:
        """Start offsets of every needle occurrence, per needle index."""
        hits: dict[int, list[int]] = {}
        node = self.root
        for pos, byte in enumerate(subject):
            while node is not self.root and byte not in node.children:
                node = node.fail
            node = node.children.get(byte, self.root)
            for idx, length in node.outputs:
                hits.setdefault(idx, []).append(pos - length + 1)
        return hits


class CompiledRuleSet:
    """A RuleSet with its search machinery built, ready to match."""

    def __init__(self, ruleset: RuleSet):
        self.ruleset = ruleset
        patterns: list[tuple[Rule, Pattern]] = [
            (rule, pat) for rule in ruleset.rules for pat in rule.strings]
        self._patterns = patterns

        cs_needles: list[bytes] = []
        ci_needles: list[bytes] = []
        self._cs_index: list[int] = []  # automaton slot -> patterns index
        self._ci_index: list[int] = []
        self._regex: list[tuple[int, re.Pattern[bytes]]] = []

        for i, (_, pat) in enumerate(patterns):
            body = pat.body
            if isinstance(body, TextBody):
                if body.nocase:
                    ci_needles.append(body.value.lower())
                    self._ci_index.append(i)
                else:
                    cs_needles.append(body.value)
                    self._cs_index.append(i)
            elif isinstance(body, HexBody):
                if all(t is not None for t in body.tokens):
                    cs_needles.append(bytes(body.tokens))
                    self._cs_index.append(i)
                else:
                    self._regex.append((i, _hex_to_regex(body)))
            else:
                flags = re.DOTALL | (re.IGNORECASE if body.nocase else 0)
                self._regex.append((i, re.compile(body.source.encode("latin-1"), flags)))

        self._cs = _Automaton(cs_needles) if cs_needles else None
        self._ci = _Automaton(ci_needles) if ci_needles else None

    def occurrences(self, subject: bytes) -> list[list[tuple[int, int]]]:
        """Per global pattern index: list of (offset, length) occurrences."""
        found: list[list[tuple[int, int]]] = [[] for _ in self._patterns]
        if self._cs is not None:
            for slot, offsets in self._cs.scan(subject).items():
                i = self._cs_index[slot]
                length = _literal_length(self._patterns[i][1])
                found[i] = [(off, length) for off in offsets]
        if self._ci is not None:
            lowered = subject.lower()
            for slot, offsets in self._ci.scan(lowered).items():
                i = self._ci_index[slot]
                length = _literal_length(self._patterns[i][1])
                found[i] = [(off, length) for off in offsets]
        for i, rx in self._regex:
            spans = [(m.start(), m.end() - m.start()) for m in rx.finditer(subject)]
            found[i] = spans
        # fullword: occurrences flanked by alphanumerics do not count
        for i, (_, pat) in enumerate(self._patterns):
            body = pat.body
            if getattr(body, "fullword", False) and found[i]:
                found[i] = [
                    (off, length) for off, length in found[i]
                    if _is_fullword(subject, off, length)]
        return found


def _literal_length(pattern: Pattern) -> int:
    body = pattern.body
    if isinstance(body, TextBody):
        return len(body.value)
    if isinstance(body, HexBody):
        return len(body.tokens)
    raise TypeError("not a literal pattern")


def _hex_to_regex(body: HexBody) -> re.Pattern[bytes]:
    parts = [b"." if t is None else re.escape(bytes([t])) for t in body.tokens]
    return re.compile(b"".join(parts), re.DOTALL)


def _is_fullword(subject: bytes, offset: int, length: int) -> bool:
    before = subject[offset - 1] if offset > 0 else None
    after_pos = offset + length
    after = subject[after_pos] if after_pos < len(subject) else None
    return (before is None or before not in _WORD_BYTES) and (
        after is None or after not in _WORD_BYTES)


def evaluate_condition(node: Condition, rule: Rule, present: set[str]) -> bool:
    """Evaluate a condition where `present` holds the ids that occurred."""
    if isinstance(node, BoolLiteral):
        return node.value
    if isinstance(node, StringRef):
        return node.ident in present
    if isinstance(node, OfExpr):
        targets = rule.pattern_ids() if node.targets is None else node.targets
        return sum(1 for ident in targets if ident in present) >= node.count
    if isinstance(node, And):
        return evaluate_condition(node.left, rule, present) and \
            evaluate_condition(node.right, rule, present)
    if isinstance(node, Or):
        return evaluate_condition(node.left, rule, present) or \
            evaluate_condition(node.right, rule, present)
    if isinstance(node, Not):
        return not evaluate_condition(node.operand, rule, present)
    raise TypeError(f"unknown condition node {node!r}")


def match_buffer(rules: RuleSet | CompiledRuleSet, subject: bytes,
                 subject_id: str = "<buffer>") -> MatchReport:
    """Match every rule against a byte subject.

    A rule is reported iff its condition is true with each string
    reference valued by "occurs at least once in the subject". Matched
    rules carry all occurrence offsets of their occurring patterns.
    """
    compiled = rules if isinstance(rules, CompiledRuleSet) else CompiledRuleSet(rules)
    found = compiled.occurrences(subject)

    per_rule: dict[str, dict[str, list[int]]] = {}
    for i, (rule, pattern) in enumerate(compiled._patterns):
        if found[i]:
            per_rule.setdefault(rule.name, {})[pattern.ident] = [
                off for off, _ in found[i]]

    report = MatchReport(subject=subject_id)
    for rule in compiled.ruleset.rules:
        present = set(per_rule.get(rule.name, {}))
        if evaluate_condition(rule.condition, rule, present):
            matches = [
                PatternMatch(pattern_id=ident, offset=off)
                for ident in rule.pattern_ids()
                for off in per_rule.get(rule.name, {}).get(ident, [])]
            report.matched.append((rule.name, matches))
    return report
