"""Filesystem scanning: apply a compiled ruleset to whole trees."""

from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path

from wsdetect.rulelang.matcher import CompiledRuleSet, match_buffer
from wsdetect.rulelang.model import MatchReport, RuleError, RuleSet
from wsdetect.rulelang.parser import parse_rules


@dataclass
class ScanError:
    path: str
    reason: str


def scan_tree(rules: RuleSet, root: str | Path,
              extensions: tuple[str, ...] | None = None,
              ) -> tuple[list[tuple[str, MatchReport]], list[ScanError]]:
    """Scan a directory tree and return the files with at least one match.

    Results come back in deterministic lexicographic path order.
    Unreadable files are collected as errors, never silently skipped.
    """
    root = Path(root)
    if not root.is_dir():
        raise RuleError(f"scan root {root} is not a readable directory")
    compiled = CompiledRuleSet(rules)

    paths: list[Path] = []
    for dirpath, dirnames, filenames in os.walk(root):
        dirnames.sort()
        for name in sorted(filenames):
            path = Path(dirpath) / name
            if extensions and path.suffix.lstrip(".").lower() not in extensions:
                continue
            paths.append(path)
    paths.sort()

    findings: list[tuple[str, MatchReport]] = []
    errors: list[ScanError] = []
    for path in paths:
        try:
            data = path.read_bytes()
        except OSError as exc:
            errors.append(ScanError(path=str(path), reason=str(exc)))
            continue
        report = match_buffer(compiled, data, subject_id=str(path))
        if report:
            findings.append((str(path), report))
    return findings, errors


def load_rules_file(path: str | Path) -> RuleSet:
    text = Path(path).read_text(encoding="utf-8")
    return parse_rules(text)


def load_rules_dir(path: str | Path, suffix: str = ".yar") -> RuleSet:
    """Concatenate every rule file in a directory, sorted by filename."""
    directory = Path(path)
    if not directory.is_dir():
        raise RuleError(f"rules directory {directory} does not exist")
    files = sorted(p for p in directory.iterdir() if p.suffix == suffix)
    if not files:
        raise RuleError(f"no {suffix} files in {directory}")
    combined = "\n".join(p.read_text(encoding="utf-8") for p in files)
    return parse_rules(combined)
