"""Opcode listings and index vectorization.

Two textual disassembly frontends are parsed here: VLD dumps for PHP
(``php -d vld.active=1``) and CIL disassembly for .NET. Listings are
turned into fixed-length vectors of 1-based vocabulary indices, with 0
reserved for padding so the first opcode is never confused with pad.
"""

from __future__ import annotations

import csv
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path


class OpcodeError(Exception):
    pass


@dataclass(frozen=True)
class OpcodeVocabulary:
    """Ordered mnemonic list; index of a mnemonic is its 1-based position."""

    mnemonics: tuple[str, ...]
    language: str = "custom"

    def __post_init__(self):
        if not self.mnemonics:
            raise OpcodeError("vocabulary is empty")
        if len(set(self.mnemonics)) != len(self.mnemonics):
            raise OpcodeError("vocabulary contains duplicate mnemonics")
        object.__setattr__(
            self, "_index", {m: i + 1 for i, m in enumerate(self.mnemonics)})

    def __len__(self) -> int:
        return len(self.mnemonics)

    def index_of(self, mnemonic: str) -> int | None:
        """1-based index, or None when the mnemonic is out of vocabulary."""
        return self._index.get(mnemonic)


@dataclass
class OpcodeListing:
    mnemonics: list[str]
    source_id: str = "<text>"


@dataclass(frozen=True)
class OciVector:
    """Zero-padded vector of 1-based opcode indices (padding is a suffix)."""

    indices: tuple[int, ...]

    def __len__(self) -> int:
        return len(self.indices)


def load_vocabulary(path: str | Path, language: str = "custom") -> OpcodeVocabulary:
    """Load a one-mnemonic-per-line vocabulary file. '#' starts a comment."""
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    mnemonics = []
    for raw in lines:
        entry = raw.split("#", 1)[0].strip()
        if entry:
            mnemonics.append(entry)
    if not mnemonics:
        raise OpcodeError(f"vocabulary file {path} has no mnemonics")
    seen = set()
    for m in mnemonics:
        if m in seen:
            raise OpcodeError(f"duplicate mnemonic {m!r} in {path}")
        seen.add(m)
    return OpcodeVocabulary(tuple(mnemonics), language=language)


def builtin_vocabulary(language: str) -> OpcodeVocabulary:
    """The vocabularies shipped with the package ("php" and "cil")."""
    names = {"php": "php_opcodes.txt", "cil": "cil_opcodes.txt"}
    if language not in names:
        raise OpcodeError(f"no built-in vocabulary for language {language!r}")
    ref = resources.files("wsdetect.data").joinpath(names[language])
    with resources.as_file(ref) as path:
        return load_vocabulary(path, language=language)


# --- disassembly frontends -------------------------------------------------

# A VLD opcode cell: all-caps token of length >= 2 (ECHO, INIT_FCALL, ...).
_VLD_OP = re.compile(r"^[A-Z][A-Z0-9_]+$")

# CIL instruction: an IL_xxxx label, a colon, then the mnemonic.
_CIL_INSTR = re.compile(r"IL_[0-9A-Fa-f]{4}\s*:\s*([A-Za-z][A-Za-z0-9.]*)")


def parse_vld(text: str, source_id: str = "<vld>") -> OpcodeListing:
    """Extract the opcode column from a VLD dump, one mnemonic per op row.

    Op rows look like ``   2     0  E >   ECHO  'hi'``; banner, header
    and branch-summary lines carry no all-caps opcode token and are
    skipped. Lines with no recognizable opcode are never an error.
    """
    mnemonics: list[str] = []
    for line in text.splitlines():
        tokens = line.split()
        saw_number = False
        for token in tokens:
            if _VLD_OP.match(token):
                # require an op/line number earlier in the row so stray
                # caps words in free text do not register
                if saw_number:
                    mnemonics.append(token)
                break
            if token.isdigit():
                saw_number = True
    return OpcodeListing(mnemonics, source_id=source_id)


def parse_cil(text: str, source_id: str = "<cil>") -> OpcodeListing:
    """Extract CIL mnemonics, one per ``IL_xxxx:`` label, in label order.

    Directives (``.maxstack``, ``.locals``, ``.custom``) and operand
    text never match the instruction shape and are skipped. Works on
    line-wrapped disassembly since the scan is not line-based.
    """
    mnemonics = [m.group(1) for m in _CIL_INSTR.finditer(text)]
    return OpcodeListing(mnemonics, source_id=source_id)


_PARSERS = {"php": parse_vld, "cil": parse_cil}


def parse_listing(text: str, language: str, source_id: str = "<text>") -> OpcodeListing:
    try:
        parser = _PARSERS[language]
    except KeyError:
        raise OpcodeError(f"unknown opcode language {language!r}") from None
    return parser(text, source_id=source_id)


# --- vectorization ---------------------------------------------------------

def oiva(listing: OpcodeListing, vocab: OpcodeVocabulary, max_length: int) -> OciVector:
    """Map a listing to its fixed-length index vector.

    Listing entries are matched as whole tokens against the vocabulary;
    out-of-vocabulary entries contribute nothing. The index sequence is
    right-padded with 0 to ``max_length``; sequences longer than that
    keep their first ``max_length`` indices.
    """
    if max_length < 1:
        raise OpcodeError("max_length must be >= 1")
    indices: list[int] = []
    for mnemonic in listing.mnemonics:
        idx = vocab.index_of(mnemonic)
        if idx is not None:
            indices.append(idx)
            if len(indices) == max_length:
                break
    indices.extend([0] * (max_length - len(indices)))
    return OciVector(tuple(indices))


@dataclass
class VectorizeFailure:
    path: str
    reason: str


@dataclass
class VectorizedCorpus:
    vectors: list[OciVector]
    labels: list[int]
    paths: list[str]
    failures: list[VectorizeFailure] = field(default_factory=list)


def vectorize_corpus(items: list[tuple[str | Path, int]], language: str,
                     vocab: OpcodeVocabulary, max_length: int) -> VectorizedCorpus:
    """Vectorize (path, label) disassembly files; row order = input order.

    Unreadable files are recorded as failures and the batch continues.
    """
    corpus = VectorizedCorpus(vectors=[], labels=[], paths=[])
    for path, label in items:
        try:
            text = Path(path).read_text(encoding="utf-8", errors="replace")
        except OSError as exc:
            corpus.failures.append(VectorizeFailure(path=str(path), reason=str(exc)))
            continue
        listing = parse_listing(text, language, source_id=str(path))
        corpus.vectors.append(oiva(listing, vocab, max_length))
        corpus.labels.append(label)
        corpus.paths.append(str(path))
    return corpus


def write_corpus_csv(corpus: VectorizedCorpus, path: str | Path) -> None:
    """CSV layout: path,label,oci_0..oci_{max_length-1}."""
    if not corpus.vectors:
        raise OpcodeError("nothing to write: corpus is empty")
    width = len(corpus.vectors[0])
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["path", "label"] + [f"oci_{i}" for i in range(width)])
        for p, label, vec in zip(corpus.paths, corpus.labels, corpus.vectors):
            writer.writerow([p, label, *vec.indices])


def read_corpus_csv(path: str | Path) -> VectorizedCorpus:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[:2] != ["path", "label"]:
            raise OpcodeError(f"{path}: not a vectorized-corpus CSV")
        corpus = VectorizedCorpus(vectors=[], labels=[], paths=[])
        for row in reader:
            corpus.paths.append(row[0])
            corpus.labels.append(int(row[1]))
            corpus.vectors.append(OciVector(tuple(int(v) for v in row[2:])))
    return corpus
