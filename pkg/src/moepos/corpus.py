"""CoNLL-U ingestion, Penn-to-UD tag conversion, corpus distributions, and
token-level splits.

Gold POS annotations are required input; this module never tags text itself.
It accepts any CoNLL-U-style file (10 tab-separated columns, blank line
between sentences, '#' comments).
"""

from __future__ import annotations

from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field

import numpy as np

from .reference import EXCLUDED_FROM_GLOBAL, UD_TAGS


class CorpusError(ValueError):
    """Invalid corpus input."""


class ConlluParseError(CorpusError):
    """Structurally malformed CoNLL-U line."""

    def __init__(self, line_number: int, message: str):
        super().__init__(f"line {line_number}: {message}")
        self.line_number = line_number


@dataclass(frozen=True)
class Word:
    """One annotated word: gold Penn tag plus its UD tag."""

    sentence_id: int
    word_index: int
    surface: str
    xpos: str
    upos: str


@dataclass(frozen=True)
class PosTagset:
    """Ordered UD tag inventory, with the tags left out of global averages."""

    tags: tuple[str, ...] = UD_TAGS
    excluded_from_global: frozenset[str] = frozenset(EXCLUDED_FROM_GLOBAL)

    def __post_init__(self):
        if len(set(self.tags)) != len(self.tags):
            raise CorpusError("duplicate tags in tagset")
        if not self.excluded_from_global <= set(self.tags):
            raise CorpusError("excluded_from_global must be a subset of tags")

    @property
    def included(self) -> tuple[str, ...]:
        return tuple(t for t in self.tags if t not in self.excluded_from_global)

    def index(self, tag: str) -> int:
        return self.tags.index(tag)

    def __contains__(self, tag: str) -> bool:
        return tag in self.tags

    def __len__(self) -> int:
        return len(self.tags)


DEFAULT_TAGSET = PosTagset()

# Penn Treebank -> UD tag conversion, transcribed from the published
# en-penn-uposf table. Embedded statically so runs are reproducible offline.
PENN_TO_UD = {
    "#": "SYM",
    "$": "SYM",
    "''": "PUNCT",
    ",": "PUNCT",
    "-LRB-": "PUNCT",
    "-RRB-": "PUNCT",
    ".": "PUNCT",
    ":": "PUNCT",
    "AFX": "ADJ",
    "CC": "CCONJ",
    "CD": "NUM",
    "DT": "DET",
    "EX": "PRON",
    "FW": "X",
    "HYPH": "PUNCT",
    "IN": "ADP",
    "JJ": "ADJ",
    "JJR": "ADJ",
    "JJS": "ADJ",
    "LS": "X",
    "MD": "VERB",
    "NIL": "X",
    "NN": "NOUN",
    "NNP": "PROPN",
    "NNPS": "PROPN",
    "NNS": "NOUN",
    "PDT": "DET",
    "POS": "PART",
    "PRP": "PRON",
    "PRP$": "DET",
    "RB": "ADV",
    "RBR": "ADV",
    "RBS": "ADV",
    "RP": "ADP",
    "SYM": "SYM",
    "TO": "PART",
    "UH": "INTJ",
    "VB": "VERB",
    "VBD": "VERB",
    "VBG": "VERB",
    "VBN": "VERB",
    "VBP": "VERB",
    "VBZ": "VERB",
    "WDT": "DET",
    "WP": "PRON",
    "WP$": "DET",
    "WRB": "ADV",
    "``": "PUNCT",
}

# Full UD files may carry tags the 15-tag default set collapses away; fold
# them onto the tags the embedded conversion would have produced.
_UD_COLLAPSE = {"AUX": "VERB", "SCONJ": "ADP", "CONJ": "CCONJ"}


def convert_penn_to_ud(xpos: str) -> str:
    """Map a Penn tag to its UD tag; unknown tags fall back to X."""
    return PENN_TO_UD.get(xpos, "X")


def _normalize_upos(upos: str, tagset: PosTagset) -> str:
    if upos in tagset:
        return upos
    return _UD_COLLAPSE.get(upos, "X")


def parse_conllu(text: str, tagset: PosTagset = DEFAULT_TAGSET) -> list[list[Word]]:
    """Parse a CoNLL-U document into sentences of Words.

    Multiword-range lines (id like "3-4") and empty nodes (id like "5.1") are
    skipped. When the UPOS column is filled it is kept (conversion bypassed);
    otherwise the UD tag comes from the XPOS column via the embedded table.
    A line with the wrong column count raises ConlluParseError naming the line.
    """
    sentences: list[list[Word]] = []
    current: list[Word] = []
    for line_number, raw in enumerate(text.split("\n"), start=1):
        line = raw.rstrip("\r")
        if not line.strip():
            if current:
                sentences.append(current)
                current = []
            continue
        if line.startswith("#"):
            continue
        columns = line.split("\t")
        if len(columns) != 10:
            raise ConlluParseError(
                line_number, f"expected 10 tab-separated columns, got {len(columns)}"
            )
        token_id = columns[0]
        if "-" in token_id or "." in token_id:
            continue
        surface, upos_col, xpos = columns[1], columns[3], columns[4]
        if upos_col and upos_col != "_":
            upos = _normalize_upos(upos_col, tagset)
        else:
            upos = convert_penn_to_ud(xpos)
        current.append(
            Word(
                sentence_id=len(sentences),
                word_index=len(current),
                surface=surface,
                xpos=xpos,
                upos=upos,
            )
        )
    if current:
        sentences.append(current)
    return sentences


def parse_tagset_file(text: str) -> PosTagset:
    """Read a tagset override: one tag per line, '!' marks global exclusion."""
    tags: list[str] = []
    excluded: set[str] = set()
    for raw in text.split("\n"):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("!"):
            tag = line[1:].strip()
            excluded.add(tag)
        else:
            tag = line
        tags.append(tag)
    if not tags:
        raise CorpusError("tagset file defines no tags")
    return PosTagset(tags=tuple(tags), excluded_from_global=frozenset(excluded))


@dataclass(frozen=True)
class PosDistribution:
    """Tag fractions over a tagset; values are nonnegative and sum to 1."""

    probabilities: dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        total = sum(self.probabilities.values())
        if abs(total - 1.0) > 1e-9:
            raise CorpusError(f"distribution sums to {total}, not 1")
        if any(v < 0 for v in self.probabilities.values()):
            raise CorpusError("negative probability")

    def as_array(self, tagset: PosTagset) -> np.ndarray:
        return np.array([self.probabilities.get(t, 0.0) for t in tagset.tags])


def _tag_of(item) -> str:
    return item if isinstance(item, str) else item.upos


def corpus_distribution(words: Iterable, tagset: PosTagset = DEFAULT_TAGSET) -> PosDistribution:
    """Tag fractions over a word or token stream.

    Accepts anything carrying a .upos attribute (Words, aligned tokens,
    trace records) or plain tag strings. Whether this is a word-level or a
    token-level distribution is decided by what the caller streams in.
    """
    counts = dict.fromkeys(tagset.tags, 0)
    total = 0
    for item in words:
        tag = _tag_of(item)
        if tag not in counts:
            raise CorpusError(f"tag {tag!r} not in tagset")
        counts[tag] += 1
        total += 1
    if total == 0:
        raise CorpusError("empty input stream")
    return PosDistribution({t: c / total for t, c in counts.items()})


def split_tokens(records: Sequence, ratio: float = 2 / 3, seed: int = 0) -> tuple[list, list]:
    """Deterministic token-level split; subtokens of one word may land apart.

    Train size is round(ratio * n). Same seed, same partition.
    """
    if not 0 < ratio < 1:
        raise CorpusError(f"ratio must be in (0,1), got {ratio}")
    n = len(records)
    if n < 2:
        raise CorpusError(f"need at least 2 records to split, got {n}")
    permutation = np.random.default_rng(seed).permutation(n)
    n_train = int(round(ratio * n))
    train = [records[i] for i in permutation[:n_train]]
    test = [records[i] for i in permutation[n_train:]]
    return train, test
