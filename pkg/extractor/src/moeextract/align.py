"""Character-offset alignment between model subtokens and gold POS tags.

The gold side is a CoNLL-U document; the model side is a fast tokenizer's
(start, end) offset per subtoken. Each subtoken inherits the tag of the
word covering its first tagged character; subtokens covering no word (for
example a standalone separator the tokenizer refused to merge) are tagged
X and counted as alignment warnings.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence


class AlignmentError(ValueError):
    """Gold input that cannot be parsed or aligned."""


@dataclass(frozen=True)
class GoldWord:
    surface: str
    upos: str


@dataclass(frozen=True)
class AlignmentResult:
    """Per-subtoken tags, covering-word indices, and the gap count.

    word_indices holds the gold word index for aligned subtokens; gap
    subtokens get synthetic indices starting at len(words) so they never
    collide with a real word when deduplicating by (sentence, word).
    """

    upos: tuple[str, ...]
    word_indices: tuple[int, ...]
    warnings: int


def parse_gold_conllu(text: str) -> list[list[GoldWord]]:
    """Sentences of (surface, UPOS) pairs from a CoNLL-U document.

    Comment lines, multiword-range ids ("3-4"), and empty-node ids ("5.1")
    are skipped. Anything else must have the standard 10 columns.
    """
    sentences: list[list[GoldWord]] = []
    current: list[GoldWord] = []
    for line_number, raw in enumerate(text.split("\n"), start=1):
        line = raw.rstrip("\n")
        if not line.strip():
            if current:
                sentences.append(current)
                current = []
            continue
        if line.startswith("#"):
            continue
        columns = line.split("\t")
        if len(columns) != 10:
            raise AlignmentError(
                f"line {line_number}: expected 10 tab-separated columns, "
                f"got {len(columns)}")
        token_id = columns[0]
        if "-" in token_id or "." in token_id:
            continue  # multiword range or empty node
        current.append(GoldWord(surface=columns[1], upos=columns[3]))
    if current:
        sentences.append(current)
    return sentences


def sentence_layout(words: Sequence[GoldWord]) -> tuple[str, tuple[tuple[int, int], ...]]:
    """The sentence text fed to the tokenizer plus each word's char span.

    Words are joined with single spaces; the spans cover the word
    characters only, never the separators.
    """
    if not words:
        raise AlignmentError("cannot lay out an empty sentence")
    spans: list[tuple[int, int]] = []
    parts: list[str] = []
    cursor = 0
    for word in words:
        if not word.surface:
            raise AlignmentError("cannot lay out an empty word surface")
        start = cursor
        end = start + len(word.surface)
        spans.append((start, end))
        parts.append(word.surface)
        cursor = end + 1  # the joining space
    return " ".join(parts), tuple(spans)


def align_with_gold(offsets: Sequence[tuple[int, int]],
                    words: Sequence[GoldWord]) -> AlignmentResult:
    """Assign each subtoken the tag of the word covering it.

    offsets are half-open (start, end) character spans into the text built
    by sentence_layout(words). A subtoken overlapping a word span (a
    leading separator does not count against it) inherits that word's tag;
    the first overlapping word wins for a subtoken bridging several. A
    subtoken overlapping no word is a gap: tagged X, given a synthetic
    word index, and counted in warnings.
    """
    _, spans = sentence_layout(words)
    tags: list[str] = []
    indices: list[int] = []
    warnings = 0
    for start, end in offsets:
        if end < start:
            raise AlignmentError(f"offset ({start}, {end}) ends before it starts")
        covering = None
        for word_index, (word_start, word_end) in enumerate(spans):
            if start < word_end and end > word_start:
                covering = word_index
                break
        if covering is None:
            tags.append("X")
            indices.append(len(words) + warnings)
            warnings += 1
        else:
            tags.append(words[covering].upos)
            indices.append(covering)
    return AlignmentResult(upos=tuple(tags), word_indices=tuple(indices),
                           warnings=warnings)
