"""Deterministic byte-level BPE and subtoken-to-word POS alignment.

A word enters BPE as a word-initial marker byte followed by its UTF-8 bytes,
so pieces look like "_human" / "ities". Token texts are byte strings rendered
one char per byte (latin-1), which keeps JSON round trips exact for arbitrary
input bytes.
"""

from __future__ import annotations

import hashlib
import json
from collections import Counter
from dataclasses import dataclass, field

WORD_MARKER = "_"
UNK_TEXT = "<unk>"
_ALPHABET_SIZE = 256


class TokenizerError(ValueError):
    """Invalid tokenizer configuration or input."""


@dataclass(frozen=True)
class AlignedToken:
    """One subtoken carrying its parent word's POS tag."""

    token_id: int
    surface: str
    sentence_id: int
    word_index: int
    upos: str


@dataclass
class SubwordVocab:
    """Learned merges plus the token-text -> id table.

    Ids are dense: bytes 0..255 map to ids 0..255, the UNK sentinel follows,
    then one id per merge in learned order. Applying merges greedily in rank
    order makes tokenization a pure function of the vocab.
    """

    merges: list[tuple[str, str]] = field(default_factory=list)
    vocab: dict[str, int] = field(default_factory=dict)
    unk_id: int = _ALPHABET_SIZE

    def token_id(self, text: str) -> int:
        return self.vocab.get(text, self.unk_id)

    @property
    def identifier(self) -> str:
        digest = hashlib.sha256(
            json.dumps(self.merges, ensure_ascii=True).encode()
        ).hexdigest()[:8]
        return f"bpe-{len(self.vocab)}-{digest}"

    def to_json(self) -> str:
        return json.dumps(
            {"merges": [list(m) for m in self.merges], "vocab": self.vocab, "unk": self.unk_id},
            ensure_ascii=True,
        )

    @classmethod
    def from_json(cls, text: str) -> "SubwordVocab":
        data = json.loads(text)
        return cls(
            merges=[tuple(m) for m in data["merges"]],
            vocab={k: int(v) for k, v in data["vocab"].items()},
            unk_id=int(data["unk"]),
        )


def _base_vocab() -> dict[str, int]:
    vocab = {chr(b): b for b in range(_ALPHABET_SIZE)}
    vocab[UNK_TEXT] = _ALPHABET_SIZE
    return vocab


def _word_symbols(surface: str) -> list[str]:
    raw = (WORD_MARKER + surface).encode("utf-8")
    return [chr(b) for b in raw]


def _merge_sequence(symbols: list[str], left: str, right: str) -> list[str]:
    merged: list[str] = []
    i = 0
    while i < len(symbols):
        if i + 1 < len(symbols) and symbols[i] == left and symbols[i + 1] == right:
            merged.append(left + right)
            i += 2
        else:
            merged.append(symbols[i])
            i += 1
    return merged


def train_bpe(words, vocab_size: int, seed: int = 0) -> SubwordVocab:
    """Learn up to vocab_size - 256 merges by highest pair frequency.

    Ties break lexicographically on the (left, right) pair, so training is
    fully deterministic; the seed parameter is accepted for interface
    uniformity but never consulted.
    """
    del seed
    if vocab_size < _ALPHABET_SIZE:
        raise TokenizerError(
            f"vocab_size {vocab_size} below byte alphabet size {_ALPHABET_SIZE}"
        )
    word_counts = Counter(str(w) for w in words)
    sequences = {w: _word_symbols(w) for w in word_counts}

    merges: list[tuple[str, str]] = []
    vocab = _base_vocab()
    for _ in range(vocab_size - _ALPHABET_SIZE):
        pair_counts: Counter = Counter()
        for word, symbols in sequences.items():
            count = word_counts[word]
            for a, b in zip(symbols, symbols[1:]):
                pair_counts[(a, b)] += count
        if not pair_counts:
            break
        best_count = max(pair_counts.values())
        left, right = min(p for p, c in pair_counts.items() if c == best_count)
        merges.append((left, right))
        vocab[left + right] = len(vocab)
        for word in sequences:
            sequences[word] = _merge_sequence(sequences[word], left, right)
    return SubwordVocab(merges=merges, vocab=vocab, unk_id=_ALPHABET_SIZE)


def tokenize_word(vocab: SubwordVocab, surface: str) -> list[str]:
    """Split one word into subword texts; concatenating them restores the
    marker-prefixed UTF-8 bytes of the word."""
    symbols = _word_symbols(surface)
    for left, right in vocab.merges:
        if len(symbols) < 2:
            break
        symbols = _merge_sequence(symbols, left, right)
    return symbols


def tokenize_word_ids(vocab: SubwordVocab, surface: str) -> list[int]:
    return [vocab.token_id(t) for t in tokenize_word(vocab, surface)]


def detokenize(token_texts) -> str:
    """Inverse of tokenize_word: rebuild the original word surface."""
    raw = bytes("".join(token_texts), "latin-1")
    if raw[:1] == WORD_MARKER.encode():
        raw = raw[1:]
    return raw.decode("utf-8")


def align_pos(sentences, vocab: SubwordVocab) -> list[AlignedToken]:
    """Tokenize parsed sentences; every subtoken inherits its word's tag.

    Output order is word order, then subtoken order within the word.
    """
    aligned: list[AlignedToken] = []
    for sentence in sentences:
        for word in sentence:
            for text in tokenize_word(vocab, word.surface):
                aligned.append(
                    AlignedToken(
                        token_id=vocab.token_id(text),
                        surface=text,
                        sentence_id=word.sentence_id,
                        word_index=word.word_index,
                        upos=word.upos,
                    )
                )
    return aligned


def word_level_tokens(sentences) -> list[AlignedToken]:
    """One token per word, for synthetic traces without a trained vocab.

    Token ids are a stable hash of the surface so identical word forms share
    an id across runs.
    """
    aligned = []
    for sentence in sentences:
        for word in sentence:
            digest = hashlib.blake2b(word.surface.encode("utf-8"), digest_size=4).digest()
            aligned.append(
                AlignedToken(
                    token_id=int.from_bytes(digest, "little") % (1 << 31),
                    surface=word.surface,
                    sentence_id=word.sentence_id,
                    word_index=word.word_index,
                    upos=word.upos,
                )
            )
    return aligned
