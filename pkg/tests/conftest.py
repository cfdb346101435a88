"""Shared fixtures and token builders for the test suite."""

from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest

from moepos import moe
from moepos.corpus import DEFAULT_TAGSET
from moepos.reference import REFERENCE_POS_COUNTS
from moepos.tokenizer import AlignedToken

DATA_DIR = Path(__file__).parent / "data"

# 15 distinct ordered expert pairs over 8 experts, one per default tag; used
# to plant a POS signal at a single layer.
ORACLE_PAIRS = (
    (0, 1), (0, 2), (0, 3), (0, 4), (0, 5), (0, 6), (0, 7),
    (1, 0), (1, 2), (1, 3), (1, 4), (1, 5), (1, 6),
    (2, 0), (2, 1),
)


def reference_proportions(tagset=DEFAULT_TAGSET) -> np.ndarray:
    props = np.array([REFERENCE_POS_COUNTS[t] for t in tagset.tags], dtype=float)
    return props / props.sum()


def proportional_tokens(n: int, seed: int, tagset=DEFAULT_TAGSET) -> list[AlignedToken]:
    """n tokens with tags sampled at the reference corpus proportions."""
    rng = np.random.default_rng(seed)
    tag_indices = rng.choice(len(tagset.tags), size=n, p=reference_proportions(tagset))
    token_ids = rng.integers(0, 5000, size=n)
    return [
        AlignedToken(
            token_id=int(token_ids[i]),
            surface=f"w{i}",
            sentence_id=i // 20,
            word_index=i % 20,
            upos=tagset.tags[int(t)],
        )
        for i, t in enumerate(tag_indices)
    ]


def balanced_tokens(per_tag: int, tagset=DEFAULT_TAGSET) -> list[AlignedToken]:
    """per_tag tokens of every tag, interleaved."""
    tokens = []
    for i in range(per_tag * len(tagset.tags)):
        tag = tagset.tags[i % len(tagset.tags)]
        tokens.append(
            AlignedToken(
                token_id=i % 97,
                surface=f"{tag.lower()}{i // len(tagset.tags)}",
                sentence_id=i // 20,
                word_index=i % 20,
                upos=tag,
            )
        )
    return tokens


class OracleFirstLayerRouter(moe.SyntheticRouter):
    """POS-determined experts at layer 0, uniform-random everywhere else."""

    name = "oracle_first_layer"

    def __init__(self, pair_by_tag: dict, seed: int = 0):
        self.pair_by_tag = {tag: np.asarray(pair) for tag, pair in pair_by_tag.items()}
        self.seed = seed

    def assign(self, tokens, n_layers, n_experts, k):
        n = len(tokens)
        rng = np.random.default_rng(self.seed)
        noise = rng.random((n, n_layers, n_experts))
        idx = np.argsort(noise, axis=2)[:, :, :k]
        for t, token in enumerate(tokens):
            idx[t, 0] = self.pair_by_tag[token.upos]
        return idx, self._uniform_gates(n, n_layers, k)


def rel_close(a: float, b: float, rel: float = 1e-9) -> bool:
    return abs(a - b) <= rel * max(1.0, abs(a), abs(b))


@pytest.fixture
def small_conllu_text() -> str:
    return (DATA_DIR / "small.conllu").read_text(encoding="utf-8")
