"""Session fixtures: a tiny randomly initialized MoE checkpoint with a
matching fast tokenizer, built locally so no network access is needed."""

from __future__ import annotations

from pathlib import Path

import pytest
import torch

_DATA_DIR = Path(__file__).parent / "data"


@pytest.fixture(scope="session")
def gold_path() -> Path:
    return _DATA_DIR / "gold10.conllu"


@pytest.fixture(scope="session")
def checkpoint_shape() -> dict[str, int]:
    return {"n_layers": 2, "n_experts": 4, "k": 2}


def _save_tokenizer(directory: Path, texts: list[str]) -> int:
    from tokenizers import ByteLevelBPETokenizer
    from transformers import PreTrainedTokenizerFast

    # 380 entries is the sweet spot for this corpus: every space merges
    # into the following token (no unalignable space-only tokens), while
    # two dozen words still split into multiple subtokens.
    backend = ByteLevelBPETokenizer()
    backend.train_from_iterator(texts, vocab_size=380, min_frequency=1,
                                special_tokens=["<pad>"])
    fast = PreTrainedTokenizerFast(tokenizer_object=backend, pad_token="<pad>")
    fast.save_pretrained(directory)
    return len(fast)


@pytest.fixture(scope="session")
def checkpoint_dir(tmp_path_factory, gold_path, checkpoint_shape) -> Path:
    from transformers import MixtralConfig, MixtralForCausalLM

    from moeextract.align import parse_gold_conllu, sentence_layout

    directory = tmp_path_factory.mktemp("tiny_mixtral")
    sentences = parse_gold_conllu(gold_path.read_text(encoding="utf-8"))
    vocab_len = _save_tokenizer(directory,
                                [sentence_layout(words)[0] for words in sentences])

    config = MixtralConfig(
        vocab_size=max(vocab_len, 300),
        hidden_size=32,
        intermediate_size=64,
        num_hidden_layers=checkpoint_shape["n_layers"],
        num_attention_heads=4,
        num_key_value_heads=2,
        num_local_experts=checkpoint_shape["n_experts"],
        num_experts_per_tok=checkpoint_shape["k"],
        max_position_embeddings=128,
    )
    torch.manual_seed(0)
    MixtralForCausalLM(config).save_pretrained(directory)
    return directory
