"""Dump per-token expert-routing traces from an open-weight MoE checkpoint.

The output is `.trace.jsonl`: line one is a header object (model name,
layer/expert/top-k shape, tokenizer id, tagset), every further line is one
subtoken's record with its per-layer [expert, gate] pairs. Router logits
are captured with forward hooks on the gate linears found by a module-name
pattern, so no model-specific code paths are needed; the recorded gate
weights are the softmax over the k kept logits (descending), which equals
the full softmax renormalized over the selected experts.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from transformers import AutoModelForCausalLM, AutoTokenizer

from .align import GoldWord, align_with_gold, parse_gold_conllu, sentence_layout

# Tag order is part of the wire format shared with the analysis toolkit.
UD_TAGS = (
    "SYM", "X", "INTJ", "PART", "CCONJ", "NUM", "PRON", "ADV",
    "ADJ", "PUNCT", "DET", "ADP", "PROPN", "VERB", "NOUN",
)

DEFAULT_ROUTER_PATTERN = r"model\.layers\.(\d+)\.(?:mlp|block_sparse_moe|moe)\.gate"

_DTYPES = {
    "float32": torch.float32,
    "float16": torch.float16,
    "bfloat16": torch.bfloat16,
}

_EXPERT_COUNT_FIELDS = ("num_local_experts", "num_experts", "n_routed_experts")
_TOP_K_FIELDS = ("num_experts_per_tok", "num_experts_per_token", "moe_top_k")


class ExtractorError(ValueError):
    """Checkpoint, pattern, or corpus input the extractor cannot use."""


@dataclass(frozen=True)
class ExtractorConfig:
    """Everything one dump needs; mirrored one-to-one by the CLI flags."""

    model: str
    corpus: str
    output: str
    device: str = "cpu"
    precision: str = "float32"
    router_pattern: str = DEFAULT_ROUTER_PATTERN
    exclude_shared: bool = True


@dataclass(frozen=True)
class DumpReport:
    path: Path
    n_records: int
    alignment_warnings: int
    n_layers: int
    n_experts: int
    k: int


def _quantize(weight: float) -> float:
    return float(f"{weight:.6g}")


def _model_shape(model_config) -> tuple[int, int]:
    """(n_experts, k) from the checkpoint config; k must not exceed N."""
    n_experts = next((getattr(model_config, f) for f in _EXPERT_COUNT_FIELDS
                      if getattr(model_config, f, None) is not None), None)
    k = next((getattr(model_config, f) for f in _TOP_K_FIELDS
              if getattr(model_config, f, None) is not None), None)
    if n_experts is None or k is None:
        raise ExtractorError(
            "checkpoint config exposes no expert-count/top-k fields; looked for "
            f"{_EXPERT_COUNT_FIELDS} and {_TOP_K_FIELDS}")
    if not 1 <= k <= n_experts:
        raise ExtractorError(f"checkpoint config has k={k} experts per token "
                             f"but only {n_experts} experts")
    return int(n_experts), int(k)


def _find_router_modules(model, pattern: str, exclude_shared: bool) -> dict[int, torch.nn.Module]:
    """Layer index -> router module, by full-name match against the pattern.

    The pattern must capture the layer index as group 1. When no module
    matches, the error lists plausible candidates so the right pattern can
    be read straight off the checkpoint.
    """
    try:
        compiled = re.compile(pattern)
    except re.error as exc:
        raise ExtractorError(f"bad router pattern {pattern!r}: {exc}") from exc
    routers: dict[int, torch.nn.Module] = {}
    for name, module in model.named_modules():
        match = compiled.fullmatch(name)
        if not match:
            continue
        if exclude_shared and "shared" in name.lower():
            continue
        if not match.groups():
            raise ExtractorError(
                f"router pattern {pattern!r} must capture the layer index as group 1")
        layer = int(match.group(1))
        if layer in routers:
            raise ExtractorError(f"router pattern {pattern!r} matched two modules "
                                 f"for layer {layer}")
        routers[layer] = module
    if not routers:
        candidates = [name for name, _ in model.named_modules()
                      if "gate" in name.lower() or "router" in name.lower()]
        raise ExtractorError(
            f"router pattern {pattern!r} matched no modules; candidates: "
            f"{candidates[:20]}")
    return routers


def _hook_logits(store: dict, layer: int):
    def hook(_module, _inputs, output):
        logits = output[0] if isinstance(output, tuple) else output
        store[layer] = logits.detach().to(torch.float64).cpu().numpy()
    return hook


def _top_k_pairs(row: np.ndarray, k: int) -> list[list]:
    """[expert, gate] pairs: top-k logits (ties to the lower index), then
    softmax over the kept logits only."""
    order = np.argsort(-row, kind="stable")[:k]
    kept = row[order]
    shifted = np.exp(kept - kept.max())
    gates = shifted / shifted.sum()
    return [[int(e), _quantize(float(g))] for e, g in zip(order, gates)]


def _header_line(model_name: str, n_layers: int, n_experts: int, k: int,
                 tokenizer_id: str) -> str:
    payload = {
        "model_name": model_name,
        "n_layers": n_layers,
        "n_experts": n_experts,
        "k": k,
        "tokenizer_id": tokenizer_id,
        "tagset": list(UD_TAGS),
    }
    return json.dumps(payload, separators=(",", ":"), ensure_ascii=False)


def _record_line(sid: int, wid: int, tok: str, tid: int, pos: str,
                 layers: list[list[list]]) -> str:
    payload = {"sid": sid, "wid": wid, "tok": tok, "tid": tid, "pos": pos,
               "layers": layers}
    return json.dumps(payload, separators=(",", ":"), ensure_ascii=False)


def dump_traces(config: ExtractorConfig) -> DumpReport:
    """Run the checkpoint over the gold corpus and write the routing trace."""
    if config.precision not in _DTYPES:
        raise ExtractorError(f"precision must be one of {sorted(_DTYPES)}, "
                             f"got {config.precision!r}")
    sentences = parse_gold_conllu(Path(config.corpus).read_text(encoding="utf-8"))
    if not sentences:
        raise ExtractorError(f"{config.corpus}: no sentences parsed")
    for words in sentences:
        for word in words:
            if word.upos not in UD_TAGS:
                raise ExtractorError(f"gold tag {word.upos!r} is outside the "
                                     "trace tagset")

    tokenizer = AutoTokenizer.from_pretrained(config.model)
    if not getattr(tokenizer, "is_fast", False):
        raise ExtractorError("subtoken alignment needs a fast tokenizer "
                             "with offset mappings")
    model = AutoModelForCausalLM.from_pretrained(
        config.model, dtype=_DTYPES[config.precision])
    model = model.to(config.device).eval()
    n_experts, k = _model_shape(model.config)
    routers = _find_router_modules(model, config.router_pattern,
                                   config.exclude_shared)
    layer_order = sorted(routers)
    n_layers = len(layer_order)

    captured: dict[int, np.ndarray] = {}
    handles = [routers[layer].register_forward_hook(_hook_logits(captured, layer))
               for layer in layer_order]

    destination = Path(config.output)
    destination.parent.mkdir(parents=True, exist_ok=True)
    model_name = Path(config.model).name or config.model
    tokenizer_id = f"{Path(tokenizer.name_or_path).name or 'tokenizer'}-vocab{len(tokenizer)}"

    n_records = 0
    total_warnings = 0
    try:
        with destination.open("w", encoding="utf-8") as sink:
            sink.write(_header_line(model_name, n_layers, n_experts, k,
                                    tokenizer_id) + "\n")
            for sid, words in enumerate(sentences):
                text, _ = sentence_layout(words)
                encoding = tokenizer(text, add_special_tokens=False,
                                     return_offsets_mapping=True)
                token_ids = encoding["input_ids"]
                if not token_ids:
                    raise ExtractorError(f"sentence {sid} tokenized to nothing")
                alignment = align_with_gold(encoding["offset_mapping"], words)
                total_warnings += alignment.warnings

                captured.clear()
                with torch.no_grad():
                    model(torch.tensor([token_ids], device=config.device))
                missing = [layer for layer in layer_order if layer not in captured]
                if missing:
                    raise ExtractorError(f"forward pass produced no router logits "
                                         f"for layers {missing}")

                per_layer = []
                for layer in layer_order:
                    logits = captured[layer].reshape(-1, captured[layer].shape[-1])
                    if logits.shape != (len(token_ids), n_experts):
                        raise ExtractorError(
                            f"layer {layer} router logits have shape "
                            f"{logits.shape}, expected {(len(token_ids), n_experts)}")
                    per_layer.append(logits)

                texts = tokenizer.convert_ids_to_tokens(token_ids)
                for position, tid in enumerate(token_ids):
                    layers = [_top_k_pairs(per_layer[li][position], k)
                              for li in range(n_layers)]
                    sink.write(_record_line(
                        sid, alignment.word_indices[position], texts[position],
                        int(tid), alignment.upos[position], layers) + "\n")
                    n_records += 1
    finally:
        for handle in handles:
            handle.remove()

    return DumpReport(path=destination, n_records=n_records,
                      alignment_warnings=total_warnings, n_layers=n_layers,
                      n_experts=n_experts, k=k)
