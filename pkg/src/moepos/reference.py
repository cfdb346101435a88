"""Reference constants: the default UD tagset and published scores for six
production MoE checkpoints.

The published numbers are measurements reported for large open-weight models
(7B-132B parameters, closed evaluation corpora). They are not reproducible at
toy scale and are used only as context footers in generated reports; nothing
in this package asserts against them.
"""

from __future__ import annotations

# The 15 UD tags this toolkit works with by default, ordered by ascending
# frequency in the reference corpus sample below. SYM and X are excluded from
# global specialization averages (each under 0.1% of tokens).
UD_TAGS = (
    "SYM", "X", "INTJ", "PART", "CCONJ", "NUM", "PRON", "ADV",
    "ADJ", "PUNCT", "DET", "ADP", "PROPN", "VERB", "NOUN",
)
EXCLUDED_FROM_GLOBAL = ("SYM", "X")

# Token counts per UD tag in a 5000-sentence English news/web sample
# (116,379 tokens). Used to sample synthetic corpora with a realistic tag
# distribution and echoed in ingest-report footers.
REFERENCE_POS_COUNTS = {
    "SYM": 82,
    "X": 84,
    "INTJ": 1347,
    "PART": 2675,
    "CCONJ": 2760,
    "NUM": 2791,
    "PRON": 4435,
    "ADV": 5530,
    "ADJ": 7125,
    "PUNCT": 11237,
    "DET": 11695,
    "ADP": 11982,
    "PROPN": 15547,
    "VERB": 18091,
    "NOUN": 20998,
}

def reference_pos_proportions() -> dict[str, float]:
    total = sum(REFERENCE_POS_COUNTS.values())
    return {tag: count / total for tag, count in REFERENCE_POS_COUNTS.items()}


# Published per-model scores: MLP probe accuracy on routing paths (top_k uses
# all routed experts, top_1 only the highest-gate expert), mean specialization
# Spec, uniform expectation U = 100*k/N, and delta = Spec - U.
# Shape fields: (n_layers, n_experts, k).
PUBLISHED_MODEL_SCORES = {
    "dbrx-base": {
        "shape": (40, 16, 4), "mlp_top_k": 0.86, "mlp_top_1": 0.83,
        "spec": 51.87, "u": 25.0, "delta_u": 26.87,
    },
    "Mixtral-8x7B-v0.1": {
        "shape": (32, 8, 2), "mlp_top_k": 0.84, "mlp_top_1": 0.83,
        "spec": 50.21, "u": 25.0, "delta_u": 25.21,
    },
    "Phi-3.5-MoE-instruct": {
        "shape": (32, 16, 2), "mlp_top_k": 0.89, "mlp_top_1": 0.88,
        "spec": 48.49, "u": 12.5, "delta_u": 35.99,
    },
    "deepseek-moe-16b-base": {
        "shape": (28, 64, 6), "mlp_top_k": 0.80, "mlp_top_1": 0.80,
        "spec": 43.60, "u": 9.4, "delta_u": 34.20,
    },
    "Qwen1.5-MoE-A2.7B": {
        "shape": (24, 60, 4), "mlp_top_k": 0.82, "mlp_top_1": 0.79,
        "spec": 38.85, "u": 6.7, "delta_u": 32.15,
    },
    "OLMoE-1B-7B": {
        "shape": (16, 64, 8), "mlp_top_k": 0.75, "mlp_top_1": 0.72,
        "spec": 48.82, "u": 12.5, "delta_u": 36.32,
    },
}

# Published KL-divergence summaries (nats) for the same models: average over
# layers of the per-layer min / max / mean divergence across experts.
PUBLISHED_KL_STATS = {
    "dbrx-base": (0.047, 0.55, 0.21),
    "Mixtral-8x7B-v0.1": (0.11, 0.40, 0.23),
    "Phi-3.5-MoE-instruct": (0.14, 1.49, 0.60),
    "deepseek-moe-16b-base": (0.10, 1.73, 0.60),
    "Qwen1.5-MoE-A2.7B": (0.16, 1.92, 0.73),
    "OLMoE-1B-7B": (0.04, 1.52, 0.53),
}

# Published layer-maximum specialization for four tags on Phi-3.5-MoE-instruct.
PUBLISHED_MAX_SPEC_PHI = {
    "NOUN": 61.20, "VERB": 61.76, "PUNCT": 84.53, "ADJ": 58.39,
}

# Published accuracy of the word-form majority baseline on the reference corpus.
PUBLISHED_BASELINE_ACCURACY = 0.91


def reference_footer() -> str:
    """Markdown footer citing the published production-model measurements.

    Appended to generated reports so toy-scale numbers can be eyeballed
    against real-model behavior. These values are reference points, not
    targets: this toolkit never tries to reproduce them.
    """
    lines = [
        "---",
        "",
        "### Reference: published production-model measurements (not reproduced here)",
        "",
        "| model | layers | experts | k | MLP top_k | MLP top_1 | Spec | U | dU | KL uMin | KL uMax | KL uMean |",
        "|---|---|---|---|---|---|---|---|---|---|---|---|",
    ]
    for name, s in PUBLISHED_MODEL_SCORES.items():
        L, N, k = s["shape"]
        kmin, kmax, kmean = PUBLISHED_KL_STATS[name]
        lines.append(
            f"| {name} | {L} | {N} | {k} | {s['mlp_top_k']:.2f} | {s['mlp_top_1']:.2f} "
            f"| {s['spec']:.2f} | {s['u']} | {s['delta_u']:.2f} "
            f"| {kmin} | {kmax} | {kmean} |"
        )
    phi = ", ".join(f"{t} {v:.2f}" for t, v in PUBLISHED_MAX_SPEC_PHI.items())
    lines += [
        "",
        f"Layer-maximum specialization on Phi-3.5-MoE-instruct: {phi}.",
        f"Word-form majority baseline on the reference corpus: "
        f"{PUBLISHED_BASELINE_ACCURACY:.2f}.",
        "",
    ]
    return "\n".join(lines)
