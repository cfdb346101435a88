"""Routing specialization statistics.

The counting unit everywhere is the routing EVENT: one (token, selected
expert) pair at one layer, so a token contributes k events per layer and the
uniform baseline for any top-k capture is exactly 100*k/N percent.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .corpus import EXCLUDED_FROM_GLOBAL, PosDistribution, PosTagset
from .reference import reference_footer
from .trace import TokenRecord, TraceHeader


class MetricsError(ValueError):
    """Metric undefined for this input."""


@dataclass
class AssignmentCounts:
    """Routing-event counts, shape (layers, experts, tags)."""

    counts: np.ndarray
    tagset: PosTagset

    @property
    def n_layers(self) -> int:
        return self.counts.shape[0]

    @property
    def n_experts(self) -> int:
        return self.counts.shape[1]


@dataclass
class SpecReport:
    """Per-POS/layer capture percentages and their corpus-level summaries."""

    spec_matrix: np.ndarray
    spec_pos: dict[str, float | None]
    spec_pos_max: dict[str, tuple[float, int] | None]
    global_score: float
    u: float
    delta_u: float
    k: int
    tagset: PosTagset


@dataclass
class KlReport:
    """Per-(layer, expert) divergence from the corpus POS distribution.

    Experts with no assignments at a layer hold NaN and are excluded from
    that layer's min/max/mean.
    """

    kl_matrix: np.ndarray
    mu_min: float
    mu_max: float
    mu_mean: float


def tagset_from_header(header: TraceHeader) -> PosTagset:
    return PosTagset(
        tags=header.tagset,
        excluded_from_global=frozenset(EXCLUDED_FROM_GLOBAL) & set(header.tagset),
    )


def count_assignments(header: TraceHeader, records) -> AssignmentCounts:
    """Tally one event per (token, layer, selected expert) from a validated
    record stream."""
    tagset = tagset_from_header(header)
    tag_index = {tag: i for i, tag in enumerate(tagset.tags)}
    counts = np.zeros((header.n_layers, header.n_experts, len(tagset)), dtype=np.int64)
    n_experts = header.n_experts
    for record in records:
        if record.upos not in tag_index:
            raise MetricsError(f"tag {record.upos!r} not in trace tagset")
        p = tag_index[record.upos]
        if len(record.layers) != header.n_layers:
            raise MetricsError("record layer count does not match header")
        for l, layer in enumerate(record.layers):
            for e, _ in layer:
                if not 0 <= e < n_experts:
                    raise MetricsError(f"expert index {e} out of range")
                counts[l, e, p] += 1
    return AssignmentCounts(counts=counts, tagset=tagset)


def spec_pos_layer(counts: AssignmentCounts, pos: str, layer: int, k: int) -> float | None:
    """Percentage of a POS's routing events captured by its k busiest experts
    at one layer; None when the POS never occurs at that layer."""
    p = counts.tagset.index(pos)
    vec = counts.counts[layer, :, p]
    total = int(vec.sum())
    if total == 0:
        return None
    order = np.argsort(-vec, kind="stable")
    top = int(vec[order[:k]].sum())
    return 100.0 * top / total


def spec_pos(counts: AssignmentCounts, pos: str, k: int) -> float:
    """Mean of the defined per-layer scores for one POS."""
    values = [spec_pos_layer(counts, pos, l, k) for l in range(counts.n_layers)]
    defined = [v for v in values if v is not None]
    if not defined:
        raise MetricsError(f"POS {pos!r} has no routing events at any layer")
    return float(np.mean(defined))


def spec_global(counts: AssignmentCounts, tagset: PosTagset, k: int) -> float:
    """Unweighted mean of spec_pos over the tags counted in global scores.

    Tags absent from the trace contribute nothing (their score is undefined).
    """
    scores = []
    for tag in tagset.included:
        try:
            scores.append(spec_pos(counts, tag, k))
        except MetricsError:
            continue
    if not scores:
        raise MetricsError("no included POS has any routing events")
    return float(np.mean(scores))


def uniform_expectation(k: int, n_experts: int) -> float:
    """Capture percentage expected when routing ignores the token: 100*k/N."""
    if not 1 <= k <= n_experts:
        raise MetricsError(f"need 1 <= k <= N, got k={k}, N={n_experts}")
    return 100.0 * k / n_experts


def spec_report(counts: AssignmentCounts, k: int) -> SpecReport:
    tagset = counts.tagset
    matrix = np.full((len(tagset), counts.n_layers), np.nan)
    per_pos: dict[str, float | None] = {}
    per_pos_max: dict[str, tuple[float, int] | None] = {}
    for i, tag in enumerate(tagset.tags):
        layer_values = [spec_pos_layer(counts, tag, l, k) for l in range(counts.n_layers)]
        for l, v in enumerate(layer_values):
            if v is not None:
                matrix[i, l] = v
        defined = [(v, l) for l, v in enumerate(layer_values) if v is not None]
        if defined:
            per_pos[tag] = float(np.mean([v for v, _ in defined]))
            per_pos_max[tag] = max(defined, key=lambda pair: (pair[0], -pair[1]))
        else:
            per_pos[tag] = None
            per_pos_max[tag] = None
    global_score = spec_global(counts, tagset, k)
    u = uniform_expectation(k, counts.n_experts)
    return SpecReport(
        spec_matrix=matrix,
        spec_pos=per_pos,
        spec_pos_max=per_pos_max,
        global_score=global_score,
        u=u,
        delta_u=global_score - u,
        k=k,
        tagset=tagset,
    )


def _as_probabilities(dist, tagset: PosTagset | None) -> np.ndarray:
    if isinstance(dist, PosDistribution):
        if tagset is None:
            raise MetricsError("a PosDistribution argument needs a tagset")
        return dist.as_array(tagset)
    return np.asarray(dist, dtype=float)


def kl_divergence(p, q, smoothing: float = 1e-9, tagset: PosTagset | None = None) -> float:
    """KL(p || q) in nats after additive smoothing and renormalization of
    both arguments."""
    pa = _as_probabilities(p, tagset)
    qa = _as_probabilities(q, tagset)
    if pa.shape != qa.shape:
        raise MetricsError(f"shape mismatch {pa.shape} vs {qa.shape}")
    ps = pa + smoothing
    ps = ps / ps.sum()
    qs = qa + smoothing
    qs = qs / qs.sum()
    return float(np.sum(ps * np.log(ps / qs)))


def token_corpus_distribution(counts: AssignmentCounts) -> np.ndarray:
    """POS distribution of the traced tokens, recovered from event counts.

    Every token contributes the same number of events (k per layer), so
    event proportions equal token proportions.
    """
    totals = counts.counts.sum(axis=(0, 1)).astype(float)
    if totals.sum() == 0:
        raise MetricsError("empty counts")
    return totals / totals.sum()


def word_corpus_distribution(records, tagset: PosTagset) -> np.ndarray:
    """POS distribution over distinct (sentence, word) pairs in a trace."""
    seen: dict[tuple[int, int], str] = {}
    for record in records:
        seen.setdefault((record.sentence_id, record.word_index), record.upos)
    if not seen:
        raise MetricsError("empty record stream")
    counts = np.zeros(len(tagset))
    for tag in seen.values():
        counts[tagset.index(tag)] += 1
    return counts / counts.sum()


def kl_stats(counts: AssignmentCounts, corpus_dist=None, smoothing: float = 1e-9) -> KlReport:
    """Layer-averaged min/max/mean KL of expert POS distributions vs the
    corpus distribution; zero-assignment experts are skipped."""
    if corpus_dist is None:
        corpus = token_corpus_distribution(counts)
    else:
        corpus = _as_probabilities(corpus_dist, counts.tagset)
    matrix = np.full((counts.n_layers, counts.n_experts), np.nan)
    mins, maxs, means = [], [], []
    for l in range(counts.n_layers):
        layer_values = []
        for e in range(counts.n_experts):
            events = counts.counts[l, e, :].astype(float)
            total = events.sum()
            if total == 0:
                continue
            value = kl_divergence(events / total, corpus, smoothing=smoothing)
            matrix[l, e] = value
            layer_values.append(value)
        if not layer_values:
            raise MetricsError(f"layer {l} has no assignments")
        mins.append(min(layer_values))
        maxs.append(max(layer_values))
        means.append(float(np.mean(layer_values)))
    return KlReport(
        kl_matrix=matrix,
        mu_min=float(np.mean(mins)),
        mu_max=float(np.mean(maxs)),
        mu_mean=float(np.mean(means)),
    )


def spec_matrix_tsv(report: SpecReport) -> str:
    """spec_matrix as TSV: one row per POS, one column per layer."""
    lines = ["pos\t" + "\t".join(f"layer_{l}" for l in range(report.spec_matrix.shape[1]))]
    for i, tag in enumerate(report.tagset.tags):
        cells = [
            "" if np.isnan(v) else f"{v:.6f}" for v in report.spec_matrix[i]
        ]
        lines.append(tag + "\t" + "\t".join(cells))
    return "\n".join(lines) + "\n"


def spec_report_markdown(report: SpecReport, seed: int | None = None) -> str:
    lines = ["# Specialization report", ""]
    if seed is not None:
        lines += [f"seed: {seed}", ""]
    lines += [
        f"Global specialization: {report.global_score:.2f}",
        f"Uniform expectation U: {report.u:.1f}",
        f"Delta over uniform: {report.delta_u:+.2f}",
        "",
        "| POS | mean | max (layer) |",
        "| --- | ---: | ---: |",
    ]
    for tag in report.tagset.tags:
        mean = report.spec_pos[tag]
        peak = report.spec_pos_max[tag]
        mean_cell = "-" if mean is None else f"{mean:.2f}"
        peak_cell = "-" if peak is None else f"{peak[0]:.2f} (L{peak[1]})"
        marker = "" if tag not in report.tagset.excluded_from_global else " *"
        lines.append(f"| {tag}{marker} | {mean_cell} | {peak_cell} |")
    lines += ["", "`*` excluded from the global mean.", "", reference_footer()]
    return "\n".join(lines) + "\n"


def kl_report_markdown(report: KlReport, seed: int | None = None) -> str:
    lines = ["# Expert divergence report", ""]
    if seed is not None:
        lines += [f"seed: {seed}", ""]
    lines += [
        "| statistic | nats |",
        "| --- | ---: |",
        f"| mu_min | {report.mu_min:.4f} |",
        f"| mu_max | {report.mu_max:.4f} |",
        f"| mu_mean | {report.mu_mean:.4f} |",
        "",
        reference_footer(),
    ]
    return "\n".join(lines) + "\n"
