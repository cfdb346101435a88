"""2D embeddings of routing-path features, for eyeballing cluster structure.

PCA is the cheap deterministic view; t-SNE is the exact O(n^2) variant with
the classic settings (early exaggeration 12 for 250 iterations, momentum
0.5 then 0.8, per-point bandwidths fit by binary search), so it is only
meant for a few thousand points.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence
from xml.sax.saxutils import escape

import numpy as np


class ProjectionError(ValueError):
    """Projection undefined or failed for this input."""


@dataclass
class Embedding2D:
    coords: np.ndarray
    labels: tuple[str, ...]
    method: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        self.coords = np.asarray(self.coords, dtype=float)
        if self.coords.ndim != 2 or self.coords.shape[1] != 2:
            raise ProjectionError(f"coords must be (n, 2), got {self.coords.shape}")
        if not np.all(np.isfinite(self.coords)):
            raise ProjectionError("coords must be finite")
        self.labels = tuple(self.labels)
        if len(self.labels) != self.coords.shape[0]:
            raise ProjectionError("one label per point required")


def _resolve_labels(labels, n: int) -> tuple[str, ...]:
    if labels is None:
        return ("",) * n
    labels = tuple(labels)
    if len(labels) != n:
        raise ProjectionError(f"{len(labels)} labels for {n} points")
    return labels


def pca_2d(X, labels: Sequence[str] | None = None) -> Embedding2D:
    """Project onto the top-2 principal directions.

    Components are orthonormal eigenvectors of the covariance; each is
    sign-fixed so its largest-magnitude entry is positive.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[0] < 3 or X.shape[1] < 2:
        raise ProjectionError(f"need at least 3 points of dimension >= 2, got {X.shape}")
    centered = X - X.mean(axis=0)
    cov = centered.T @ centered / (X.shape[0] - 1)
    total_variance = float(np.trace(cov))
    if total_variance <= 1e-12:
        raise ProjectionError("input has zero variance")
    eigenvalues, eigenvectors = np.linalg.eigh(cov)
    components = eigenvectors[:, ::-1][:, :2].T.copy()
    explained = eigenvalues[::-1][:2]
    for i in range(2):
        anchor = np.argmax(np.abs(components[i]))
        if components[i, anchor] < 0:
            components[i] = -components[i]
    coords = centered @ components.T
    return Embedding2D(
        coords=coords,
        labels=_resolve_labels(labels, X.shape[0]),
        method="pca",
        params={
            "explained_variance": [float(v) for v in explained],
            "total_variance": total_variance,
        },
    )


def _conditional_probabilities(distances: np.ndarray, perplexity: float,
                               tol: float = 1e-5, max_tries: int = 50) -> np.ndarray:
    """Row-stochastic affinities with per-point precision fit so each row's
    entropy matches log(perplexity)."""
    n = distances.shape[0]
    target = np.log(perplexity)
    P = np.zeros((n, n))
    for i in range(n):
        row = np.delete(distances[i], i)
        beta, beta_min, beta_max = 1.0, -np.inf, np.inf
        for _ in range(max_tries):
            s = -row * beta
            shift = s.max()
            weights = np.exp(s - shift)
            total = weights.sum()
            probs = weights / total
            entropy = float(np.log(total) + shift + beta * np.dot(row, probs))
            diff = entropy - target
            if abs(diff) <= tol:
                break
            if diff > 0:
                beta_min = beta
                beta = beta * 2.0 if beta_max == np.inf else (beta + beta_max) / 2.0
            else:
                beta_max = beta
                beta = beta / 2.0 if beta_min == -np.inf else (beta + beta_min) / 2.0
        else:
            raise ProjectionError(
                f"perplexity search did not converge for point {i} "
                f"(entropy {entropy:.4f}, target {target:.4f})"
            )
        P[i, np.arange(n) != i] = probs
    return P


def tsne_2d(X, perplexity: float = 30.0, iters: int = 1000, seed: int = 0,
            labels: Sequence[str] | None = None) -> Embedding2D:
    """Exact t-SNE to two dimensions; deterministic for a fixed seed."""
    X = np.asarray(X, dtype=float)
    n = X.shape[0]
    if n > 20_000:
        raise ProjectionError(f"{n} points; the exact variant handles at most 20000")
    if not perplexity < n / 3:
        raise ProjectionError(f"perplexity {perplexity} requires more than "
                              f"{int(3 * perplexity)} points, got {n}")
    if iters < 251:
        raise ProjectionError("need at least 251 iterations")

    norms = np.sum(X * X, axis=1)
    distances = np.maximum(norms[:, None] + norms[None, :] - 2.0 * (X @ X.T), 0.0)
    P = _conditional_probabilities(distances, perplexity)
    P = P + P.T
    P = P / P.sum()
    P = np.maximum(P, 1e-12)

    exaggeration = 12.0
    P = P * exaggeration
    rng = np.random.default_rng(seed)
    Y = rng.standard_normal((n, 2)) * 1e-4
    velocity = np.zeros_like(Y)
    gains = np.ones_like(Y)
    learning_rate = 200.0

    for iteration in range(iters):
        sum_y = np.sum(Y * Y, axis=1)
        num = 1.0 / (1.0 + sum_y[:, None] + sum_y[None, :] - 2.0 * (Y @ Y.T))
        np.fill_diagonal(num, 0.0)
        Q = np.maximum(num / num.sum(), 1e-12)
        W = (P - Q) * num
        gradient = 4.0 * (W.sum(axis=1)[:, None] * Y - W @ Y)

        momentum = 0.5 if iteration < 250 else 0.8
        same_sign = (gradient > 0) == (velocity > 0)
        gains = np.where(same_sign, gains * 0.8, gains + 0.2)
        gains = np.maximum(gains, 0.01)
        velocity = momentum * velocity - learning_rate * gains * gradient
        Y = Y + velocity
        Y = Y - Y.mean(axis=0)

        if iteration == 249:
            P = P / exaggeration

    if not np.all(np.isfinite(Y)):
        raise ProjectionError("embedding diverged to non-finite coordinates")
    return Embedding2D(
        coords=Y,
        labels=_resolve_labels(labels, n),
        method="tsne",
        params={"perplexity": perplexity, "iters": iters, "seed": seed},
    )


_PALETTE = (
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
    "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf",
    "#aec7e8", "#ffbb78", "#98df8a", "#ff9896", "#c5b0d5",
    "#c49c94", "#f7b6d2", "#c7c7c7", "#dbdb8d", "#9edae5",
)


def scatter_tsv(embedding: Embedding2D) -> str:
    lines = ["x\ty\ttag"]
    for (x, y), tag in zip(embedding.coords, embedding.labels):
        lines.append(f"{x:.6f}\t{y:.6f}\t{tag}")
    return "\n".join(lines) + "\n"


def scatter_svg(embedding: Embedding2D, width: int = 720, height: int = 520) -> str:
    """Static scatter colored by tag with a legend; always well-formed XML."""
    tags = sorted(set(embedding.labels))
    color = {tag: _PALETTE[i % len(_PALETTE)] for i, tag in enumerate(tags)}
    margin, legend_width = 40, 110
    plot_w = width - 2 * margin - legend_width
    plot_h = height - 2 * margin
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
    ]
    if embedding.coords.shape[0]:
        lo = embedding.coords.min(axis=0)
        hi = embedding.coords.max(axis=0)
        span = np.where(hi - lo > 0, hi - lo, 1.0)

        def place(point):
            px = margin + (point[0] - lo[0]) / span[0] * plot_w
            py = margin + (1.0 - (point[1] - lo[1]) / span[1]) * plot_h
            return px, py

        for point, tag in zip(embedding.coords, embedding.labels):
            px, py = place(point)
            parts.append(
                f'<circle cx="{px:.2f}" cy="{py:.2f}" r="3" '
                f'fill="{color[tag]}" fill-opacity="0.75"/>'
            )
    for i, tag in enumerate(tags):
        ly = margin + 16 * i
        lx = width - margin - legend_width
        parts.append(f'<circle cx="{lx}" cy="{ly}" r="4" fill="{color[tag]}"/>')
        parts.append(
            f'<text x="{lx + 10}" y="{ly + 4}" font-size="11" '
            f'font-family="sans-serif">{escape(tag) or "(unlabeled)"}</text>'
        )
    parts.append(
        f'<text x="{margin}" y="{height - 12}" font-size="11" '
        f'font-family="sans-serif">{escape(embedding.method)} projection, '
        f'n={embedding.coords.shape[0]}</text>'
    )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def emit_scatter(embedding: Embedding2D, out_dir, stem: str = "scatter") -> tuple[Path, Path]:
    """Write <stem>.tsv and <stem>.svg under out_dir; returns their paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    tsv_path = out / f"{stem}.tsv"
    svg_path = out / f"{stem}.svg"
    tsv_path.write_text(scatter_tsv(embedding), encoding="utf-8")
    svg_path.write_text(scatter_svg(embedding), encoding="utf-8")
    return tsv_path, svg_path
