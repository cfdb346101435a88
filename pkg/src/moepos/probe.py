"""MLP probe: predict a token's POS from its routing path.

The classifier is one rectified hidden layer trained with minibatch Adam on
softmax cross-entropy, mirroring the common reference implementation's
defaults (hidden width 100, step 1e-3, batch 200, stop after 10 epochs
without a tol-sized loss improvement). Written out by hand so the gradients
are checkable and runs are bit-reproducible from the seed.
"""

from __future__ import annotations

from collections import Counter, defaultdict
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ._numeric import Adam, finite_difference_check, log_softmax, softmax
from .corpus import split_tokens
from .trace import PathVector, TokenRecord, TraceHeader, path_vector

ENCODINGS = ("raw_index", "one_hot")


class ProbeError(ValueError):
    """Invalid probe configuration or input."""


@dataclass(frozen=True)
class ProbeConfig:
    hidden_width: int = 100
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    batch_size: int = 200
    max_epochs: int = 300
    convergence_tol: float = 1e-4
    n_epochs_no_change: int = 10
    seed: int = 0
    encoding: str = "raw_index"

    def __post_init__(self):
        if self.hidden_width < 1:
            raise ProbeError("hidden_width must be >= 1")
        if self.encoding not in ENCODINGS:
            raise ProbeError(f"encoding must be one of {ENCODINGS}")


@dataclass
class ProbeModel:
    input_dim: int
    classes: tuple[str, ...]
    params: dict[str, np.ndarray]
    encoding: str
    n_epochs: int = 0
    loss_curve: list[float] = field(default_factory=list)


@dataclass
class ConfusionMatrix:
    """Rows are true classes, columns predicted."""

    counts: np.ndarray
    classes: tuple[str, ...]
    accuracy: float
    per_class_recall: dict[str, float | None]


def encode_inputs(paths: Sequence[PathVector], encoding: str, n_experts: int) -> np.ndarray:
    """Feature matrix from path vectors: expert indices as reals (raw_index,
    dimension S) or indicator blocks (one_hot, dimension S*N)."""
    if encoding not in ENCODINGS:
        raise ProbeError(f"encoding must be one of {ENCODINGS}")
    if not paths:
        raise ProbeError("no paths to encode")
    length = len(paths[0].values)
    mode = paths[0].mode
    if any(len(p.values) != length or p.mode != mode for p in paths):
        raise ProbeError("paths must share one length and mode")
    indices = np.array([p.values for p in paths], dtype=np.int64)
    if encoding == "raw_index":
        return indices.astype(float)
    if indices.min() < 0 or indices.max() >= n_experts:
        raise ProbeError(f"expert index outside [0, {n_experts})")
    n = len(paths)
    features = np.zeros((n, length * n_experts))
    flat = np.arange(length) * n_experts + indices
    features[np.arange(n)[:, None], flat] = 1.0
    return features


def _class_indices(y, classes: tuple[str, ...]) -> np.ndarray:
    lookup = {c: i for i, c in enumerate(classes)}
    try:
        return np.array([lookup[label] for label in y], dtype=np.int64)
    except KeyError as exc:
        raise ProbeError(f"label {exc.args[0]!r} not in classes") from exc


def _init_params(rng: np.random.Generator, input_dim: int, hidden: int,
                 n_classes: int) -> dict[str, np.ndarray]:
    def layer(fan_in, fan_out):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        w = rng.uniform(-bound, bound, size=(fan_out, fan_in))
        b = rng.uniform(-bound, bound, size=fan_out)
        return w, b

    w1, b1 = layer(input_dim, hidden)
    w2, b2 = layer(hidden, n_classes)
    return {"w1": w1, "b1": b1, "w2": w2, "b2": b2}


def _loss_and_grads(params: dict, X: np.ndarray, yi: np.ndarray):
    z1 = X @ params["w1"].T + params["b1"]
    a1 = np.maximum(z1, 0.0)
    z2 = a1 @ params["w2"].T + params["b2"]
    logp = log_softmax(z2, axis=1)
    n = X.shape[0]
    loss = -float(np.mean(logp[np.arange(n), yi]))
    dz2 = np.exp(logp)
    dz2[np.arange(n), yi] -= 1.0
    dz2 /= n
    grads = {
        "w2": dz2.T @ a1,
        "b2": dz2.sum(axis=0),
    }
    da1 = dz2 @ params["w2"]
    dz1 = da1 * (z1 > 0)
    grads["w1"] = dz1.T @ X
    grads["b1"] = dz1.sum(axis=0)
    return loss, grads


def train_probe(X: np.ndarray, y, config: ProbeConfig,
                classes: Sequence[str]) -> ProbeModel:
    """Minibatch training until max_epochs or 10 epochs without the training
    loss improving by convergence_tol."""
    X = np.asarray(X, dtype=float)
    classes = tuple(classes)
    yi = _class_indices(y, classes)
    if X.ndim != 2 or X.shape[0] != yi.shape[0]:
        raise ProbeError(f"X has shape {X.shape} for {yi.shape[0]} labels")
    if X.shape[0] < len(classes):
        raise ProbeError("need at least as many samples as classes")
    rng = np.random.default_rng(config.seed)
    params = _init_params(rng, X.shape[1], config.hidden_width, len(classes))
    optimizer = Adam(params, lr=config.learning_rate,
                     beta1=config.beta1, beta2=config.beta2)
    n = X.shape[0]
    best_loss = np.inf
    no_improvement = 0
    loss_curve: list[float] = []
    epochs_run = 0
    for _ in range(config.max_epochs):
        order = rng.permutation(n)
        epoch_loss = 0.0
        for start in range(0, n, config.batch_size):
            batch = order[start:start + config.batch_size]
            loss, grads = _loss_and_grads(params, X[batch], yi[batch])
            if not np.isfinite(loss):
                raise ProbeError("non-finite training loss")
            optimizer.step(params, grads)
            epoch_loss += loss * batch.size
        epoch_loss /= n
        loss_curve.append(epoch_loss)
        epochs_run += 1
        if epoch_loss > best_loss - config.convergence_tol:
            no_improvement += 1
        else:
            no_improvement = 0
        best_loss = min(best_loss, epoch_loss)
        if no_improvement >= config.n_epochs_no_change:
            break
    return ProbeModel(
        input_dim=X.shape[1],
        classes=classes,
        params=params,
        encoding=config.encoding,
        n_epochs=epochs_run,
        loss_curve=loss_curve,
    )


def predict_proba(model: ProbeModel, X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.shape[1] != model.input_dim:
        raise ProbeError(f"expected {model.input_dim} features, got {X.shape[1]}")
    hidden = np.maximum(X @ model.params["w1"].T + model.params["b1"], 0.0)
    return softmax(hidden @ model.params["w2"].T + model.params["b2"], axis=1)


def predict(model: ProbeModel, X: np.ndarray) -> np.ndarray:
    """Predicted class indices; ties go to the lower class index."""
    return np.argmax(predict_proba(model, X), axis=1)


def evaluate_probe(model: ProbeModel, X_test: np.ndarray, y_test) -> tuple[float, ConfusionMatrix]:
    yi = _class_indices(y_test, model.classes)
    predictions = predict(model, X_test)
    n_classes = len(model.classes)
    counts = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(counts, (yi, predictions), 1)
    accuracy = float(np.trace(counts) / counts.sum())
    recall: dict[str, float | None] = {}
    for i, name in enumerate(model.classes):
        row = counts[i].sum()
        recall[name] = float(counts[i, i] / row) if row else None
    return accuracy, ConfusionMatrix(
        counts=counts, classes=model.classes, accuracy=accuracy,
        per_class_recall=recall,
    )


def gradient_check(config: ProbeConfig, X: np.ndarray, y, classes: Sequence[str],
                   eps: float = 1e-4) -> float:
    """Max relative error of the probe's analytic gradients against central
    finite differences at freshly initialized parameters."""
    X = np.asarray(X, dtype=float)
    classes = tuple(classes)
    yi = _class_indices(y, classes)
    rng = np.random.default_rng(config.seed)
    params = _init_params(rng, X.shape[1], config.hidden_width, len(classes))
    size = sum(v.size for v in params.values())
    if size > 10_000:
        raise ProbeError(f"{size} parameters; check requires <= 10000")
    _, grads = _loss_and_grads(params, X, yi)

    def loss_at(p: dict) -> float:
        return _loss_and_grads(p, X, yi)[0]

    return finite_difference_check(loss_at, params, grads, eps=eps)


def baseline_most_common_pos(train_tokens: Sequence, test_tokens: Sequence) -> float:
    """Accuracy of predicting each surface form's majority tag from train;
    unseen forms get the train-global majority tag. Ties break toward the
    globally more frequent tag."""
    if not train_tokens:
        raise ProbeError("empty training tokens")
    global_counts: Counter = Counter(t.upos for t in train_tokens)
    by_form: dict[str, Counter] = defaultdict(Counter)
    for token in train_tokens:
        by_form[token.surface][token.upos] += 1

    def majority(counter: Counter) -> str:
        return min(counter, key=lambda tag: (-counter[tag], -global_counts[tag], tag))

    fallback = majority(global_counts)
    table = {form: majority(counter) for form, counter in by_form.items()}
    if not test_tokens:
        raise ProbeError("empty test tokens")
    hits = sum(1 for t in test_tokens if table.get(t.surface, fallback) == t.upos)
    return hits / len(test_tokens)


def ablation_curve(header: TraceHeader, records: Sequence[TokenRecord], side: str,
                   config: ProbeConfig, mode: str = "top_k") -> list[tuple[int, float]]:
    """Probe accuracy after dropping r leading (side=first) or trailing
    (side=last) layers, r = 0..L-1; split and seed are shared across r."""
    if side not in ("first", "last"):
        raise ProbeError(f"side must be 'first' or 'last', got {side!r}")
    n_layers = header.n_layers
    classes = tuple(header.tagset)
    train_records, test_records = split_tokens(records, seed=config.seed)
    curve: list[tuple[int, float]] = []
    for removed in range(n_layers):
        layer_range = (removed, n_layers) if side == "first" else (0, n_layers - removed)
        X_train = encode_inputs(
            [path_vector(r, mode, layer_range) for r in train_records],
            config.encoding, header.n_experts,
        )
        X_test = encode_inputs(
            [path_vector(r, mode, layer_range) for r in test_records],
            config.encoding, header.n_experts,
        )
        model = train_probe(X_train, [r.upos for r in train_records], config, classes)
        accuracy, _ = evaluate_probe(model, X_test, [r.upos for r in test_records])
        curve.append((removed, accuracy))
    return curve


def confusion_tsv(matrix: ConfusionMatrix) -> str:
    lines = ["true\\pred\t" + "\t".join(matrix.classes)]
    for i, name in enumerate(matrix.classes):
        lines.append(name + "\t" + "\t".join(str(v) for v in matrix.counts[i]))
    return "\n".join(lines) + "\n"


def confusion_markdown(matrix: ConfusionMatrix) -> str:
    """Row-normalized percentages; rows with no test examples show dashes."""
    header = "| true \\ pred | " + " | ".join(matrix.classes) + " |"
    divider = "| --- |" + " ---: |" * len(matrix.classes)
    lines = [header, divider]
    for i, name in enumerate(matrix.classes):
        row = matrix.counts[i]
        total = row.sum()
        if total:
            cells = [f"{100.0 * v / total:.1f}" for v in row]
        else:
            cells = ["-"] * len(matrix.classes)
        lines.append(f"| {name} | " + " | ".join(cells) + " |")
    return "\n".join(lines) + "\n"
