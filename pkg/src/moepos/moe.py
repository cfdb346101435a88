"""Toy decoder-only transformer with top-k routed MoE feed-forward layers.

The router computes h = W_r x, keeps the k largest logits (ties broken by
lower expert index), and softmaxes the kept logits into gate weights; the
layer output is the gate-weighted sum of the selected expert FFNs. All math
is float64 numpy with hand-written backprop so gradients can be checked
against finite differences exactly.

Also provides synthetic routers (uniform_random, pos_oracle, tokenid_hash)
that produce traces with known statistics for calibrating the metrics.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from ._numeric import Adam, finite_difference_check, log_softmax, softmax
from .corpus import DEFAULT_TAGSET, PosTagset
from .trace import TokenRecord, TraceHeader

_NORM_EPS = 1e-5
_INIT_SCALE = 0.02
CHECKPOINT_MAGIC = b"MOEP"
CHECKPOINT_VERSION = 1


class MoeError(ValueError):
    """Invalid model configuration or input."""


class CheckpointError(MoeError):
    """Unreadable or mismatched checkpoint file."""


class DivergenceError(MoeError):
    """Training produced a non-finite loss."""


@dataclass(frozen=True)
class ModelConfig:
    n_layers: int
    n_experts: int
    k: int
    d_model: int
    d_ff: int
    vocab_size: int
    seed: int = 0

    def __post_init__(self):
        if not 1 <= self.k <= self.n_experts:
            raise MoeError(f"need 1 <= k <= n_experts, got k={self.k}, N={self.n_experts}")
        if self.n_layers < 1:
            raise MoeError("n_layers must be >= 1")
        if self.d_model < 1 or self.d_ff < 1:
            raise MoeError("d_model and d_ff must be >= 1")
        if self.vocab_size < 2:
            raise MoeError("vocab_size must be >= 2")


@dataclass(frozen=True)
class RouterLayer:
    """Router weights for one layer: logits h = w_r @ x."""

    w_r: np.ndarray

    def __post_init__(self):
        if not np.all(np.isfinite(self.w_r)):
            raise MoeError("router weights must be finite")


@dataclass(frozen=True)
class Expert:
    """One expert FFN: w2 @ tanh(w1 @ x + b1) + b2."""

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.w2 @ np.tanh(self.w1 @ x + self.b1) + self.b2


@dataclass(frozen=True)
class RoutingDecision:
    """k selected expert indices (descending logit order) and their gates."""

    selected: tuple[int, ...]
    gates: tuple[float, ...]

    def __post_init__(self):
        if len(self.selected) != len(self.gates) or not self.selected:
            raise MoeError("selected and gates must be non-empty and equal length")
        if len(set(self.selected)) != len(self.selected):
            raise MoeError("selected experts must be distinct")
        if any(g <= 0 for g in self.gates):
            raise MoeError("gates must be positive")
        if abs(sum(self.gates) - 1.0) > 1e-9:
            raise MoeError(f"gates sum to {sum(self.gates)}, not 1")


class MoeModel:
    """Parameter container; params is an ordered name -> float64 array dict.

    The dict order is the checkpoint tensor order, so it must stay stable.
    """

    def __init__(self, config: ModelConfig, params: dict[str, np.ndarray]):
        self.config = config
        self.params = params

    def param_count(self) -> int:
        return sum(v.size for v in self.params.values())

    def router_layer(self, layer: int) -> RouterLayer:
        return RouterLayer(w_r=self.params[f"l{layer}.router"])

    def experts(self, layer: int) -> list[Expert]:
        return [
            Expert(
                w1=self.params[f"l{layer}.e{i}.w1"],
                b1=self.params[f"l{layer}.e{i}.b1"],
                w2=self.params[f"l{layer}.e{i}.w2"],
                b2=self.params[f"l{layer}.e{i}.b2"],
            )
            for i in range(self.config.n_experts)
        ]


def init_model(config: ModelConfig) -> MoeModel:
    rng = np.random.default_rng(config.seed)
    d, ff, v = config.d_model, config.d_ff, config.vocab_size

    def w(*shape):
        return rng.normal(0.0, _INIT_SCALE, size=shape)

    params: dict[str, np.ndarray] = {"embed": w(v, d)}
    for l in range(config.n_layers):
        params[f"l{l}.norm1"] = np.ones(d)
        for name in ("wq", "wk", "wv", "wo"):
            params[f"l{l}.{name}"] = w(d, d)
        params[f"l{l}.norm2"] = np.ones(d)
        params[f"l{l}.router"] = w(config.n_experts, d)
        for i in range(config.n_experts):
            params[f"l{l}.e{i}.w1"] = w(ff, d)
            params[f"l{l}.e{i}.b1"] = np.zeros(ff)
            params[f"l{l}.e{i}.w2"] = w(d, ff)
            params[f"l{l}.e{i}.b2"] = np.zeros(d)
    params["norm_f"] = np.ones(d)
    params["unembed"] = w(v, d)
    return MoeModel(config, params)


def _positional(n: int, d: int) -> np.ndarray:
    inv = 1.0 / (10000.0 ** (2 * (np.arange(d) // 2) / d))
    angles = np.arange(n)[:, None] * inv[None, :]
    pe = np.empty((n, d))
    pe[:, 0::2] = np.sin(angles[:, 0::2])
    pe[:, 1::2] = np.cos(angles[:, 1::2])
    return pe


def _rmsnorm(x: np.ndarray, gain: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    r = 1.0 / np.sqrt(np.mean(x * x, axis=-1, keepdims=True) + _NORM_EPS)
    return x * r * gain, r


def _rmsnorm_backward(dy, x, gain, r):
    dgain = np.sum(dy * x * r, axis=0)
    inner = np.sum(dy * gain * x, axis=-1, keepdims=True)
    dx = dy * gain * r - x * (r ** 3) * inner / x.shape[-1]
    return dx, dgain


def _select(logits: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Top-k selection per row: indices in descending logit order (ties go to
    the lower index), gates from a softmax over the kept logits only."""
    order = np.argsort(-logits, axis=1, kind="stable")
    idx = order[:, :k]
    kept = np.take_along_axis(logits, idx, axis=1)
    return idx, softmax(kept, axis=1)


def route(layer: RouterLayer, x: np.ndarray, k: int) -> RoutingDecision:
    """Route one token's hidden state through a layer's gating network."""
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise MoeError("router input must be finite")
    n_experts = layer.w_r.shape[0]
    if not 1 <= k <= n_experts:
        raise MoeError(f"need 1 <= k <= {n_experts}, got k={k}")
    if x.shape != (layer.w_r.shape[1],):
        raise MoeError(f"input shape {x.shape} does not match router {layer.w_r.shape}")
    logits = layer.w_r @ x
    idx, gates = _select(logits[None, :], k)
    return RoutingDecision(
        selected=tuple(int(e) for e in idx[0]),
        gates=tuple(float(g) for g in gates[0]),
    )


def moe_layer_forward(experts: Sequence[Expert], decision: RoutingDecision,
                      x: np.ndarray) -> np.ndarray:
    """Gate-weighted sum of the selected experts' outputs."""
    x = np.asarray(x, dtype=float)
    y = np.zeros_like(x)
    for gate, index in zip(decision.gates, decision.selected):
        y = y + gate * experts[index](x)
    return y


def _forward(params: dict, config: ModelConfig, ids: np.ndarray, *,
             aux_weight: float = 0.0, frozen_selection: list[np.ndarray] | None = None,
             want_grads: bool = False):
    """One sequence forward (and optionally backward) pass.

    Returns (loss, logits, selections, gates_per_layer, grads). The loss is
    next-token cross-entropy plus aux_weight times the load-balance term; it
    is None for length-1 inputs. Routing selection is treated as a constant
    in all gradients; frozen_selection pins it for finite-difference probes.
    """
    n = ids.shape[0]
    d = config.d_model
    L, N, k = config.n_layers, config.n_experts, config.k

    x = params["embed"][ids] + _positional(n, d)
    mask = np.triu(np.full((n, n), -np.inf), k=1)
    scale = 1.0 / np.sqrt(d)

    caches = []
    selections: list[np.ndarray] = []
    gates_all: list[np.ndarray] = []
    aux_terms = []
    for l in range(L):
        x_in = x
        xn1, r1 = _rmsnorm(x_in, params[f"l{l}.norm1"])
        q = xn1 @ params[f"l{l}.wq"].T
        key = xn1 @ params[f"l{l}.wk"].T
        val = xn1 @ params[f"l{l}.wv"].T
        scores = q @ key.T * scale + mask
        attn = softmax(scores, axis=1)
        ctx = attn @ val
        x_mid = x_in + ctx @ params[f"l{l}.wo"].T

        xn2, r2 = _rmsnorm(x_mid, params[f"l{l}.norm2"])
        h = xn2 @ params[f"l{l}.router"].T
        if frozen_selection is not None:
            idx = frozen_selection[l]
            gates = softmax(np.take_along_axis(h, idx, axis=1), axis=1)
        else:
            idx, gates = _select(h, k)

        y = np.zeros_like(x_mid)
        expert_caches = []
        for i in range(N):
            rows, ranks = np.nonzero(idx == i)
            if rows.size == 0:
                expert_caches.append(None)
                continue
            a = np.tanh(xn2[rows] @ params[f"l{l}.e{i}.w1"].T + params[f"l{l}.e{i}.b1"])
            out = a @ params[f"l{l}.e{i}.w2"].T + params[f"l{l}.e{i}.b2"]
            y[rows] += gates[rows, ranks, None] * out
            expert_caches.append((rows, ranks, a, out))

        probs = softmax(h, axis=1) if aux_weight else None
        if aux_weight:
            frac = np.bincount(idx.ravel(), minlength=N) / (n * k)
            aux_terms.append(N * float(frac @ probs.mean(axis=0)))
        x = x_mid + y
        selections.append(idx)
        gates_all.append(gates)
        caches.append(dict(x_in=x_in, xn1=xn1, r1=r1, q=q, key=key, val=val,
                           attn=attn, ctx=ctx, x_mid=x_mid, xn2=xn2, r2=r2,
                           h=h, idx=idx, gates=gates, experts=expert_caches,
                           probs=probs))

    xf, rf = _rmsnorm(x, params["norm_f"])
    logits = xf @ params["unembed"].T

    loss = None
    dlogits = None
    if n >= 2:
        targets = ids[1:]
        logp = log_softmax(logits[:-1], axis=1)
        ce = -float(np.mean(logp[np.arange(n - 1), targets]))
        aux = float(np.mean(aux_terms)) if aux_terms else 0.0
        loss = ce + aux_weight * aux
        if want_grads:
            p = np.exp(logp)
            p[np.arange(n - 1), targets] -= 1.0
            dlogits = np.zeros_like(logits)
            dlogits[:-1] = p / (n - 1)

    if not want_grads:
        return loss, logits, selections, gates_all, None

    if dlogits is None:
        raise MoeError("gradients need a sequence of length >= 2")

    grads = {name: np.zeros_like(v) for name, v in params.items()}
    grads["unembed"] += dlogits.T @ xf
    dxf = dlogits @ params["unembed"]
    dx, dgain = _rmsnorm_backward(dxf, x, params["norm_f"], rf)
    grads["norm_f"] += dgain

    for l in reversed(range(L)):
        c = caches[l]
        idx, gates = c["idx"], c["gates"]
        dy = dx
        dxn2 = np.zeros((n, d))
        dgates = np.zeros_like(gates)
        for i in range(N):
            cached = c["experts"][i]
            if cached is None:
                continue
            rows, ranks, a, out = cached
            dout = gates[rows, ranks, None] * dy[rows]
            dgates[rows, ranks] += np.sum(dy[rows] * out, axis=1)
            grads[f"l{l}.e{i}.w2"] += dout.T @ a
            grads[f"l{l}.e{i}.b2"] += dout.sum(axis=0)
            du = (dout @ params[f"l{l}.e{i}.w2"]) * (1.0 - a * a)
            grads[f"l{l}.e{i}.w1"] += du.T @ c["xn2"][rows]
            grads[f"l{l}.e{i}.b1"] += du.sum(axis=0)
            dxn2[rows] += du @ params[f"l{l}.e{i}.w1"]

        dsel = gates * (dgates - np.sum(gates * dgates, axis=1, keepdims=True))
        dh = np.zeros((n, N))
        np.put_along_axis(dh, idx, dsel, axis=1)
        if aux_weight and c["probs"] is not None:
            frac = np.bincount(idx.ravel(), minlength=N) / (n * k)
            dprob = np.broadcast_to(aux_weight * N * frac / (L * n), (n, N))
            probs = c["probs"]
            dh += probs * (dprob - np.sum(probs * dprob, axis=1, keepdims=True))
        grads[f"l{l}.router"] += dh.T @ c["xn2"]
        dxn2 += dh @ params[f"l{l}.router"]

        dx_mid, dgain2 = _rmsnorm_backward(dxn2, c["x_mid"], params[f"l{l}.norm2"], c["r2"])
        dx_mid = dx_mid + dx
        grads[f"l{l}.norm2"] += dgain2

        dctx = dx_mid @ params[f"l{l}.wo"]
        grads[f"l{l}.wo"] += dx_mid.T @ c["ctx"]
        dattn = dctx @ c["val"].T
        dval = c["attn"].T @ dctx
        attn = c["attn"]
        dscores = attn * (dattn - np.sum(dattn * attn, axis=1, keepdims=True)) * scale
        dq = dscores @ c["key"]
        dkey = dscores.T @ c["q"]
        grads[f"l{l}.wq"] += dq.T @ c["xn1"]
        grads[f"l{l}.wk"] += dkey.T @ c["xn1"]
        grads[f"l{l}.wv"] += dval.T @ c["xn1"]
        dxn1 = dq @ params[f"l{l}.wq"] + dkey @ params[f"l{l}.wk"] + dval @ params[f"l{l}.wv"]
        dx_in, dgain1 = _rmsnorm_backward(dxn1, c["x_in"], params[f"l{l}.norm1"], c["r1"])
        grads[f"l{l}.norm1"] += dgain1
        dx = dx_mid + dx_in

    np.add.at(grads["embed"], ids, dx)
    return loss, logits, selections, gates_all, grads


def _check_ids(config: ModelConfig, token_ids) -> np.ndarray:
    ids = np.asarray(token_ids, dtype=np.int64)
    if ids.ndim != 1 or ids.size == 0:
        raise MoeError("token ids must be a non-empty 1-D sequence")
    if ids.min() < 0 or ids.max() >= config.vocab_size:
        raise MoeError(f"token ids must be in [0, {config.vocab_size})")
    return ids


def forward_with_trace(model: MoeModel, token_ids) -> tuple[np.ndarray, list[list[RoutingDecision]]]:
    """Run one sequence; returns logits and per-token per-layer decisions."""
    ids = _check_ids(model.config, token_ids)
    _, logits, selections, gates_all, _ = _forward(model.params, model.config, ids)
    decisions = [
        [
            RoutingDecision(
                selected=tuple(int(e) for e in selections[l][t]),
                gates=tuple(float(g) for g in gates_all[l][t]),
            )
            for l in range(model.config.n_layers)
        ]
        for t in range(ids.shape[0])
    ]
    return logits, decisions


def sequence_loss(model: MoeModel, token_ids, aux_weight: float = 0.0) -> float:
    ids = _check_ids(model.config, token_ids)
    if ids.size < 2:
        raise MoeError("loss needs a sequence of length >= 2")
    loss, *_ = _forward(model.params, model.config, ids, aux_weight=aux_weight)
    return loss


def evaluate_loss(model: MoeModel, corpus: Sequence, aux_weight: float = 0.0) -> float:
    if not corpus:
        raise MoeError("empty corpus")
    return float(np.mean([sequence_loss(model, seq, aux_weight) for seq in corpus]))


def train_toy(model: MoeModel, corpus: Sequence, steps: int, lr: float = 1e-3,
              aux_weight: float = 1e-2) -> MoeModel:
    """Next-token training with a load-balance penalty; cycles the corpus.

    The penalty is the mean over layers of N * sum_i f_i * P_i with f_i the
    fraction of routing assignments expert i received (held constant) and
    P_i the mean router probability; it is 1 exactly at perfect balance.
    """
    if steps < 0:
        raise MoeError("steps must be >= 0")
    if steps == 0:
        return model
    sequences = [_check_ids(model.config, seq) for seq in corpus]
    if not sequences or any(s.size < 2 for s in sequences):
        raise MoeError("training needs sequences of length >= 2")
    optimizer = Adam(model.params, lr=lr)
    for step in range(steps):
        ids = sequences[step % len(sequences)]
        loss, _, _, _, grads = _forward(model.params, model.config, ids,
                                        aux_weight=aux_weight, want_grads=True)
        if not np.isfinite(loss):
            raise DivergenceError(f"non-finite loss at step {step}")
        optimizer.step(model.params, grads)
    return model


def gradient_check(model: MoeModel, eps: float = 1e-4, aux_weight: float = 0.5) -> float:
    """Max relative error of analytic vs central-difference gradients.

    Routing selection is pinned to its value at the current parameters, so
    the perturbed losses probe the same smooth function the backward pass
    differentiates (selection is a constant in both).
    """
    if model.param_count() > 10_000:
        raise MoeError(f"{model.param_count()} parameters; check requires <= 10000")
    rng = np.random.default_rng(model.config.seed + 1)
    ids = rng.integers(0, model.config.vocab_size, size=8)
    loss, _, selections, _, grads = _forward(model.params, model.config, ids,
                                             aux_weight=aux_weight, want_grads=True)
    if not np.isfinite(loss):
        raise DivergenceError("non-finite loss at the checkpoint under test")

    def loss_at(params: dict) -> float:
        value, *_ = _forward(params, model.config, ids, aux_weight=aux_weight,
                             frozen_selection=selections)
        return value

    return finite_difference_check(loss_at, model.params, grads, eps=eps)


def save_model(model: MoeModel, path) -> None:
    """Binary checkpoint: magic, version, config block, then f32 tensors in
    parameter declaration order; everything little-endian."""
    c = model.config
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<I", CHECKPOINT_VERSION))
        f.write(struct.pack("<6Iq", c.n_layers, c.n_experts, c.k,
                            c.d_model, c.d_ff, c.vocab_size, c.seed))
        for tensor in model.params.values():
            f.write(tensor.astype("<f4").tobytes(order="C"))


def load_model(path) -> MoeModel:
    raw = Path(path).read_bytes()
    if raw[:4] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"bad magic {raw[:4]!r}")
    (version,) = struct.unpack_from("<I", raw, 4)
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    fields = struct.unpack_from("<6Iq", raw, 8)
    config = ModelConfig(*fields)
    template = init_model(config).params
    offset = 8 + struct.calcsize("<6Iq")
    params = {}
    for name, arr in template.items():
        nbytes = arr.size * 4
        if offset + nbytes > len(raw):
            raise CheckpointError(f"truncated checkpoint: tensor {name} incomplete")
        flat = np.frombuffer(raw, dtype="<f4", count=arr.size, offset=offset)
        params[name] = flat.astype(np.float64).reshape(arr.shape)
        offset += nbytes
    if offset != len(raw):
        raise CheckpointError(f"{len(raw) - offset} trailing bytes after tensors")
    return MoeModel(config, params)


class SyntheticRouter:
    """Produces (indices, gates) arrays of shape (n_tokens, L, k) for a token
    stream, bypassing any model. Gates are uniform 1/k."""

    name = "synthetic"

    def assign(self, tokens: Sequence, n_layers: int, n_experts: int,
               k: int) -> tuple[np.ndarray, np.ndarray]:
        raise NotImplementedError

    @staticmethod
    def _uniform_gates(n: int, n_layers: int, k: int) -> np.ndarray:
        return np.full((n, n_layers, k), 1.0 / k)


class UniformRandomRouter(SyntheticRouter):
    """k distinct experts drawn uniformly per (token, layer)."""

    name = "uniform_random"

    def __init__(self, seed: int = 0):
        self.seed = seed

    def assign(self, tokens, n_layers, n_experts, k):
        n = len(tokens)
        rng = np.random.default_rng(self.seed)
        noise = rng.random((n, n_layers, n_experts))
        idx = np.argsort(noise, axis=2)[:, :, :k]
        return idx, self._uniform_gates(n, n_layers, k)


class PosOracleRouter(SyntheticRouter):
    """Routes every token of a POS to that POS's fixed experts per layer."""

    name = "pos_oracle"

    def __init__(self, pos_to_experts: dict):
        if not pos_to_experts:
            raise MoeError("pos_oracle needs a non-empty tag -> experts map")
        self.pos_to_experts = {
            tag: np.atleast_2d(np.asarray(v, dtype=np.int64))
            for tag, v in pos_to_experts.items()
        }

    def assign(self, tokens, n_layers, n_experts, k):
        paths = {}
        for tag, arr in self.pos_to_experts.items():
            path = np.broadcast_to(arr, (n_layers, k)) if arr.shape == (1, k) else arr
            if path.shape != (n_layers, k):
                raise MoeError(f"tag {tag!r} maps to shape {arr.shape}, "
                               f"expected ({n_layers}, {k})")
            if path.min() < 0 or path.max() >= n_experts:
                raise MoeError(f"tag {tag!r} maps to experts outside [0, {n_experts})")
            paths[tag] = path
        idx = np.empty((len(tokens), n_layers, k), dtype=np.int64)
        for t, token in enumerate(tokens):
            if token.upos not in paths:
                raise MoeError(f"pos_oracle map has no entry for tag {token.upos!r}")
            idx[t] = paths[token.upos]
        return idx, self._uniform_gates(len(tokens), n_layers, k)


class TokenIdHashRouter(SyntheticRouter):
    """Experts are a pure function of (token id, layer); context-free."""

    name = "tokenid_hash"

    def __init__(self, seed: int = 0):
        self.seed = seed

    def _experts_for(self, token_id: int, layer: int, n_experts: int, k: int) -> np.ndarray:
        chosen: list[int] = []
        counter = 0
        while len(chosen) < k:
            digest = hashlib.blake2b(
                f"{self.seed}:{token_id}:{layer}:{counter}".encode(), digest_size=8
            ).digest()
            candidate = int.from_bytes(digest, "little") % n_experts
            if candidate not in chosen:
                chosen.append(candidate)
            counter += 1
        return np.array(chosen, dtype=np.int64)

    def assign(self, tokens, n_layers, n_experts, k):
        n = len(tokens)
        idx = np.empty((n, n_layers, k), dtype=np.int64)
        cache: dict[int, np.ndarray] = {}
        for t, token in enumerate(tokens):
            tid = token.token_id
            if tid not in cache:
                cache[tid] = np.stack([
                    self._experts_for(tid, l, n_experts, k) for l in range(n_layers)
                ])
            idx[t] = cache[tid]
        return idx, self._uniform_gates(n, n_layers, k)


def synthetic_router(mode: str, *, seed: int = 0, pos_to_experts: dict | None = None) -> SyntheticRouter:
    if mode == "uniform_random":
        return UniformRandomRouter(seed=seed)
    if mode == "pos_oracle":
        if pos_to_experts is None:
            raise MoeError("pos_oracle mode needs pos_to_experts")
        return PosOracleRouter(pos_to_experts)
    if mode == "tokenid_hash":
        return TokenIdHashRouter(seed=seed)
    raise MoeError(f"unknown synthetic router mode {mode!r}")


def make_pos_oracle_map(tagset: PosTagset, n_layers: int, n_experts: int, k: int,
                        seed: int = 0, max_tries: int = 100) -> dict[str, np.ndarray]:
    """Draw a (layers, k) expert subset per tag such that no two tags share a
    full path or a first-expert path; retries with fresh seeds on collision."""
    for attempt in range(max_tries):
        rng = np.random.default_rng(seed + attempt)
        mapping = {
            tag: np.stack([rng.permutation(n_experts)[:k] for _ in range(n_layers)])
            for tag in tagset.tags
        }
        full = {tuple(v.ravel()) for v in mapping.values()}
        first = {tuple(v[:, 0]) for v in mapping.values()}
        if len(full) == len(mapping) and len(first) == len(mapping):
            return mapping
    raise MoeError(
        f"no collision-free oracle map for {len(tagset)} tags in "
        f"{max_tries} tries (L={n_layers}, N={n_experts}, k={k})"
    )


def synthetic_trace(tokens: Sequence, router: SyntheticRouter, *, n_layers: int,
                    n_experts: int, k: int, tagset: PosTagset = DEFAULT_TAGSET,
                    model_name: str | None = None,
                    tokenizer_id: str = "none") -> tuple[TraceHeader, Iterator[TokenRecord]]:
    """Header plus a lazy record stream for a synthetic routing of tokens."""
    header = TraceHeader(
        model_name=model_name or f"synthetic-{router.name}",
        n_layers=n_layers,
        n_experts=n_experts,
        k=k,
        tokenizer_id=tokenizer_id,
        tagset=tagset.tags,
    )
    idx, gates = router.assign(tokens, n_layers, n_experts, k)

    def records() -> Iterator[TokenRecord]:
        for t, token in enumerate(tokens):
            yield TokenRecord(
                sentence_id=token.sentence_id,
                word_index=token.word_index,
                surface=token.surface,
                token_id=token.token_id,
                upos=token.upos,
                layers=tuple(
                    tuple((int(e), float(g)) for e, g in zip(idx[t, l], gates[t, l]))
                    for l in range(n_layers)
                ),
            )

    return header, records()


def model_trace(model: MoeModel, tokens: Sequence, token_ids_by_sentence: Sequence,
                *, tokenizer_id: str, tagset: PosTagset = DEFAULT_TAGSET,
                model_name: str = "toy-moe") -> tuple[TraceHeader, Iterator[TokenRecord]]:
    """Trace real model routing over sentences of aligned tokens.

    tokens must be grouped consistently with token_ids_by_sentence: the j-th
    id sequence feeds the model for the j-th sentence's tokens.
    """
    c = model.config
    header = TraceHeader(
        model_name=model_name, n_layers=c.n_layers, n_experts=c.n_experts,
        k=c.k, tokenizer_id=tokenizer_id, tagset=tagset.tags,
    )
    by_sentence: dict[int, list] = {}
    for token in tokens:
        by_sentence.setdefault(token.sentence_id, []).append(token)
    if sorted(by_sentence) != list(range(len(token_ids_by_sentence))):
        raise MoeError("token sentence ids do not match the id sequences")

    def records() -> Iterator[TokenRecord]:
        for sid, ids in enumerate(token_ids_by_sentence):
            sentence_tokens = by_sentence[sid]
            if len(sentence_tokens) != len(ids):
                raise MoeError(f"sentence {sid}: {len(sentence_tokens)} tokens "
                               f"vs {len(ids)} ids")
            _, decisions = forward_with_trace(model, ids)
            for token, per_layer in zip(sentence_tokens, decisions):
                yield TokenRecord(
                    sentence_id=token.sentence_id,
                    word_index=token.word_index,
                    surface=token.surface,
                    token_id=token.token_id,
                    upos=token.upos,
                    layers=tuple(
                        tuple(zip(d.selected, d.gates)) for d in per_layer
                    ),
                )

    return header, records()
