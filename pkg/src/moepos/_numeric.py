"""Shared numerics: stable softmax, Adam updates, finite-difference checks.

Everything here is float64; gradient checking needs the headroom.
"""

from __future__ import annotations

import numpy as np


def softmax(z: np.ndarray, axis: int = -1) -> np.ndarray:
    """Softmax along axis, shifted by the max so large logits cannot overflow."""
    shifted = z - np.max(z, axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=axis, keepdims=True)


def log_softmax(z: np.ndarray, axis: int = -1) -> np.ndarray:
    shifted = z - np.max(z, axis=axis, keepdims=True)
    return shifted - np.log(np.sum(np.exp(shifted), axis=axis, keepdims=True))


class Adam:
    """Adaptive-moment gradient descent over a dict of named parameter arrays.

    Step size follows the bias-corrected schedule
    lr_t = lr * sqrt(1 - beta2^t) / (1 - beta1^t), updates in place.
    """

    def __init__(self, params: dict, lr: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, params: dict, grads: dict) -> None:
        self.t += 1
        lr_t = self.lr * np.sqrt(1 - self.beta2 ** self.t) / (1 - self.beta1 ** self.t)
        for name, g in grads.items():
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * g * g
            params[name] -= lr_t * m / (np.sqrt(v) + self.eps)


def flatten_params(params: dict) -> np.ndarray:
    return np.concatenate([params[k].ravel() for k in params])


def unflatten_params(flat: np.ndarray, template: dict) -> dict:
    out = {}
    offset = 0
    for name, arr in template.items():
        out[name] = flat[offset:offset + arr.size].reshape(arr.shape)
        offset += arr.size
    return out


def finite_difference_check(loss_fn, params: dict, analytic: dict,
                            eps: float = 1e-4, floor: float = 1e-4) -> float:
    """Max relative error between analytic grads and central differences.

    loss_fn takes a params dict and returns a scalar. The relative error per
    coordinate is |ga - gn| / max(|ga| + |gn|, floor); the floor keeps
    coordinates where both gradients vanish from dividing by ~0.
    """
    flat = flatten_params(params)
    # Align by the template's key order; the analytic dict may have been
    # built in a different (e.g. backprop) order.
    flat_analytic = np.concatenate([np.asarray(analytic[k]).ravel() for k in params])
    worst = 0.0
    for i in range(flat.size):
        original = flat[i]
        flat[i] = original + eps
        f_plus = loss_fn(unflatten_params(flat, params))
        flat[i] = original - eps
        f_minus = loss_fn(unflatten_params(flat, params))
        flat[i] = original
        numeric = (f_plus - f_minus) / (2 * eps)
        err = abs(flat_analytic[i] - numeric) / max(abs(flat_analytic[i]) + abs(numeric), floor)
        worst = max(worst, err)
    return worst
