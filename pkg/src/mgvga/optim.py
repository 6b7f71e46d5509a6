"""Adam with decoupled weight decay and the linear learning-rate schedule."""

from __future__ import annotations

import numpy as np


class AdamState:
    """Moment estimates keyed by parameter name; deterministic given inputs."""

    def __init__(self, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8,
                 weight_decay=0.0):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m = {}
        self.v = {}


def adam_step(params: dict, grads: dict, state: AdamState, lr=None):
    """One decoupled-weight-decay Adam update, in place on params.

    params maps names to Tensors, grads maps the same names to arrays (missing
    or None entries are treated as zero gradient). Returns (params, state).
    """
    state.t += 1
    step_lr = state.lr if lr is None else lr
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1 ** state.t
    bc2 = 1.0 - b2 ** state.t
    for name in sorted(params):
        p = params[name]
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p.data)
        if name not in state.m:
            state.m[name] = np.zeros_like(p.data, dtype=np.float64)
            state.v[name] = np.zeros_like(p.data, dtype=np.float64)
        if g.shape != p.data.shape:
            raise ValueError(f"gradient shape {g.shape} != param shape "
                             f"{p.data.shape} for {name!r}")
        m = state.m[name] = b1 * state.m[name] + (1 - b1) * g
        v = state.v[name] = b2 * state.v[name] + (1 - b2) * (g * g)
        update = (m / bc1) / (np.sqrt(v / bc2) + state.eps)
        if state.weight_decay:
            update = update + state.weight_decay * p.data
        p.data = (p.data - step_lr * update).astype(p.data.dtype)
    return params, state


def linear_lr(lr0: float, step: int, total_steps: int) -> float:
    """lr(t) = lr0 * max(0, 1 - t / T)."""
    if total_steps <= 0:
        return lr0
    return lr0 * max(0.0, 1.0 - step / total_steps)
