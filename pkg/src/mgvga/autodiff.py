"""Minimal reverse-mode autodiff over dense numpy arrays.

A Tensor records its parents and a backward closure; backward() replays the
tape in topological order. 32-bit floats by default, 64-bit for gradient
checking. No fusion, no views: every op materializes its output.
"""

from __future__ import annotations

import numpy as np


class ShapeError(Exception):
    """Operands with incompatible shapes for the requested op."""


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        self.data = np.asarray(data, dtype=dtype if dtype else None)
        if self.data.dtype not in (np.float32, np.float64):
            self.data = self.data.astype(np.float32)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self):
        return float(self.data)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.shape}, grad={self.requires_grad})"

    def backward(self):
        if self.data.size != 1:
            raise ShapeError("backward() requires a scalar tensor")
        order = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)


def _result(data, parents, backward):
    out = Tensor(data)
    if any(p.requires_grad or p._parents for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _accumulate(tensor: Tensor, grad):
    if not (tensor.requires_grad or tensor._parents):
        return
    grad = grad.astype(tensor.data.dtype, copy=False)
    if tensor.grad is None:
        tensor.grad = grad.copy()
    else:
        tensor.grad = tensor.grad + grad


def constant(data, dtype=np.float32) -> Tensor:
    return Tensor(np.asarray(data, dtype=dtype))


def parameter(data, dtype=np.float32) -> Tensor:
    return Tensor(np.asarray(data, dtype=dtype), requires_grad=True)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: {a.shape} @ {b.shape}")
    y = a.data @ b.data

    def backward(g):
        _accumulate(a, g @ b.data.T)
        _accumulate(b, a.data.T @ g)
    return _result(y, (a, b), backward)


def _unbroadcast(grad, shape):
    """Reduce a gradient back to the shape it was broadcast from."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def add(a: Tensor, b: Tensor) -> Tensor:
    try:
        y = a.data + b.data
    except ValueError:
        raise ShapeError(f"add: {a.shape} + {b.shape}") from None

    def backward(g):
        _accumulate(a, _unbroadcast(g, a.shape))
        _accumulate(b, _unbroadcast(g, b.shape))
    return _result(y, (a, b), backward)


def scale(x: Tensor, c: float) -> Tensor:
    y = x.data * x.data.dtype.type(c)

    def backward(g):
        _accumulate(x, g * x.data.dtype.type(c))
    return _result(y, (x,), backward)


def relu(x: Tensor) -> Tensor:
    y = np.maximum(x.data, 0)

    def backward(g):
        _accumulate(x, g * (x.data > 0))
    return _result(y, (x,), backward)


def transpose(x: Tensor) -> Tensor:
    if x.data.ndim != 2:
        raise ShapeError(f"transpose: expected 2-d, got {x.shape}")

    def backward(g):
        _accumulate(x, g.T)
    return _result(x.data.T.copy(), (x,), backward)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    if x.data.ndim != 2:
        raise ShapeError(f"layer_norm: expected 2-d, got {x.shape}")
    d = x.shape[1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise ShapeError(f"layer_norm: gain/bias {gain.shape}/{bias.shape} vs width {d}")
    mu = x.data.mean(axis=1, keepdims=True)
    var = x.data.var(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    y = xhat * gain.data + bias.data

    def backward(g):
        gg = g * gain.data
        term = gg - gg.mean(axis=1, keepdims=True) \
            - xhat * (gg * xhat).mean(axis=1, keepdims=True)
        _accumulate(x, term * inv)
        _accumulate(gain, (g * xhat).sum(axis=0))
        _accumulate(bias, g.sum(axis=0))
    return _result(y, (x, gain, bias), backward)


def row_softmax(x: Tensor) -> Tensor:
    if x.data.ndim != 2:
        raise ShapeError(f"row_softmax: expected 2-d, got {x.shape}")
    shifted = x.data - x.data.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=1, keepdims=True)

    def backward(g):
        dot = (g * y).sum(axis=1, keepdims=True)
        _accumulate(x, y * (g - dot))
    return _result(y, (x,), backward)


def mean_pool_rows(x: Tensor) -> Tensor:
    if x.data.ndim != 2 or x.shape[0] == 0:
        raise ShapeError(f"mean_pool_rows: need a nonempty 2-d tensor, got {x.shape}")
    n = x.shape[0]
    y = x.data.mean(axis=0, keepdims=True)

    def backward(g):
        _accumulate(x, np.repeat(g / n, n, axis=0))
    return _result(y, (x,), backward)


def gather_rows(x: Tensor, indices) -> Tensor:
    idx = np.asarray(indices, dtype=np.intp)
    if x.data.ndim != 2:
        raise ShapeError(f"gather_rows: expected 2-d, got {x.shape}")
    y = x.data[idx]

    def backward(g):
        dx = np.zeros_like(x.data)
        np.add.at(dx, idx, g)
        _accumulate(x, dx)
    return _result(y, (x,), backward)


def concat(tensors, axis: int = 1) -> Tensor:
    tensors = list(tensors)
    try:
        y = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        raise ShapeError(
            f"concat: shapes {[t.shape for t in tensors]} along axis {axis}") from None
    sizes = [t.shape[axis] for t in tensors]

    def backward(g):
        start = 0
        for t, size in zip(tensors, sizes):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(start, start + size)
            _accumulate(t, g[tuple(sl)])
            start += size
    return _result(y, tuple(tensors), backward)


LOG_FLOOR = 1e-12


def cross_entropy_rows(probs: Tensor, targets: Tensor) -> Tensor:
    """Mean over rows of -sum_j targets * log(probs), log floored at 1e-12."""
    if probs.shape != targets.shape or probs.data.ndim != 2:
        raise ShapeError(f"cross_entropy_rows: {probs.shape} vs {targets.shape}")
    n = probs.shape[0]
    if n == 0:
        raise ShapeError("cross_entropy_rows: no rows")
    clamped = np.maximum(probs.data, LOG_FLOOR)
    y = -(targets.data * np.log(clamped)).sum() / n

    def backward(g):
        live = probs.data >= LOG_FLOOR
        _accumulate(probs, g * (-targets.data / clamped) * live / n)
        _accumulate(targets, g * (-np.log(clamped)) / n)
    return _result(np.asarray(y, dtype=probs.dtype), (probs, targets), backward)


def squared_error(pred: Tensor, target: Tensor) -> Tensor:
    """Sum of squared differences divided by the number of rows."""
    if pred.shape != target.shape:
        raise ShapeError(f"squared_error: {pred.shape} vs {target.shape}")
    n = pred.shape[0] if pred.data.ndim else 1
    if n == 0:
        raise ShapeError("squared_error: no rows")
    diff = pred.data - target.data
    y = (diff * diff).sum() / n

    def backward(g):
        _accumulate(pred, g * 2 * diff / n)
        _accumulate(target, g * (-2) * diff / n)
    return _result(np.asarray(y, dtype=pred.dtype), (pred, target), backward)


def gradient_check(scalar_fn, params: dict, eps: float = 1e-5,
                   order: int = 2) -> dict:
    """Compare analytic gradients of scalar_fn() with central differences.

    scalar_fn must be deterministic and read the parameter tensors in place.
    order=2 is the plain two-point central difference; order=4 uses the
    five-point stencil, which keeps truncation error manageable through deep
    compositions. Returns {name: max relative error}, with relative error
    computed against max(|analytic|, |numeric|, 1e-8). Non-finite entries
    report inf.
    """
    if order not in (2, 4):
        raise ValueError("order must be 2 or 4")
    for p in params.values():
        p.zero_grad()
    out = scalar_fn()
    out.backward()
    analytic = {}
    for name, p in params.items():
        analytic[name] = (np.zeros_like(p.data) if p.grad is None
                          else p.grad.copy())

    report = {}
    for name, p in params.items():
        flat = p.data.reshape(-1)
        worst = 0.0
        for i in range(flat.size):
            keep = flat[i]

            def at(x):
                flat[i] = x
                value = scalar_fn().item()
                flat[i] = keep
                return value

            if order == 2:
                numeric = (at(keep + eps) - at(keep - eps)) / (2 * eps)
            else:
                numeric = (at(keep - 2 * eps) - 8 * at(keep - eps)
                           + 8 * at(keep + eps) - at(keep + 2 * eps)) / (12 * eps)
            a = analytic[name].reshape(-1)[i]
            if not np.isfinite(numeric) or not np.isfinite(a):
                worst = float("inf")
                break
            denom = max(abs(a), abs(numeric), 1e-8)
            worst = max(worst, abs(a - numeric) / denom)
        report[name] = worst
    return report
