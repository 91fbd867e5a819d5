"""A small reverse-mode autodiff core over float64 numpy arrays.

Every op returns a :class:`Tensor` that remembers its parents and a closure
mapping the output gradient to parent gradients. ``Tensor.backward`` walks
the graph in reverse topological order. Leaves bound to a
:class:`ParamStore` accumulate straight into the store's gradient arrays.
"""

from __future__ import annotations

import math
from typing import Callable, Optional

import numpy as np

from .errors import (
    AllPadError,
    EmptyRowError,
    NonFiniteError,
    NonFiniteGradientError,
    ShapeError,
)

MASK_VALUE = -1e9


class Tensor:
    __slots__ = ("data", "grad", "parents", "backward_fn")

    def __init__(self, data, parents=(), backward_fn=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: Optional[np.ndarray] = None
        self.parents: tuple[Tensor, ...] = parents
        self.backward_fn: Optional[Callable] = backward_fn

    @property
    def shape(self):
        return self.data.shape

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape})"

    def _accumulate(self, g):
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64, copy=True)
        else:
            self.grad += g

    def backward(self, grad=None):
        order: list[Tensor] = []
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
            for p in node.parents:
                if id(p) not in seen:
                    stack.append((p, False))
        self._accumulate(np.ones_like(self.data) if grad is None else grad)
        for node in reversed(order):
            if node.backward_fn is not None and node.grad is not None:
                grads = node.backward_fn(node.grad)
                for parent, g in zip(node.parents, grads):
                    if g is not None:
                        parent._accumulate(g)

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return add(self, scale(as_tensor(other), -1.0))

    def __mul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# --------------------------------------------------------------------------
# elementary ops


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data + b.data
    return Tensor(out, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return Tensor(
        a.data * b.data,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
    )


def scale(a, c: float) -> Tensor:
    a = as_tensor(a)
    return Tensor(a.data * c, (a,), lambda g: (g * c,))


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.shape[-1] != b.data.shape[-2 if b.data.ndim > 1 else 0]:
        raise ShapeError(f"matmul shapes {a.shape} and {b.shape} do not conform")

    def backward(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return Tensor(a.data @ b.data, (a, b), backward)


def relu(a) -> Tensor:
    a = as_tensor(a)
    on = a.data > 0
    return Tensor(np.where(on, a.data, 0.0), (a,), lambda g: (g * on,))


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    return Tensor(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def transpose(a, axes) -> Tensor:
    a = as_tensor(a)
    inverse = np.argsort(axes)
    return Tensor(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inverse),))


def concat(tensors, axis) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]
    return Tensor(
        np.concatenate([t.data for t in tensors], axis=axis),
        tuple(tensors),
        lambda g: tuple(np.split(g, splits, axis=axis)),
    )


def sum_all(a) -> Tensor:
    a = as_tensor(a)
    return Tensor(a.data.sum(), (a,), lambda g: (np.broadcast_to(g, a.shape),))


def embedding(table, ids) -> Tensor:
    """Row lookup ``table[ids]``; gradient scatters back into the rows used."""
    table = as_tensor(table)
    ids = np.asarray(ids, dtype=np.int64)

    def backward(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, ids, g)
        return (gt,)

    return Tensor(table.data[ids], (table,), backward)


def gather2d(table, rows, cols) -> Tensor:
    """Elementwise lookup ``table[rows, cols]`` with broadcasting index arrays."""
    table = as_tensor(table)
    rows, cols = np.broadcast_arrays(np.asarray(rows), np.asarray(cols))

    def backward(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, (rows, cols), g)
        return (gt,)

    return Tensor(table.data[rows, cols], (table,), backward)


def dropout(a, rate: float, rng: Optional[np.random.Generator]) -> Tensor:
    if rate == 0.0 or rng is None:
        return as_tensor(a)
    keep = (rng.random(as_tensor(a).shape) >= rate) / (1.0 - rate)
    return mul(a, keep)


# --------------------------------------------------------------------------
# composite primitives with their own backward


def masked_softmax(logits, allow) -> Tensor:
    """Row softmax over allowed keys; weights at disallowed keys are exactly 0."""
    logits = as_tensor(logits)
    allow = np.broadcast_to(np.asarray(allow, dtype=bool), logits.shape)
    if not allow.any(axis=-1).all():
        raise EmptyRowError("attention row with no allowed key")
    z = logits.data + np.where(allow, 0.0, MASK_VALUE)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    w = e / e.sum(axis=-1, keepdims=True)
    w = np.where(allow, w, 0.0)

    def backward(g):
        return (w * (g - (g * w).sum(axis=-1, keepdims=True)),)

    return Tensor(w, (logits,), backward)


def masked_attention(Q, K, V, allow, bias=None, return_weights=False):
    """Scaled dot-product attention with additive bias and a hard key mask.

    Works on any leading batch/head dimensions: ``Q`` is ``(..., n, d_h)``,
    ``K`` and ``V`` are ``(..., n_kv, d_h)``, ``allow`` and ``bias`` broadcast
    to ``(..., n, n_kv)``.
    """
    Q, K, V = as_tensor(Q), as_tensor(K), as_tensor(V)
    d_h = Q.shape[-1]
    if K.shape[-1] != d_h or K.shape[-2] != V.shape[-2]:
        raise ShapeError(f"attention shapes Q{Q.shape} K{K.shape} V{V.shape} do not conform")
    nd = K.data.ndim
    logits = scale(matmul(Q, transpose(K, tuple(range(nd - 2)) + (nd - 1, nd - 2))), 1.0 / math.sqrt(d_h))
    allow = np.asarray(allow, dtype=bool)
    try:
        fits = np.broadcast_shapes(allow.shape, logits.shape) == logits.shape
    except ValueError:
        fits = False
    if not fits:
        raise ShapeError(f"mask shape {allow.shape} does not broadcast to {logits.shape}")
    if bias is not None:
        bias = as_tensor(bias)
        if np.broadcast_shapes(bias.shape, logits.shape) != logits.shape:
            raise ShapeError(f"bias shape {bias.shape} does not broadcast to {logits.shape}")
        logits = add(logits, bias)
    weights = masked_softmax(logits, allow)
    out = matmul(weights, V)
    return (out, weights) if return_weights else out


def layer_norm(x, gamma, beta, eps: float = 1e-5) -> Tensor:
    """Per-row normalization with population variance."""
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise ShapeError(f"layer_norm params {gamma.shape}/{beta.shape} do not match width {d}")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv

    def backward(g):
        gx_hat = g * gamma.data
        gx = inv * (gx_hat - gx_hat.mean(axis=-1, keepdims=True)
                    - xhat * (gx_hat * xhat).mean(axis=-1, keepdims=True))
        lead = tuple(range(g.ndim - 1))
        return gx, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return Tensor(xhat * gamma.data + beta.data, (x, gamma, beta), backward)


def feed_forward(x, W1, b1, W2, b2) -> Tensor:
    x, W1, W2 = as_tensor(x), as_tensor(W1), as_tensor(W2)
    if x.shape[-1] != W1.shape[0] or W1.shape[1] != W2.shape[0] or W2.shape[1] != x.shape[-1]:
        raise ShapeError(f"feed_forward shapes x{x.shape} W1{W1.shape} W2{W2.shape} do not conform")
    return add(matmul(relu(add(matmul(x, W1), b1)), W2), b2)


def cross_entropy(logits, targets, pad_id: int = 0, reduction: str = "mean"):
    """Mean negative log-likelihood over non-pad targets.

    Returns ``(loss, count)``. With ``reduction="none"`` the loss tensor holds
    the per-position terms (zero at padding) instead of the mean.
    """
    logits = as_tensor(logits)
    targets = np.asarray(targets, dtype=np.int64)
    if targets.shape != logits.shape[:-1]:
        raise ShapeError(f"targets {targets.shape} do not match logits {logits.shape}")
    V = logits.shape[-1]
    if targets.size and (targets.min() < 0 or targets.max() >= V):
        raise ShapeError("target id out of range")
    keep = targets != pad_id
    count = int(keep.sum())
    if count == 0:
        raise AllPadError("every target position is padding")
    z = logits.data - logits.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    logp = z - lse
    picked = np.take_along_axis(logp, targets[..., None], axis=-1)[..., 0]
    nll = np.where(keep, -picked, 0.0)
    probs = np.exp(logp)
    onehot = np.zeros_like(probs)
    np.put_along_axis(onehot, targets[..., None], 1.0, axis=-1)
    dlogits = (probs - onehot) * keep[..., None]

    if reduction == "none":
        return Tensor(nll, (logits,), lambda g: (dlogits * g[..., None],)), count
    return Tensor(nll.sum() / count, (logits,), lambda g: (dlogits * (g / count),)), count


# --------------------------------------------------------------------------
# parameters, optimizer, gradient checking


class ParamStore:
    """Named parameters with parallel gradient and Adam moment arrays."""

    def __init__(self, params: Optional[dict] = None):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.step = 0
        for name, value in (params or {}).items():
            self.add(name, value)

    def add(self, name: str, value) -> None:
        if name in self.params:
            raise KeyError(f"duplicate parameter {name!r}")
        arr = np.array(value, dtype=np.float64)
        self.params[name] = arr
        self.grads[name] = np.zeros_like(arr)
        self.m[name] = np.zeros_like(arr)
        self.v[name] = np.zeros_like(arr)

    def __contains__(self, name):
        return name in self.params

    def __getitem__(self, name) -> np.ndarray:
        return self.params[name]

    def names(self) -> list[str]:
        return list(self.params)

    def leaf(self, name: str) -> Tensor:
        """A graph leaf whose gradient accumulates into ``grads[name]``."""
        t = Tensor(self.params[name])
        t.grad = self.grads[name]
        return t

    def zero_grad(self) -> None:
        for g in self.grads.values():
            g.fill(0.0)

    def num_parameters(self) -> int:
        return sum(p.size for p in self.params.values())

    def copy(self) -> "ParamStore":
        other = ParamStore()
        for name in self.params:
            other.add(name, self.params[name])
            other.grads[name][...] = self.grads[name]
            other.m[name][...] = self.m[name]
            other.v[name][...] = self.v[name]
        other.step = self.step
        return other


def adam_step(params: ParamStore, lr: float, t: Optional[int] = None,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> ParamStore:
    """One bias-corrected Adam update, in place. ``t`` defaults to the next step."""
    t = params.step + 1 if t is None else t
    if t < 1:
        raise ValueError("Adam step counter starts at 1")
    for name, g in params.grads.items():
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradientError(f"non-finite gradient for {name!r}")
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for name, p in params.params.items():
        g = params.grads[name]
        m = params.m[name]
        v = params.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        p -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
    params.step = t
    return params


def grad_check(f: Callable[[ParamStore], Tensor], params: ParamStore, eps: float = 1e-5,
               names=None) -> float:
    """Largest relative error between backprop and central differences.

    ``f`` builds a scalar loss graph from the store. The relative error per
    coordinate is ``|a - n| / max(1e-8, |a| + |n|)``.
    """
    names = params.names() if names is None else list(names)
    params.zero_grad()
    loss = f(params)
    if not np.isfinite(loss.data).all():
        raise NonFiniteError("loss is not finite")
    loss.backward()
    analytic = {name: params.grads[name].copy() for name in names}

    def value() -> float:
        out = float(f(params).data)
        if not math.isfinite(out):
            raise NonFiniteError("loss became non-finite under perturbation")
        return out

    worst = 0.0
    for name in names:
        p = params.params[name]
        flat = p.reshape(-1)
        a_flat = analytic[name].reshape(-1)
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + eps
            plus = value()
            flat[k] = orig - eps
            minus = value()
            flat[k] = orig
            numeric = (plus - minus) / (2.0 * eps)
            a = a_flat[k]
            err = abs(a - numeric) / max(1e-8, abs(a) + abs(numeric))
            worst = max(worst, err)
    params.zero_grad()
    return worst
