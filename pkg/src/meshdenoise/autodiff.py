"""Minimal reverse-mode automatic differentiation over dense float64 arrays.

A ``Tensor`` wraps a numpy array plus an optional backward closure that
scatters the output gradient to the op's parents. Calling ``backward()``
on a scalar walks the tape in reverse topological order. Everything is
64-bit, which keeps finite-difference gradient checks tight.

Gradient buffers are never mutated in place; accumulation allocates, so a
closure may hand out views of its incoming gradient safely.
"""

from __future__ import annotations

from contextlib import contextmanager

import numpy as np

_GRAD_ENABLED = [True]


@contextmanager
def no_grad():
    """Disable taping inside the block (inference mode)."""
    _GRAD_ENABLED.append(False)
    try:
        yield
    finally:
        _GRAD_ENABLED.pop()


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        if self.data.size != 1:
            raise ValueError("backward() requires a scalar tensor")
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in seen:
                    stack.append((parent, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    t.grad = g if t.grad is None else t.grad + g


def _node(data: np.ndarray, parents: tuple[Tensor, ...], backward) -> Tensor:
    out = Tensor(data)
    if _GRAD_ENABLED[-1] and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gs, ss) in enumerate(zip(g.shape, shape)) if ss == 1 and gs != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _split(x) -> tuple[np.ndarray, Tensor | None]:
    if isinstance(x, Tensor):
        return x.data, x
    return np.asarray(x, dtype=np.float64), None


def add(a, b) -> Tensor:
    ad, at = _split(a)
    bd, bt = _split(b)

    def backward(g):
        if at is not None and at.requires_grad:
            _accumulate(at, _unbroadcast(g, ad.shape))
        if bt is not None and bt.requires_grad:
            _accumulate(bt, _unbroadcast(g, bd.shape))

    return _node(ad + bd, tuple(t for t in (at, bt) if t is not None), backward)


def sub(a, b) -> Tensor:
    ad, at = _split(a)
    bd, bt = _split(b)

    def backward(g):
        if at is not None and at.requires_grad:
            _accumulate(at, _unbroadcast(g, ad.shape))
        if bt is not None and bt.requires_grad:
            _accumulate(bt, _unbroadcast(-g, bd.shape))

    return _node(ad - bd, tuple(t for t in (at, bt) if t is not None), backward)


def mul(a, b) -> Tensor:
    ad, at = _split(a)
    bd, bt = _split(b)

    def backward(g):
        if at is not None and at.requires_grad:
            _accumulate(at, _unbroadcast(g * bd, ad.shape))
        if bt is not None and bt.requires_grad:
            _accumulate(bt, _unbroadcast(g * ad, bd.shape))

    return _node(ad * bd, tuple(t for t in (at, bt) if t is not None), backward)


def div(a, b) -> Tensor:
    ad, at = _split(a)
    bd, bt = _split(b)

    def backward(g):
        if at is not None and at.requires_grad:
            _accumulate(at, _unbroadcast(g / bd, ad.shape))
        if bt is not None and bt.requires_grad:
            _accumulate(bt, _unbroadcast(-g * ad / (bd * bd), bd.shape))

    return _node(ad / bd, tuple(t for t in (at, bt) if t is not None), backward)


def power(a: Tensor, exponent: float) -> Tensor:
    exponent = float(exponent)

    def backward(g):
        _accumulate(a, g * exponent * a.data ** (exponent - 1.0))

    return _node(a.data**exponent, (a,), backward)


def sqrt(a: Tensor) -> Tensor:
    out_data = np.sqrt(a.data)

    def backward(g):
        _accumulate(a, g * (0.5 / out_data))

    return _node(out_data, (a,), backward)


def matmul(a, b) -> Tensor:
    """a (..., M, K) @ b (K, N); the right operand must be 2-D."""
    ad, at = _split(a)
    bd, bt = _split(b)
    if bd.ndim != 2:
        raise ValueError(f"matmul right operand must be 2-D, got {bd.shape}")
    k = bd.shape[0]
    if ad.shape[-1] != k:
        raise ValueError(f"matmul shape mismatch: {ad.shape} @ {bd.shape}")

    def backward(g):
        if at is not None and at.requires_grad:
            _accumulate(at, g @ bd.T)
        if bt is not None and bt.requires_grad:
            _accumulate(bt, ad.reshape(-1, k).T @ g.reshape(-1, bd.shape[1]))

    return _node(ad @ bd, tuple(t for t in (at, bt) if t is not None), backward)


def reshape(a: Tensor, shape) -> Tensor:
    old = a.data.shape

    def backward(g):
        _accumulate(a, g.reshape(old))

    return _node(a.data.reshape(shape), (a,), backward)


def concat(tensors: list, axis: int = -1) -> Tensor:
    datas = []
    nodes = []
    for t in tensors:
        d, n = _split(t)
        datas.append(d)
        nodes.append(n)
    sizes = [d.shape[axis] for d in datas]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        for i, n in enumerate(nodes):
            if n is not None and n.requires_grad:
                sl = [slice(None)] * g.ndim
                sl[axis] = slice(offsets[i], offsets[i + 1])
                _accumulate(n, g[tuple(sl)])

    return _node(
        np.concatenate(datas, axis=axis),
        tuple(n for n in nodes if n is not None),
        backward,
    )


def reduce_sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    def backward(g):
        if axis is None:
            _accumulate(a, np.broadcast_to(g, a.data.shape).copy())
        else:
            ge = g if keepdims else np.expand_dims(g, axis)
            _accumulate(a, np.broadcast_to(ge, a.data.shape).copy())

    return _node(a.data.sum(axis=axis, keepdims=keepdims), (a,), backward)


def reduce_mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        count = a.data.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        count = int(np.prod([a.data.shape[ax] for ax in axes]))
    return mul(reduce_sum(a, axis=axis, keepdims=keepdims), 1.0 / count)


def reduce_max(a: Tensor, axis: int) -> Tensor:
    """Max along one axis; ties route the gradient to the lowest index."""
    arg = np.expand_dims(a.data.argmax(axis=axis), axis)
    out = np.take_along_axis(a.data, arg, axis).squeeze(axis)

    def backward(g):
        buf = np.zeros_like(a.data)
        np.put_along_axis(buf, arg, np.expand_dims(g, axis), axis)
        _accumulate(a, buf)

    return _node(out, (a,), backward)


def leaky_relu(a: Tensor, negative_slope: float = 0.01) -> Tensor:
    negative = a.data < 0
    out = a.data.copy()
    out[negative] *= negative_slope

    def backward(g):
        dg = g.copy()
        dg[negative] *= negative_slope
        _accumulate(a, dg)

    return _node(out, (a,), backward)


def take_rows(a: Tensor, indices: np.ndarray) -> Tensor:
    """Row gather from a 2-D tensor; output shape = indices.shape + (C,)."""
    if a.data.ndim != 2:
        raise ValueError("take_rows expects a 2-D tensor")
    indices = np.asarray(indices, dtype=np.int64)

    def backward(g):
        buf = np.zeros_like(a.data)
        np.add.at(buf, indices.ravel(), g.reshape(-1, a.data.shape[1]))
        _accumulate(a, buf)

    return _node(a.data[indices], (a,), backward)


def expand_to(a: Tensor, shape) -> Tensor:
    """Broadcast to a larger shape; backward sums the broadcast axes."""
    old = a.data.shape

    def backward(g):
        _accumulate(a, _unbroadcast(g, old))

    return _node(np.broadcast_to(a.data, shape).copy(), (a,), backward)


def masked_fill(a: Tensor, keep_mask: np.ndarray, value: float) -> Tensor:
    """Keep entries where the mask is true, substitute ``value`` elsewhere.

    The mask is broadcast against the data; no gradient flows to filled
    positions.
    """
    keep = np.broadcast_to(np.asarray(keep_mask, dtype=bool), a.data.shape)

    def backward(g):
        _accumulate(a, np.where(keep, g, 0.0))

    return _node(np.where(keep, a.data, value), (a,), backward)


def edge_linear(x: Tensor, flat_idx: np.ndarray, weight: Tensor, bias: Tensor) -> Tensor:
    """Fused per-edge feature map: linear([f_i ; f_j - f_i]) for every
    (node, neighbor-slot) pair.

    x (B, N, C) node features; flat_idx (B, N, D) row indices into the
    flattened (B*N, C) view selecting each slot's neighbor; weight
    (2C, C_out); bias (C_out). Equivalent to gathering both endpoint
    features, concatenating [f_i ; f_j - f_i] and applying one linear
    layer, but in a single tape node.
    """
    b, n, c = x.data.shape
    d = flat_idx.shape[2]
    c_out = weight.data.shape[1]
    if weight.data.shape[0] != 2 * c:
        raise ValueError(f"weight expects {2 * c} input channels, got {weight.data.shape[0]}")
    w_self = weight.data[:c]
    w_diff = weight.data[c:]
    flat = x.data.reshape(b * n, c)
    diff = flat[flat_idx] - x.data[:, :, None, :]
    t_self = (flat @ w_self).reshape(b, n, 1, c_out)
    out = (diff.reshape(-1, c) @ w_diff).reshape(b, n, d, c_out)
    out += t_self
    out += bias.data

    def backward(g):
        g2 = g.reshape(-1, c_out)
        g_self = g.sum(axis=2).reshape(-1, c_out)
        if bias.requires_grad:
            _accumulate(bias, g2.sum(axis=0))
        if weight.requires_grad:
            dw = np.empty_like(weight.data)
            dw[:c] = flat.T @ g_self
            dw[c:] = diff.reshape(-1, c).T @ g2
            _accumulate(weight, dw)
        if x.requires_grad:
            g_diff = g2 @ w_diff.T
            dx = g_self @ w_self.T
            dx -= g_diff.reshape(b, n, d, c).sum(axis=2).reshape(-1, c)
            np.add.at(dx, flat_idx.ravel(), g_diff)
            _accumulate(x, dx.reshape(b, n, c))

    return _node(out, (x, weight, bias), backward)


def batch_norm(
    x: Tensor, gamma: Tensor, beta: Tensor, eps: float
) -> tuple[Tensor, np.ndarray, np.ndarray]:
    """Fused batch normalization over all axes but the last (channels).

    Returns the normalized tensor plus the batch mean and (biased) batch
    variance per channel for running-statistics updates.
    """
    axes = tuple(range(x.data.ndim - 1))
    count = x.data.size // x.data.shape[-1]
    mu = x.data.mean(axis=axes, keepdims=True)
    var = x.data.var(axis=axes, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    out = xhat * gamma.data + beta.data

    def backward(g):
        dbeta = g.sum(axis=axes)
        dgamma = (g * xhat).sum(axis=axes)
        if gamma.requires_grad:
            _accumulate(gamma, dgamma)
        if beta.requires_grad:
            _accumulate(beta, dbeta)
        if x.requires_grad:
            scale = (gamma.data * inv).ravel()
            dx = g * scale
            dx += xhat * (-scale * dgamma / count)
            dx += -scale * dbeta / count
            _accumulate(x, dx)

    return _node(out, (x, gamma, beta), backward), mu.ravel(), var.ravel()
