"""Array-valued reverse-mode differentiation.

A :class:`Tensor` wraps a numpy array and remembers the operation that
produced it.  Calling :func:`backward` on a result walks the recorded graph
in reverse topological order and accumulates ``.grad`` on every tensor that
requires it.  Only the handful of operations the renderer needs exist.

Broadcasting is supported in the elementwise binary ops only, and only in
the numpy sense (gradients are summed back over broadcast axes).
"""

from __future__ import annotations

import contextlib

import numpy as np

_RECORD = True


@contextlib.contextmanager
def no_grad():
    """Evaluate without recording the graph (inference, rendering)."""
    global _RECORD
    prev = _RECORD
    _RECORD = False
    try:
        yield
    finally:
        _RECORD = prev


def is_recording() -> bool:
    return _RECORD


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad=False, name=None):
        self.data = np.asarray(data)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = ()
        self._backward = None
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}{tag})"

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self):
        self.grad = None

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

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], tuple):
            shape = shape[0]
        return reshape(self, shape)


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    arr = np.asarray(x)
    if dtype is not None:
        arr = arr.astype(dtype, copy=False)
    return Tensor(arr)


def _coerce(a, b):
    """Lift python scalars / arrays to tensors sharing the other operand's dtype."""
    if not isinstance(a, Tensor):
        a = Tensor(np.asarray(a, dtype=b.data.dtype if isinstance(b, Tensor) else None))
    if not isinstance(b, Tensor):
        b = Tensor(np.asarray(b, dtype=a.data.dtype))
    return a, b


def _make(data, parents, backward) -> Tensor:
    out = Tensor(data)
    if _RECORD and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
    return out


def _accumulate(t: Tensor, g: np.ndarray):
    if not t.requires_grad:
        return
    if g.dtype != t.data.dtype:
        g = g.astype(t.data.dtype)
    if t.grad is None:
        t.grad = np.array(g, copy=True)
    else:
        t.grad = t.grad + g


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def backward(out: Tensor, grad=None):
    """Accumulate d(out)/d(leaf) into every leaf's ``.grad``.

    ``grad`` is the upstream gradient; it defaults to one for a scalar
    output and is required otherwise.
    """
    if grad is None:
        if out.data.size != 1:
            raise ValueError("upstream gradient required for non-scalar output")
        grad = np.ones_like(out.data)
    grad = np.asarray(grad, dtype=out.data.dtype)
    if grad.shape != out.data.shape:
        raise ValueError(f"upstream gradient shape {grad.shape} != output shape {out.data.shape}")
    if not out.requires_grad:
        return

    order = []
    seen = set()
    stack = [(out, False)]
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
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))

    grads = {id(out): grad}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            _accumulate(node, g)
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg


# ---------------------------------------------------------------- elementwise


def add(a, b) -> Tensor:
    a, b = _coerce(a, b)
    sa, sb = a.data.shape, b.data.shape
    return _make(a.data + b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = _coerce(a, b)
    sa, sb = a.data.shape, b.data.shape
    return _make(a.data - b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b) -> Tensor:
    a, b = _coerce(a, b)
    ad, bd = a.data, b.data

    def bw(g):
        return (
            _unbroadcast(g * bd, ad.shape) if a.requires_grad else None,
            _unbroadcast(g * ad, bd.shape) if b.requires_grad else None,
        )

    return _make(ad * bd, (a, b), bw)


def div(a, b) -> Tensor:
    a, b = _coerce(a, b)
    ad, bd = a.data, b.data
    out = ad / bd

    def bw(g):
        return (
            _unbroadcast(g / bd, ad.shape) if a.requires_grad else None,
            _unbroadcast(-g * out / bd, bd.shape) if b.requires_grad else None,
        )

    return _make(out, (a, b), bw)


def neg(a: Tensor) -> Tensor:
    return _make(-a.data, (a,), lambda g: (-g,))


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * out,))


def neg_expm1_neg(a: Tensor) -> Tensor:
    """``1 - exp(-a)`` computed without cancellation."""
    out = -np.expm1(-a.data)
    e = np.exp(-a.data)
    return _make(out, (a,), lambda g: (g * e,))


def log(a: Tensor) -> Tensor:
    x = a.data
    return _make(np.log(x), (a,), lambda g: (g / x,))


def square(a: Tensor) -> Tensor:
    x = a.data
    return _make(x * x, (a,), lambda g: (2.0 * g * x,))


def sin(a: Tensor) -> Tensor:
    x = a.data
    return _make(np.sin(x), (a,), lambda g: (g * np.cos(x),))


def cos(a: Tensor) -> Tensor:
    x = a.data
    return _make(np.cos(x), (a,), lambda g: (-g * np.sin(x),))


def relu(a: Tensor) -> Tensor:
    x = a.data
    out = np.maximum(x, 0).astype(x.dtype, copy=False)
    return _make(out, (a,), lambda g: (g * (out > 0),))


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return _make(out, (a,), lambda g: (g * out * (1.0 - out),))


def softplus(a: Tensor) -> Tensor:
    x = a.data
    out = np.logaddexp(0, x).astype(x.dtype, copy=False)

    def bw(g):
        s = np.empty_like(x)
        pos = x >= 0
        s[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
        ex = np.exp(x[~pos])
        s[~pos] = ex / (1.0 + ex)
        return (g * s,)

    return _make(out, (a,), bw)


def clamp_min(a: Tensor, lo: float) -> Tensor:
    """``max(a, lo)``; gradient flows only where ``a > lo``."""
    x = a.data
    mask = x > lo
    return _make(np.where(mask, x, lo).astype(x.dtype, copy=False), (a,), lambda g: (g * mask,))


# ---------------------------------------------------------------- structural


def matmul(a, b) -> Tensor:
    a, b = _coerce(a, b)
    ad, bd = a.data, b.data
    if ad.ndim != 2 or bd.ndim != 2:
        raise ValueError("matmul expects 2-D operands")
    if ad.shape[1] != bd.shape[0]:
        raise ValueError(f"matmul shape mismatch {ad.shape} @ {bd.shape}")

    def bw(g):
        return (
            g @ bd.T if a.requires_grad else None,
            ad.T @ g if b.requires_grad else None,
        )

    return _make(ad @ bd, (a, b), bw)


def tsum(a: Tensor, axis=None, keepdims=False) -> Tensor:
    x = a.data
    out = x.sum(axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape),)

    return _make(np.asarray(out), (a,), bw)


def mean(a: Tensor) -> Tensor:
    return tsum(a) * (1.0 / a.data.size)


def cumsum_exclusive(a: Tensor, axis=-1) -> Tensor:
    """Running sum along ``axis`` that excludes the current element."""
    x = a.data
    axis = axis % x.ndim
    inc = np.cumsum(x, axis=axis)
    out = np.zeros_like(x)
    src = [slice(None)] * x.ndim
    dst = [slice(None)] * x.ndim
    src[axis] = slice(0, -1)
    dst[axis] = slice(1, None)
    out[tuple(dst)] = inc[tuple(src)]

    def bw(g):
        # d out_k / d x_j = 1 for j < k  ->  grad_j = sum_{k > j} g_k
        rev = np.flip(np.cumsum(np.flip(g, axis=axis), axis=axis), axis=axis)
        res = np.zeros_like(g)
        res[tuple(src)] = rev[tuple(dst)]
        return (res,)

    return _make(out, (a,), bw)


def concat(tensors, axis=-1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    datas = [t.data for t in tensors]
    out = np.concatenate(datas, axis=axis)
    sizes = np.cumsum([d.shape[axis] for d in datas])[:-1]

    def bw(g):
        return tuple(np.split(g, sizes, axis=axis))

    return _make(out, tuple(tensors), bw)


def stack(tensors, axis=-1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    out = np.stack([t.data for t in tensors], axis=axis)

    def bw(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(tensors)))

    return _make(out, tuple(tensors), bw)


def reshape(a: Tensor, shape) -> Tensor:
    x = a.data
    return _make(x.reshape(shape), (a,), lambda g: (g.reshape(x.shape),))


def _is_basic(index) -> bool:
    parts = index if isinstance(index, tuple) else (index,)
    return all(isinstance(p, (slice, int, type(None), type(Ellipsis))) for p in parts)


def getitem(a: Tensor, index) -> Tensor:
    x = a.data
    basic = _is_basic(index)

    def bw(g):
        res = np.zeros_like(x)
        if basic:
            # plain slicing never repeats an element
            res[index] = g
        else:
            np.add.at(res, index, g)
        return (res,)

    return _make(x[index], (a,), bw)


def take_rows(a: Tensor, rows: np.ndarray) -> Tensor:
    """Embedding lookup ``a[rows]`` for a 2-D parameter table."""
    x = a.data
    rows = np.asarray(rows)

    def bw(g):
        res = np.zeros_like(x)
        np.add.at(res, rows, g)
        return (res,)

    return _make(x[rows], (a,), bw)


def broadcast_to(a: Tensor, shape) -> Tensor:
    x = a.data
    return _make(np.broadcast_to(x, shape), (a,), lambda g: (_unbroadcast(g, x.shape),))
