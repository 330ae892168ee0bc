"""Array-valued reverse-mode automatic differentiation on top of numpy.

Every op returns a new :class:`Tensor` holding its parents and a closure
that pushes the output gradient back to them. :func:`backward` walks the
recorded graph in reverse topological order.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np
from scipy import sparse

DTYPE = np.float64


class DimensionError(ValueError):
    pass


class NumericError(FloatingPointError):
    pass


class GraphStateError(RuntimeError):
    pass


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(
        self,
        data,
        requires_grad: bool = False,
        parents: tuple["Tensor", ...] = (),
        backward: Callable[[np.ndarray], None] | None = None,
        name: str | None = None,
    ):
        self.data = np.asarray(data, dtype=DTYPE)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents = parents
        self._backward = backward
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        tag = f" name={self.name}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag})"

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(g, dtype=DTYPE, copy=True)
        else:
            self.grad += g

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if _needs_grad(other):
            return mul(self, reciprocal(other))
        return mul(self, 1.0 / as_tensor(other).data)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return take(self, index)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _needs_grad(x) -> bool:
    return isinstance(x, Tensor) and (x.requires_grad or x._backward is not None)


def _node(data: np.ndarray, parents: Sequence[Tensor], backward) -> Tensor:
    live = tuple(p for p in parents if _needs_grad(p))
    if not live:
        return Tensor(data)
    return Tensor(data, parents=tuple(parents), backward=backward)


def unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``g`` down to ``shape`` after numpy broadcasting."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _send(t: Tensor, g: np.ndarray) -> None:
    if _needs_grad(t):
        t._accumulate(unbroadcast(g, t.shape))


# ---------------------------------------------------------------- elementwise


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        _send(a, g)
        _send(b, g)

    return _node(a.data + b.data, (a, b), bw)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        _send(a, g)
        _send(b, -g)

    return _node(a.data - b.data, (a, b), bw)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        _send(a, g * b.data)
        _send(b, g * a.data)

    return _node(a.data * b.data, (a, b), bw)


def reciprocal(a) -> Tensor:
    a = as_tensor(a)
    out = 1.0 / a.data

    def bw(g):
        _send(a, -g * out * out)

    return _node(out, (a,), bw)


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)

    def bw(g):
        _send(a, g * (1.0 - out * out))

    return _node(out, (a,), bw)


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0

    def bw(g):
        _send(a, g * mask)

    return _node(a.data * mask, (a,), bw)


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)

    def bw(g):
        _send(a, g * out)

    return _node(out, (a,), bw)


def square(a: Tensor) -> Tensor:
    def bw(g):
        _send(a, 2.0 * g * a.data)

    return _node(a.data * a.data, (a,), bw)


# ---------------------------------------------------------------- reductions


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        _send(a, np.broadcast_to(g, a.shape))

    return _node(out, (a,), bw)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        n = a.data.size
    else:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        n = int(np.prod([a.shape[ax] for ax in axes]))
    return mul(tsum(a, axis=axis, keepdims=keepdims), 1.0 / n)


def norm(a: Tensor, axis) -> Tensor:
    """Euclidean norm over ``axis``; the gradient at an exact zero is zero."""
    out = np.sqrt((a.data * a.data).sum(axis=axis))

    def bw(g):
        safe = np.where(out > 0, out, 1.0)
        scale = np.where(out > 0, g / safe, 0.0)
        _send(a, a.data * np.expand_dims(scale, axis))

    return _node(out, (a,), bw)


# ---------------------------------------------------------------- linear algebra


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape[-1] != b.shape[-2 if b.ndim > 1 else 0]:
        raise DimensionError(f"matmul shape mismatch: {a.shape} @ {b.shape}")

    def bw(g):
        if _needs_grad(a):
            if a.ndim == 2 and g.ndim > 2:
                # (n, k) @ (..., k, m): fold the batch into columns
                gm = np.moveaxis(g, -2, 0).reshape(g.shape[-2], -1)
                bm = np.moveaxis(b.data, -2, 0).reshape(b.shape[-2], -1)
                a._accumulate(gm @ bm.T)
            else:
                _send(a, _mm(g, np.swapaxes(b.data, -1, -2)))
        if _needs_grad(b):
            if b.ndim == 2 and a.ndim > 2:
                # (..., n, k) @ (k, m): fold the batch into rows
                b._accumulate(a.data.reshape(-1, a.shape[-1]).T @ g.reshape(-1, g.shape[-1]))
            else:
                _send(b, np.swapaxes(a.data, -1, -2) @ g)

    if b.ndim == 2 and a.ndim > 2:
        out = (a.data.reshape(-1, a.shape[-1]) @ b.data).reshape(a.shape[:-1] + (b.shape[1],))
    elif a.ndim == 2 and b.ndim > 2:
        out = np.moveaxis(b.data, -2, 0).reshape(b.shape[-2], -1)
        out = np.moveaxis((a.data @ out).reshape((a.shape[0],) + b.shape[:-2] + (b.shape[-1],)), 0, -2)
    else:
        out = a.data @ b.data
    return _node(out, (a, b), bw)


# ---------------------------------------------------------------- shape ops


def reshape(a: Tensor, shape) -> Tensor:
    def bw(g):
        _send(a, g.reshape(a.shape))

    return _node(a.data.reshape(shape), (a,), bw)


def transpose(a: Tensor, axes) -> Tensor:
    inv = np.argsort(axes)

    def bw(g):
        _send(a, np.transpose(g, inv))

    return _node(np.transpose(a.data, axes), (a,), bw)


def swapaxes(a: Tensor, i: int, j: int) -> Tensor:
    def bw(g):
        _send(a, np.swapaxes(g, i, j))

    return _node(np.swapaxes(a.data, i, j), (a,), bw)


def take(a: Tensor, index) -> Tensor:
    """Basic or advanced indexing; repeated indices accumulate on the way back."""

    def bw(g):
        if _needs_grad(a):
            if isinstance(index, np.ndarray) and index.ndim == 1 and index.dtype.kind in "iu":
                a._accumulate(_scatter_rows(g, index, a.shape[0]).reshape(a.shape))
            else:
                full = np.zeros(a.shape, dtype=DTYPE)
                np.add.at(full, index, g)
                a._accumulate(full)

    return _node(a.data[index], (a,), bw)


def _mm(x: np.ndarray, w: np.ndarray) -> np.ndarray:
    if w.ndim == 2 and x.ndim > 2:
        return (x.reshape(-1, x.shape[-1]) @ w).reshape(x.shape[:-1] + (w.shape[1],))
    return x @ w


def _scatter_rows(rows: np.ndarray, index: np.ndarray, n: int) -> np.ndarray:
    """Sum ``rows`` into ``n`` buckets by ``index`` along axis 0."""
    sel = sparse.csr_matrix((np.ones(len(index)), (index, np.arange(len(index)))),
                            shape=(n, len(index)))
    return np.asarray(sel @ rows.reshape(len(index), -1)).reshape((n,) + rows.shape[1:])


def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in ts]
    bounds = np.cumsum([0] + sizes)

    def bw(g):
        for t, lo, hi in zip(ts, bounds[:-1], bounds[1:]):
            if _needs_grad(t):
                sl = [slice(None)] * g.ndim
                sl[axis] = slice(lo, hi)
                t._accumulate(g[tuple(sl)])

    return _node(np.concatenate([t.data for t in ts], axis=axis), ts, bw)


def segment_mean(a: Tensor, segment_ids: np.ndarray, n_segments: int) -> Tensor:
    """Mean of rows of ``a`` grouped by ``segment_ids``; empty segments are zero."""
    segment_ids = np.asarray(segment_ids, dtype=np.int64)
    counts = np.bincount(segment_ids, minlength=n_segments).astype(DTYPE)
    out = _scatter_rows(a.data, segment_ids, n_segments)
    inv = np.where(counts > 0, 1.0 / np.maximum(counts, 1.0), 0.0)
    inv = inv.reshape((-1,) + (1,) * (a.ndim - 1))
    out *= inv

    def bw(g):
        _send(a, (g * inv)[segment_ids])

    return _node(out, (a,), bw)


# ---------------------------------------------------------------- fused layers


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        _send(a, out * (g - (g * out).sum(axis=axis, keepdims=True)))

    return _node(out, (a,), bw)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = xc * rstd
    out = xhat * gain.data + bias.data
    n = x.shape[-1]

    def bw(g):
        _send(gain, g * xhat)
        _send(bias, g)
        if _needs_grad(x):
            gx = g * gain.data
            dx = rstd * (gx - gx.mean(axis=-1, keepdims=True)
                         - xhat * (gx * xhat).sum(axis=-1, keepdims=True) / n)
            x._accumulate(dx)

    return _node(out, (x, gain, bias), bw)


# ---------------------------------------------------------------- driver


def backward(loss: Tensor) -> None:
    """Populate ``.grad`` on every tensor reachable from ``loss``.

    The graph is released afterwards, so a second call on the same loss
    raises :class:`GraphStateError`.
    """
    if loss._backward is None:
        raise GraphStateError("backward() needs a loss produced by a recorded forward pass")
    if loss.data.size != 1:
        raise DimensionError(f"backward() needs a scalar loss, got shape {loss.shape}")

    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen and _needs_grad(p):
                stack.append((p, False))

    loss.grad = np.ones_like(loss.data)
    for node in reversed(order):
        if node._backward is None:
            continue
        g = node.grad
        if g is not None:
            node._backward(g)
        # interior nodes drop their graph and buffers
        node._backward = None
        node._parents = ()
        if not node.requires_grad:
            node.grad = None


def check_finite(x: np.ndarray | Tensor, what: str) -> None:
    data = x.data if isinstance(x, Tensor) else np.asarray(x)
    if not np.all(np.isfinite(data)):
        raise NumericError(f"non-finite values in {what}")
