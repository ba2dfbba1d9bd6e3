"""Dense float64 tensors with reverse-mode automatic differentiation.

The graph is built eagerly as ops run: every op returns a new Tensor holding
the forward value plus a vector-Jacobian closure over its parents.  backward()
walks the graph once in reverse topological order, accumulating gradients into
``.grad`` and freeing intermediate state as it goes.  All buffers are float64
ndarrays; nothing here is stochastic, so identical inputs give bit-identical
outputs and gradients.
"""

from __future__ import annotations

import math
from typing import Callable, Iterable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import erf

from .errors import ContractViolation

Array = np.ndarray

_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def _as_f64(values) -> Array:
    return np.ascontiguousarray(values, dtype=np.float64)


class Tensor:
    """A float64 ndarray plus the bookkeeping needed for backprop."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_vjp")

    def __init__(self, values, requires_grad: bool = False):
        self.data = _as_f64(values)
        self.requires_grad = requires_grad
        self.grad: Array | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._vjp: Callable[[Array], tuple] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def __repr__(self) -> str:
        flag = ", grad" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}{flag})"

    # operator sugar; everything funnels through the module-level ops
    def __add__(self, other):
        return add(self, _wrap(other))

    def __radd__(self, other):
        return add(_wrap(other), self)

    def __sub__(self, other):
        return sub(self, _wrap(other))

    def __rsub__(self, other):
        return sub(_wrap(other), self)

    def __mul__(self, other):
        return mul(self, _wrap(other))

    def __rmul__(self, other):
        return mul(_wrap(other), self)

    def __truediv__(self, other):
        return div(self, _wrap(other))

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, _wrap(other))

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes)


def constant(values) -> Tensor:
    """A leaf that never receives gradient."""
    return Tensor(values, requires_grad=False)


def parameter(values) -> Tensor:
    """A trainable leaf."""
    return Tensor(values, requires_grad=True)


def _wrap(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x, requires_grad=False)


def _from_op(data: Array, parents: tuple[Tensor, ...], vjp) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._vjp = vjp
    else:
        out.requires_grad = False
        out._parents = ()
        out._vjp = None
    return out


def _unbroadcast(g: Array, shape: tuple[int, ...]) -> Array:
    """Sum a gradient down to `shape` after numpy broadcasting."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# graph traversal


def _topo_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
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
    return order


def backward(output: Tensor) -> None:
    """Accumulate d(output)/d(leaf) into every reachable leaf's .grad."""
    order = _topo_order(output)
    output.grad = np.ones_like(output.data)
    for node in reversed(order):
        vjp = node._vjp
        if vjp is None or node.grad is None:
            continue
        parent_grads = vjp(node.grad)
        for parent, pg in zip(node._parents, parent_grads):
            if pg is None or not parent.requires_grad:
                continue
            parent.grad = pg if parent.grad is None else parent.grad + pg
        # tear the graph down behind us; leaves keep their grads
        node._vjp = None
        node._parents = ()
        if node is not output:
            node.grad = None


def grad(output: Tensor, params: Iterable[Tensor]) -> None:
    """Backprop a scalar `output`; afterwards each param's .grad is filled.

    Parameters unreachable from `output` get a zero gradient of their shape.
    """
    params = list(params)
    if output.data.size != 1:
        raise ContractViolation(
            f"grad needs a scalar output, got shape {output.data.shape}"
        )
    for p in params:
        p.grad = None
    backward(output)
    for p in params:
        if p.grad is None:
            p.grad = np.zeros_like(p.data)


# ---------------------------------------------------------------------------
# elementwise and arithmetic ops


def add(a: Tensor, b: Tensor) -> Tensor:
    data = a.data + b.data

    def vjp(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)

    return _from_op(data, (a, b), vjp)


def sub(a: Tensor, b: Tensor) -> Tensor:
    data = a.data - b.data

    def vjp(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)

    return _from_op(data, (a, b), vjp)


def mul(a: Tensor, b: Tensor) -> Tensor:
    data = a.data * b.data

    def vjp(g):
        return (
            _unbroadcast(g * b.data, a.data.shape),
            _unbroadcast(g * a.data, b.data.shape),
        )

    return _from_op(data, (a, b), vjp)


def neg(a: Tensor) -> Tensor:
    return _from_op(-a.data, (a,), lambda g: (-g,))


def div(a: Tensor, b: Tensor) -> Tensor:
    data = a.data / b.data

    def vjp(g):
        ga = _unbroadcast(g / b.data, a.data.shape)
        gb = _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape)
        return ga, gb

    return _from_op(data, (a, b), vjp)


def square(a: Tensor) -> Tensor:
    data = a.data * a.data

    def vjp(g):
        return (2.0 * a.data * g,)

    return _from_op(data, (a,), vjp)


def exp(a: Tensor) -> Tensor:
    data = np.exp(a.data)

    def vjp(g):
        return (g * data,)

    return _from_op(data, (a,), vjp)


def log(a: Tensor) -> Tensor:
    data = np.log(a.data)

    def vjp(g):
        return (g / a.data,)

    return _from_op(data, (a,), vjp)


def gelu(a: Tensor) -> Tensor:
    """Exact-erf GELU: 0.5 * x * (1 + erf(x / sqrt(2)))."""
    x = a.data
    e = erf(x * _INV_SQRT2)
    data = 0.5 * x * (1.0 + e)

    def vjp(g):
        pdf = np.exp(-0.5 * x * x) * _INV_SQRT_2PI
        return (g * (0.5 * (1.0 + e) + x * pdf),)

    return _from_op(data, (a,), vjp)


# ---------------------------------------------------------------------------
# shape ops


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(shape)
    data = a.data.reshape(shape)

    def vjp(g):
        return (g.reshape(a.data.shape),)

    return _from_op(data, (a,), vjp)


def transpose(a: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    if sorted(axes) != list(range(a.data.ndim)):
        raise ContractViolation(f"transpose axes {axes} invalid for rank {a.data.ndim}")
    inverse = tuple(np.argsort(axes))
    data = a.data.transpose(axes)

    def vjp(g):
        return (g.transpose(inverse),)

    return _from_op(data, (a,), vjp)


def gather(a: Tensor, index) -> Tensor:
    """Select rows of `a` along axis 0; duplicate indices sum in backward."""
    idx = np.asarray(index, dtype=np.intp)
    if idx.ndim != 1:
        raise ContractViolation("gather index must be one-dimensional")
    if idx.size and (idx.min() < 0 or idx.max() >= a.data.shape[0]):
        raise ContractViolation("gather index out of range")
    data = a.data[idx]

    def vjp(g):
        out = np.zeros_like(a.data)
        np.add.at(out, idx, g)
        return (out,)

    return _from_op(data, (a,), vjp)


def concat(parts: Sequence[Tensor], axis: int = 0) -> Tensor:
    parts = tuple(parts)
    if not parts:
        raise ContractViolation("concat needs at least one tensor")
    data = np.concatenate([p.data for p in parts], axis=axis)
    sizes = [p.data.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def vjp(g):
        moved = np.moveaxis(g, axis, 0)
        pieces = []
        for k in range(len(parts)):
            pieces.append(np.moveaxis(moved[offsets[k]:offsets[k + 1]], 0, axis))
        return tuple(pieces)

    return _from_op(data, parts, vjp)


def roll(a: Tensor, shift: int, axis: int = 0) -> Tensor:
    """Cyclic shift along one axis; backward rolls the other way."""
    data = np.roll(a.data, shift, axis=axis)

    def vjp(g):
        return (np.roll(g, -shift, axis=axis),)

    return _from_op(data, (a,), vjp)


def slice_rows(a: Tensor, start: int, stop: int) -> Tensor:
    if not (0 <= start <= stop <= a.data.shape[0]):
        raise ContractViolation(
            f"slice [{start}:{stop}] out of range for {a.data.shape[0]} rows"
        )
    data = a.data[start:stop]

    def vjp(g):
        out = np.zeros_like(a.data)
        out[start:stop] = g
        return (out,)

    return _from_op(data, (a,), vjp)


# ---------------------------------------------------------------------------
# reductions


def _expand_to(g: Array, shape: tuple[int, ...], axis, keepdims: bool) -> Array:
    if axis is None:
        return np.broadcast_to(g, shape).copy()
    axes = (axis,) if isinstance(axis, int) else tuple(axis)
    axes = tuple(ax % len(shape) for ax in axes)
    if not keepdims:
        for ax in sorted(axes):
            g = np.expand_dims(g, ax)
    return np.broadcast_to(g, shape).copy()


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    data = np.sum(a.data, axis=axis, keepdims=keepdims)

    def vjp(g):
        return (_expand_to(g, a.data.shape, axis, keepdims),)

    return _from_op(np.asarray(data), (a,), vjp)


def tmean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    data = np.mean(a.data, axis=axis, keepdims=keepdims)
    count = a.data.size / max(np.asarray(data).size, 1)

    def vjp(g):
        return (_expand_to(g / count, a.data.shape, axis, keepdims),)

    return _from_op(np.asarray(data), (a,), vjp)


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ContractViolation("matmul operands must have rank >= 2")
    data = a.data @ b.data
    need_a, need_b = a.requires_grad, b.requires_grad

    def vjp(g):
        ga = gb = None
        if need_a:
            ga = g @ np.swapaxes(b.data, -1, -2)
            if ga.shape != a.data.shape:
                ga = ga.sum(axis=tuple(range(ga.ndim - a.data.ndim)))
        if need_b:
            gb = np.swapaxes(a.data, -1, -2) @ g
            if gb.shape != b.data.shape:
                gb = gb.sum(axis=tuple(range(gb.ndim - b.data.ndim)))
        return ga, gb

    return _from_op(data, (a, b), vjp)


def linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """x @ w + b with b broadcasting over leading axes."""
    return add(matmul(x, w), b)


# ---------------------------------------------------------------------------
# normalization and attention-adjacent ops


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    """Numerically stable softmax along `axis`; rows sum to one."""
    ax = axis % a.data.ndim
    shifted = a.data - a.data.max(axis=ax, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=ax, keepdims=True)

    def vjp(g):
        inner = (g * y).sum(axis=ax, keepdims=True)
        return ((g - inner) * y,)

    return _from_op(y, (a,), vjp)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then affine."""
    d = x.data.shape[-1]
    if gain.data.shape != (d,) or bias.data.shape != (d,):
        raise ContractViolation(
            f"layer_norm affine params must have shape ({d},), "
            f"got {gain.data.shape} and {bias.data.shape}"
        )
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    data = xhat * gain.data + bias.data
    lead = tuple(range(x.data.ndim - 1))

    def vjp(g):
        g_gain = (g * xhat).sum(axis=lead) if gain.requires_grad else None
        g_bias = g.sum(axis=lead) if bias.requires_grad else None
        gx = None
        if x.requires_grad:
            gxhat = g * gain.data
            m1 = gxhat.mean(axis=-1, keepdims=True)
            m2 = (gxhat * xhat).mean(axis=-1, keepdims=True)
            gx = inv * (gxhat - m1 - xhat * m2)
        return gx, g_gain, g_bias

    return _from_op(data, (x, gain, bias), vjp)


# ---------------------------------------------------------------------------
# convolution


def conv3d(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Stride-1 same-padded 3D convolution.

    x: (C_in, T, H, W), w: (C_out, C_in, kt, kh, kw) with odd kernel dims,
    b: (C_out,).  Returns (C_out, T, H, W).
    """
    if x.data.ndim != 4 or w.data.ndim != 5:
        raise ContractViolation("conv3d expects x rank 4 and w rank 5")
    c_out, c_in, kt, kh, kw = w.data.shape
    if x.data.shape[0] != c_in:
        raise ContractViolation(
            f"conv3d channel mismatch: x has {x.data.shape[0]}, w wants {c_in}"
        )
    if kt % 2 == 0 or kh % 2 == 0 or kw % 2 == 0:
        raise ContractViolation("conv3d kernel dims must be odd")
    if b.data.shape != (c_out,):
        raise ContractViolation(f"conv3d bias must have shape ({c_out},)")
    pt, ph, pw = kt // 2, kh // 2, kw // 2
    pad = ((0, 0), (pt, pt), (ph, ph), (pw, pw))
    xp = np.pad(x.data, pad)
    win = sliding_window_view(xp, (kt, kh, kw), axis=(1, 2, 3))
    data = np.tensordot(w.data, win, axes=([1, 2, 3, 4], [0, 4, 5, 6]))
    data = np.ascontiguousarray(data) + b.data[:, None, None, None]
    need_x, need_w, need_b = x.requires_grad, w.requires_grad, b.requires_grad

    def vjp(g):
        gx = gw = gb = None
        if need_b:
            gb = g.sum(axis=(1, 2, 3))
        if need_w:
            gw = np.tensordot(g, win, axes=([1, 2, 3], [1, 2, 3]))
        if need_x:
            gp = np.pad(g, pad)
            gwin = sliding_window_view(gp, (kt, kh, kw), axis=(1, 2, 3))
            w_flip = w.data[:, :, ::-1, ::-1, ::-1]
            gx = np.tensordot(w_flip, gwin, axes=([0, 2, 3, 4], [0, 4, 5, 6]))
            gx = np.ascontiguousarray(gx)
        return gx, gw, gb

    return _from_op(data, (x, w, b), vjp)
