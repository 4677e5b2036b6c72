"""Minimal reverse-mode automatic differentiation over dense float64 arrays.

Tensors wrap numpy arrays and record the operations that produced them;
calling backward() on a scalar walks the graph in reverse topological order
and accumulates gradients into leaf tensors created with requires_grad=True.
Everything is 64-bit so finite-difference checks are tight.
"""

from __future__ import annotations

import math
from collections.abc import Callable, Iterator

import numpy as np

Array = np.ndarray


class ShapeMismatchError(ValueError):
    """Operand shapes are incompatible for the requested operation."""


class NonScalarLossError(ValueError):
    """backward() was called on a tensor with more than one element."""


def _unbroadcast(grad: Array, shape: tuple[int, ...]) -> Array:
    """Sum a gradient over the axes numpy broadcasting expanded."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_vjp")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: Array | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._vjp: Callable[[Array], tuple[Array, ...]] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError("item() requires a single-element tensor")
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = None

    # -- operator sugar ----------------------------------------------------
    def __add__(self, other): return add(self, other)
    def __radd__(self, other): return add(other, self)
    def __sub__(self, other): return sub(self, other)
    def __rsub__(self, other): return sub(other, self)
    def __mul__(self, other): return mul(self, other)
    def __rmul__(self, other): return mul(other, self)
    def __truediv__(self, other): return div(self, other)
    def __rtruediv__(self, other): return div(other, self)
    def __neg__(self): return neg(self)
    def __pow__(self, p): return power(self, p)
    def __matmul__(self, other): return matmul(self, other)
    def __getitem__(self, idx): return take(self, idx)

    @property
    def T(self) -> "Tensor":
        return transpose(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: Array, parents: tuple[Tensor, ...], vjp) -> Tensor:
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._vjp = vjp
    return out


# -- elementwise -----------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    data = a.data + b.data
    return _make(data, (a, b), lambda g: (
        _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    data = a.data - b.data
    return _make(data, (a, b), lambda g: (
        _unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    data = a.data * b.data
    return _make(data, (a, b), lambda g: (
        _unbroadcast(g * b.data, a.data.shape),
        _unbroadcast(g * a.data, b.data.shape)))


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    data = a.data / b.data
    return _make(data, (a, b), lambda g: (
        _unbroadcast(g / b.data, a.data.shape),
        _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape)))


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _make(-a.data, (a,), lambda g: (-g,))


def power(a, p: float) -> Tensor:
    a = as_tensor(a)
    data = a.data ** p
    return _make(data, (a,), lambda g: (g * p * a.data ** (p - 1),))


def log(a) -> Tensor:
    a = as_tensor(a)
    return _make(np.log(a.data), (a,), lambda g: (g / a.data,))


def exp(a) -> Tensor:
    a = as_tensor(a)
    data = np.exp(a.data)
    return _make(data, (a,), lambda g: (g * data,))


def absolute(a) -> Tensor:
    a = as_tensor(a)
    return _make(np.abs(a.data), (a,), lambda g: (g * np.sign(a.data),))


def relu(a) -> Tensor:
    a = as_tensor(a)
    return _make(np.maximum(a.data, 0.0), (a,), lambda g: (g * (a.data > 0.0),))


def logistic(a) -> Tensor:
    """Numerically stable sigmoid 1 / (1 + exp(-x))."""
    a = as_tensor(a)
    x = a.data
    data = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                    np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
    return _make(data, (a,), lambda g: (g * data * (1.0 - data),))


def clamp_min(a, lo: float) -> Tensor:
    """max(a, lo) elementwise; gradient passes only where a > lo."""
    a = as_tensor(a)
    data = np.maximum(a.data, lo)
    return _make(data, (a,), lambda g: (g * (a.data > lo),))


# -- shape and reduction ---------------------------------------------------

def transpose(a) -> Tensor:
    a = as_tensor(a)
    if a.data.ndim != 2:
        raise ShapeMismatchError(f"transpose expects a matrix, got {a.data.shape}")
    return _make(a.data.T.copy(), (a,), lambda g: (g.T,))


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    old = a.data.shape
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def _is_basic_index(idx) -> bool:
    parts = idx if isinstance(idx, tuple) else (idx,)
    return all(isinstance(p, (int, np.integer, slice)) or p is Ellipsis
               for p in parts)


def take(a, idx) -> Tensor:
    """Indexing; backward scatter-adds into the source positions."""
    a = as_tensor(a)
    data = a.data[idx]
    if np.isscalar(data) or data.ndim == 0:
        data = np.asarray(data, dtype=np.float64)
    basic = _is_basic_index(idx)

    def vjp(g: Array) -> tuple[Array, ...]:
        out = np.zeros_like(a.data)
        if basic:
            out[idx] += g  # basic indices never alias
        else:
            np.add.at(out, idx, g)
        return (out,)

    return _make(np.array(data, copy=True), (a,), vjp)


def gather_rows(a, idx: Array) -> Tensor:
    """Row gather by a duplicate-free index array (e.g. a permutation).

    The uniqueness contract lets the backward use plain fancy-index
    accumulation instead of the much slower np.add.at.
    """
    a = as_tensor(a)
    idx = np.asarray(idx)

    def vjp(g: Array) -> tuple[Array, ...]:
        out = np.zeros_like(a.data)
        out[idx] = g
        return (out,)

    return _make(a.data[idx].copy(), (a,), vjp)


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def vjp(g: Array) -> tuple[Array, ...]:
        return tuple(np.split(g, splits, axis=axis))

    return _make(data, tuple(tensors), vjp)


def tensor_sum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    data = a.data.sum(axis=axis, keepdims=keepdims)

    def vjp(g: Array) -> tuple[Array, ...]:
        if axis is None:
            return (np.broadcast_to(g, a.data.shape).copy(),)
        gg = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gg, a.data.shape).copy(),)

    return _make(data, (a,), vjp)


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    if axis is None:
        n = a.data.size
    else:
        n = a.data.shape[axis]
    return tensor_sum(a, axis=axis, keepdims=keepdims) * (1.0 / n)


def sorted_mean_rows(a) -> Tensor:
    """Column means accumulated in sorted value order.

    Bit-identical under any permutation of the rows, which plain summation is
    not; used where exact row-permutation invariance is part of the contract.
    """
    a = as_tensor(a)
    n = a.data.shape[0]
    data = np.sort(a.data, axis=0).sum(axis=0, keepdims=True) / n

    def vjp(g: Array) -> tuple[Array, ...]:
        return (np.broadcast_to(g / n, a.data.shape).copy(),)

    return _make(data, (a,), vjp)


# -- linear algebra --------------------------------------------------------

def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeMismatchError("matmul expects matrices")
    if a.data.shape[1] != b.data.shape[0]:
        raise ShapeMismatchError(
            f"inner dimensions disagree: {a.data.shape} @ {b.data.shape}")
    data = a.data @ b.data
    return _make(data, (a, b), lambda g: (g @ b.data.T, a.data.T @ g))


def row_softmax(x) -> Tensor:
    """Softmax over the last axis of a matrix, stabilized by row-max shift."""
    x = as_tensor(x)
    if x.data.ndim != 2:
        raise ShapeMismatchError(f"row_softmax expects a matrix, got {x.data.shape}")
    z = x.data - x.data.max(axis=1, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=1, keepdims=True)

    def vjp(g: Array) -> tuple[Array, ...]:
        dot = (g * s).sum(axis=1, keepdims=True)
        return (s * (g - dot),)

    return _make(s, (x,), vjp)


def layer_norm(x, gain, bias, eps: float = 1e-5) -> Tensor:
    """Per-row standardization over the last axis, then affine."""
    x, gain, bias = as_tensor(x), as_tensor(gain), as_tensor(bias)
    if x.data.ndim != 2:
        raise ShapeMismatchError(f"layer_norm expects a matrix, got {x.data.shape}")
    c = x.data.shape[1]
    if gain.data.shape != (c,) or bias.data.shape != (c,):
        raise ShapeMismatchError("gain/bias must match the last dimension")
    mu = x.data.mean(axis=1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=1, keepdims=True)
    istd = 1.0 / np.sqrt(var + eps)
    xhat = xc * istd

    def vjp(g: Array) -> tuple[Array, ...]:
        dxhat = g * gain.data
        dx = istd * (dxhat
                     - dxhat.mean(axis=1, keepdims=True)
                     - xhat * (dxhat * xhat).mean(axis=1, keepdims=True))
        return dx, (g * xhat).sum(axis=0), g.sum(axis=0)

    return _make(xhat * gain.data + bias.data, (x, gain, bias), vjp)


def scaled_dot_product_attention(q, k, v) -> tuple[Tensor, Tensor]:
    """Attention output and the row-stochastic attention map.

    Scores are scaled by the square root of the query channel count.
    """
    q, k, v = as_tensor(q), as_tensor(k), as_tensor(v)
    if q.data.shape[1] != k.data.shape[1]:
        raise ShapeMismatchError("query/key channel counts differ")
    if k.data.shape[0] != v.data.shape[0]:
        raise ShapeMismatchError("key/value row counts differ")
    scale = 1.0 / math.sqrt(q.data.shape[1])
    attn = row_softmax(matmul(q, transpose(k)) * scale)
    return matmul(attn, v), attn


def conv2d(x, kernel, stride: int = 1) -> Tensor:
    """Strided 2-D cross-correlation with zero padding that preserves the
    spatial size before striding.

    x: (C_in, H, W); kernel: (C_out, C_in, kh, kw); output (C_out, ceil(H/s),
    ceil(W/s)).  Implemented as one matrix product over unrolled patches.
    """
    x, kernel = as_tensor(x), as_tensor(kernel)
    if x.data.ndim != 3 or kernel.data.ndim != 4:
        raise ShapeMismatchError("conv2d expects x (C,H,W) and kernel (O,C,kh,kw)")
    if x.data.shape[0] != kernel.data.shape[1]:
        raise ShapeMismatchError("input channels do not match kernel")
    if stride < 1:
        raise ValueError("stride must be >= 1")
    c_in, h, w = x.data.shape
    c_out, _, kh, kw = kernel.data.shape
    pt, pl = (kh - 1) // 2, (kw - 1) // 2
    pb, pr = kh - 1 - pt, kw - 1 - pl
    xp = np.pad(x.data, ((0, 0), (pt, pb), (pl, pr)))
    h_out = -(-h // stride)
    w_out = -(-w // stride)
    # (C_in, H_out, W_out, kh, kw) strided view of every receptive field
    windows = np.lib.stride_tricks.sliding_window_view(
        xp, (kh, kw), axis=(1, 2))[:, ::stride, ::stride]
    cols = windows.transpose(0, 3, 4, 1, 2).reshape(c_in * kh * kw,
                                                    h_out * w_out)
    k2 = kernel.data.reshape(c_out, c_in * kh * kw)
    out = (k2 @ cols).reshape(c_out, h_out, w_out)

    def vjp(g: Array) -> tuple[Array, ...]:
        g2 = g.reshape(c_out, h_out * w_out)
        dk = (g2 @ cols.T).reshape(kernel.data.shape)
        dcols = (k2.T @ g2).reshape(c_in, kh, kw, h_out, w_out)
        dxp = np.zeros_like(xp)
        for i in range(kh):
            for j in range(kw):
                dxp[:, i:i + stride * (h_out - 1) + 1:stride,
                    j:j + stride * (w_out - 1) + 1:stride] += dcols[:, i, j]
        return dxp[:, pt:pt + h, pl:pl + w], dk

    return _make(out, (x, kernel), vjp)


# -- backward pass ---------------------------------------------------------

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
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Reverse-mode accumulation from a scalar into requires_grad leaves.

    Repeated calls without zero_grad() add into the same buffers.
    """
    if loss.data.size != 1:
        raise NonScalarLossError(f"loss must be a scalar, got shape {loss.data.shape}")
    grads: dict[int, Array] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(_topo_order(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._vjp is not None:
            for parent, pg in zip(node._parents, node._vjp(g)):
                if not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg
        elif node.requires_grad:
            if node.grad is None:
                node.grad = np.zeros_like(node.data)
            node.grad += g


class ParameterStore:
    """Named trainable tensors with deterministic iteration order."""

    def __init__(self) -> None:
        self._params: dict[str, Tensor] = {}

    def add(self, name: str, value, requires_grad: bool = True) -> Tensor:
        if name in self._params:
            raise ValueError(f"duplicate parameter name: {name}")
        t = Tensor(np.array(value, dtype=np.float64), requires_grad=requires_grad)
        self._params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self) -> int:
        return len(self._params)

    def items(self) -> Iterator[tuple[str, Tensor]]:
        return iter(self._params.items())

    def names(self) -> list[str]:
        return list(self._params)

    def zero_grad(self) -> None:
        for t in self._params.values():
            t.grad = None

    def arrays(self) -> dict[str, Array]:
        return {name: t.data.copy() for name, t in self._params.items()}

    def load_arrays(self, arrays: dict[str, Array]) -> None:
        missing = set(self._params) - set(arrays)
        if missing:
            raise KeyError(f"missing parameters: {sorted(missing)}")
        for name, t in self._params.items():
            a = np.asarray(arrays[name], dtype=np.float64)
            if a.shape != t.data.shape:
                raise ShapeMismatchError(
                    f"{name}: expected shape {t.data.shape}, got {a.shape}")
            t.data = a.copy()


def finite_difference_check(
    f: Callable[[], Tensor],
    params: ParameterStore,
    step: float = 1e-6,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    f evaluates the scalar objective from the current parameter values.
    Relative error is |analytic - numeric| / max(1e-8, |analytic| + |numeric|)
    over every coordinate of every parameter.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    params.zero_grad()
    backward(f())
    analytic = {name: (np.zeros_like(t.data) if t.grad is None else t.grad.copy())
                for name, t in params.items()}
    worst = 0.0
    for name, t in params.items():
        flat = t.data.reshape(-1)
        ana = analytic[name].reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            fp = f().item()
            flat[i] = orig - step
            fm = f().item()
            flat[i] = orig
            numeric = (fp - fm) / (2.0 * step)
            rel = abs(ana[i] - numeric) / max(1e-8, abs(ana[i]) + abs(numeric))
            if rel > worst:
                worst = rel
    return worst
