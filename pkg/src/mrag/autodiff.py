"""Small reverse-mode autodiff over numpy arrays.

Every op builds a new :class:`Tensor` holding its parents and a closure that
maps the output gradient to one gradient per parent. ``backward`` walks the
graph in reverse topological order. Shapes never broadcast implicitly except
against Python scalars; use :func:`broadcast_to` when a shape must expand.
"""

from __future__ import annotations

import contextlib
import itertools
from typing import Callable, Sequence

import numpy as np

_DTYPE = np.float32
_GRAD_ENABLED = True
CHECK_FINITE = True

_ids = itertools.count()


class NonFiniteError(FloatingPointError):
    pass


class ShapeError(ValueError):
    pass


def get_dtype():
    return _DTYPE


def set_precision(bits: int) -> None:
    global _DTYPE
    if bits == 32:
        _DTYPE = np.float32
    elif bits == 64:
        _DTYPE = np.float64
    else:
        raise ValueError(f"precision must be 32 or 64, got {bits}")


@contextlib.contextmanager
def precision(bits: int):
    """Temporarily switch the dtype used for new tensors."""
    old = _DTYPE
    set_precision(bits)
    try:
        yield
    finally:
        globals()["_DTYPE"] = old


@contextlib.contextmanager
def no_grad():
    global _GRAD_ENABLED
    old = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = old


def grad_enabled() -> bool:
    return _GRAD_ENABLED


def rng(seed: int) -> np.random.Generator:
    """Counter-based generator (Philox) used for every random draw."""
    return np.random.Generator(np.random.Philox(seed))


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_op", "__weakref__")

    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype or _DTYPE)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None
        self._op = "leaf"

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data, dtype=self.data.dtype)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self._op})"

    def __len__(self) -> int:
        return self.shape[0]

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return add(neg(self), other)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            return div(self, other)
        return mul(self, 1.0 / other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes)

    def backward(self, grad=None) -> None:
        backward(self, grad)


class Parameter(Tensor):
    """Trainable leaf. ``name`` is filled in by the owning module."""

    __slots__ = ("name", "uid")

    def __init__(self, data, name: str = ""):
        super().__init__(data, requires_grad=True)
        self.name = name
        self.uid = next(_ids)

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.shape})"


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _check(arr: np.ndarray, op: str) -> None:
    if CHECK_FINITE and not np.isfinite(arr).all():
        raise NonFiniteError(f"non-finite value produced by {op}")


def _make(data: np.ndarray, parents: Sequence[Tensor], backward_fn, op: str) -> Tensor:
    _check(data, op)
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out._op = op
    needs = _GRAD_ENABLED and any(p.requires_grad for p in parents)
    out.requires_grad = needs
    if needs:
        out._parents = tuple(parents)
        out._backward = backward_fn
    else:
        out._parents = ()
        out._backward = None
    return out


def backward(loss: Tensor, grad=None) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every reachable leaf."""
    if grad is None:
        if loss.data.size != 1:
            raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
        grad = np.ones_like(loss.data)
    if not loss.requires_grad:
        return

    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
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

    grads: dict[int, np.ndarray] = {id(loss): np.asarray(grad, dtype=loss.data.dtype)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = g.copy() if node.grad is None else node.grad + g
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


def _same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def add(x: Tensor, y) -> Tensor:
    if not isinstance(y, Tensor):
        y = np.asarray(y, dtype=x.dtype)  # constants never promote the result
        return _make(x.data + y, (x,), lambda g: (g,), "add_scalar")
    _same_shape(x, y, "add")
    return _make(x.data + y.data, (x, y), lambda g: (g, g), "add")


def sub(x: Tensor, y) -> Tensor:
    if not isinstance(y, Tensor):
        y = np.asarray(y, dtype=x.dtype)
        return _make(x.data - y, (x,), lambda g: (g,), "sub_scalar")
    _same_shape(x, y, "sub")
    return _make(x.data - y.data, (x, y), lambda g: (g, -g), "sub")


def mul(x: Tensor, y) -> Tensor:
    if not isinstance(y, Tensor):
        s = np.asarray(y, dtype=x.dtype)
        return _make(x.data * s, (x,), lambda g: (g * s,), "mul_scalar")
    _same_shape(x, y, "mul")
    xd, yd = x.data, y.data
    return _make(xd * yd, (x, y), lambda g: (g * yd, g * xd), "mul")


def div(x: Tensor, y: Tensor) -> Tensor:
    _same_shape(x, y, "div")
    xd, yd = x.data, y.data
    out = xd / yd
    return _make(out, (x, y), lambda g: (g / yd, -g * out / yd), "div")


def neg(x: Tensor) -> Tensor:
    return _make(-x.data, (x,), lambda g: (-g,), "neg")


def elementwise(x: Tensor, y, kind: str) -> Tensor:
    try:
        fn = {"add": add, "sub": sub, "mul": mul}[kind]
    except KeyError:
        raise ValueError(f"unknown elementwise kind {kind!r}") from None
    return fn(x, y)


def exp(x: Tensor) -> Tensor:
    out = np.exp(x.data)
    return _make(out, (x,), lambda g: (g * out,), "exp")


def tanh(x: Tensor) -> Tensor:
    out = np.tanh(x.data)
    return _make(out, (x,), lambda g: (g * (1 - out * out),), "tanh")


def sigmoid(x: Tensor) -> Tensor:
    d = x.data
    # split by sign so neither branch overflows
    e = np.exp(-np.abs(d))
    out = np.where(d >= 0, 1 / (1 + e), e / (1 + e)).astype(d.dtype, copy=False)
    return _make(out, (x,), lambda g: (g * out * (1 - out),), "sigmoid")


def leaky_relu(x: Tensor, slope: float = 0.2) -> Tensor:
    d = x.data
    mask = d > 0
    out = np.where(mask, d, d * slope)
    return _make(out, (x,), lambda g: (np.where(mask, g, g * slope),), "leaky_relu")


def clip(x: Tensor, lo: float, hi: float) -> Tensor:
    """Clamp to [lo, hi]; the gradient is zero wherever the clamp is active."""
    inside = (x.data > lo) & (x.data < hi)
    return _make(np.clip(x.data, lo, hi), (x,), lambda g: (g * inside,), "clip")


def square(x: Tensor) -> Tensor:
    d = x.data
    return _make(d * d, (x,), lambda g: (2 * g * d,), "square")


def sqrt(x: Tensor) -> Tensor:
    out = np.sqrt(x.data)
    return _make(out, (x,), lambda g: (g / (2 * out),), "sqrt")


def unary(x: Tensor, kind: str, slope: float = 0.2) -> Tensor:
    if kind == "exp":
        return exp(x)
    if kind == "tanh":
        return tanh(x)
    if kind == "sigmoid":
        return sigmoid(x)
    if kind == "leaky_relu":
        return leaky_relu(x, slope)
    raise ValueError(f"unknown unary kind {kind!r}")


# ---------------------------------------------------------------- reductions & shape


def sum_(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    shape = x.shape
    out = np.sum(x.data, axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _make(np.asarray(out), (x,), bw, "sum")


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        n = x.data.size
    else:
        axes = (axis,) if isinstance(axis, int) else axis
        n = int(np.prod([x.shape[a] for a in axes]))
    return mul(sum_(x, axis, keepdims), 1.0 / n)


def reshape(x: Tensor, shape) -> Tensor:
    old = x.shape
    return _make(x.data.reshape(shape), (x,), lambda g: (g.reshape(old),), "reshape")


def transpose(x: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return _make(x.data.transpose(axes), (x,), lambda g: (g.transpose(inv),), "transpose")


def broadcast_to(x: Tensor, shape) -> Tensor:
    """Explicit expansion of size-1 (or missing leading) axes."""
    src = x.shape
    out = np.broadcast_to(x.data, shape)
    lead = len(shape) - len(src)

    def bw(g):
        g = g.sum(axis=tuple(range(lead))) if lead else g
        axes = tuple(i for i, s in enumerate(src) if s == 1 and g.shape[i] != 1)
        if axes:
            g = g.sum(axis=axes, keepdims=True)
        return (g,)

    return _make(out, (x,), bw, "broadcast_to")


def getitem(x: Tensor, index) -> Tensor:
    shape = x.shape
    dtype = x.data.dtype

    def bw(g):
        full = np.zeros(shape, dtype=dtype)
        if _is_fancy(index):
            np.add.at(full, index, g)
        else:
            full[index] = g
        return (full,)

    return _make(x.data[index], (x,), bw, "getitem")


def _is_fancy(index) -> bool:
    items = index if isinstance(index, tuple) else (index,)
    return any(isinstance(i, (list, np.ndarray)) for i in items)


def take(x: Tensor, indices: np.ndarray, axis: int) -> Tensor:
    """Gather along one axis. When ``indices`` is a permutation the
    gradient is the inverse gather."""
    indices = np.asarray(indices)
    out = np.take(x.data, indices, axis=axis)
    n = x.shape[axis]
    is_perm = indices.ndim == 1 and len(indices) == n and np.array_equal(np.sort(indices), np.arange(n))
    if is_perm:
        inv = np.argsort(indices)
        return _make(out, (x,), lambda g: (np.take(g, inv, axis=axis),), "take_perm")
    shape = x.shape

    def bw(g):
        full = np.zeros(shape, dtype=g.dtype)
        moved = np.moveaxis(full, axis, 0)
        np.add.at(moved, indices, np.moveaxis(g, axis, 0))
        return (full,)

    return _make(out, (x,), bw, "take")


def concat(xs: Sequence[Tensor], axis: int = 0) -> Tensor:
    ref = xs[0].shape
    for t in xs[1:]:
        if len(t.shape) != len(ref) or any(
            a != b for i, (a, b) in enumerate(zip(t.shape, ref)) if i != axis % len(ref)
        ):
            raise ShapeError(f"concat: incompatible shapes {ref} and {t.shape} on axis {axis}")
    sizes = [t.shape[axis] for t in xs]
    bounds = np.cumsum(sizes)[:-1]
    out = np.concatenate([t.data for t in xs], axis=axis)
    return _make(out, tuple(xs), lambda g: tuple(np.split(g, bounds, axis=axis)), "concat")


def split(x: Tensor, sizes: Sequence[int], axis: int = 0) -> list[Tensor]:
    if sum(sizes) != x.shape[axis]:
        raise ShapeError(f"split: sizes {list(sizes)} do not sum to {x.shape[axis]}")
    outs = []
    start = 0
    for s in sizes:
        idx = [slice(None)] * x.ndim
        idx[axis] = slice(start, start + s)
        outs.append(getitem(x, tuple(idx)))
        start += s
    return outs


# ---------------------------------------------------------------- linear algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """``a @ b`` with either equal leading batch dims or a 2-D right operand."""
    ad, bd = a.data, b.data
    if ad.shape[-1] != bd.shape[-2 if bd.ndim > 1 else 0]:
        raise ShapeError(f"matmul: inner dims differ {a.shape} @ {b.shape}")
    if bd.ndim > 2 and ad.shape[:-2] != bd.shape[:-2]:
        raise ShapeError(f"matmul: batch dims differ {a.shape} @ {b.shape}")
    out = ad @ bd

    def bw(g):
        ga = g @ np.swapaxes(bd, -1, -2)
        if bd.ndim == 2:
            a2 = ad.reshape(-1, ad.shape[-1])
            gb = a2.T @ g.reshape(-1, g.shape[-1])
        else:
            gb = np.swapaxes(ad, -1, -2) @ g
        return ga, gb

    return _make(out, (a, b), bw, "matmul")


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """``x @ weight + bias`` over the last axis; weight is (in, out)."""
    xd, wd = x.data, weight.data
    if xd.shape[-1] != wd.shape[0]:
        raise ShapeError(f"linear: {x.shape} vs weight {weight.shape}")
    out = xd @ wd
    if bias is not None:
        out = out + bias.data

    def bw(g):
        gx = g @ wd.T
        gw = xd.reshape(-1, wd.shape[0]).T @ g.reshape(-1, wd.shape[1])
        if bias is None:
            return gx, gw
        return gx, gw, g.reshape(-1, wd.shape[1]).sum(0)

    parents = (x, weight) if bias is None else (x, weight, bias)
    return _make(out, parents, bw, "linear")


def matrix_inverse(a: Tensor) -> Tensor:
    inv = np.linalg.inv(a.data.astype(np.float64)).astype(a.data.dtype)
    # d(A^-1) = -A^-1 dA A^-1
    return _make(inv, (a,), lambda g: (-(inv.T @ g @ inv.T),), "matrix_inverse")


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    d = x.data
    e = np.exp(d - d.max(axis=axis, keepdims=True))
    out = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _make(out, (x,), bw, "softmax")


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then scale by ``gain`` and shift by ``bias``."""
    d = x.data
    dim = d.shape[-1]
    if dim < 2:
        raise ShapeError("layer_norm needs at least 2 features")
    mu = d.mean(-1, keepdims=True)
    xc = d - mu
    var = (xc * xc).mean(-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gain.data + bias.data

    def bw(g):
        gg = g.reshape(-1, dim)
        gxhat = g * gain.data
        gx = inv * (gxhat - gxhat.mean(-1, keepdims=True) - xhat * (gxhat * xhat).mean(-1, keepdims=True))
        return gx, (gg * xhat.reshape(-1, dim)).sum(0), gg.sum(0)

    return _make(out, (x, gain, bias), bw, "layer_norm")


# ---------------------------------------------------------------- convolution


def _chunk_rows(c: int) -> int:
    # rows per block so one chunk of input stays cache resident across all taps
    rows = 1 << max(0, int(np.log2(max(40000 // max(c, 1), 1))))
    return int(min(4096, max(256, rows)))


def _shift_forward(flat: np.ndarray, wp: int, w: np.ndarray, out: np.ndarray) -> None:
    """Accumulate a valid kxk correlation of ``flat`` (rows of a padded
    channels-last image with row length ``wp``) into ``out`` (rows, O).

    ``flat`` may be a column-sliced view. Rows of the result that straddle an
    image row or image boundary are garbage and must be cropped by the caller.
    """
    c = flat.shape[1]
    k = w.shape[2]
    taps = np.ascontiguousarray(w.transpose(2, 3, 1, 0))  # (k, k, C, O)
    span = flat.shape[0] - (k - 1) * wp - (k - 1)
    chunk = _chunk_rows(c)
    buf = np.empty((chunk, w.shape[0]), dtype=out.dtype)
    for s in range(0, span, chunk):
        e = min(s + chunk, span)
        tmp, dst = buf[: e - s], out[s:e]
        for i in range(k):
            for j in range(k):
                off = i * wp + j
                np.matmul(flat[s + off:e + off], taps[i, j], out=tmp)
                dst += tmp


def _shift_backward(flat: np.ndarray, wp: int, w: np.ndarray, gflat: np.ndarray,
                    dx: np.ndarray | None, dw: np.ndarray) -> None:
    """Adjoint of :func:`_shift_forward`: accumulate into ``dx`` (same layout
    as ``flat``) and ``dw`` of shape (k, k, O, C)."""
    c = flat.shape[1]
    o, _, k, _ = w.shape
    taps = np.ascontiguousarray(w.transpose(2, 3, 0, 1))  # (k, k, O, C)
    span = flat.shape[0] - (k - 1) * wp - (k - 1)
    chunk = _chunk_rows(c)
    buf = np.empty((chunk, c), dtype=flat.dtype)
    tw = np.empty((o, c), dtype=dw.dtype)
    for s in range(0, span, chunk):
        e = min(s + chunk, span)
        g = gflat[s:e]
        g_t = np.ascontiguousarray(g.T)
        tmp = buf[: e - s]
        for i in range(k):
            for j in range(k):
                off = i * wp + j
                if dx is not None:
                    np.matmul(g, taps[i, j], out=tmp)
                    dx[s + off:e + off] += tmp
                np.matmul(g_t, flat[s + off:e + off], out=tw)
                dw[i, j] += tw


def _shift_conv(xp: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Valid kxk cross-correlation on a channels-last (N, Hp, Wp, C) array."""
    n, hp, wp, c = xp.shape
    o, _, k, _ = w.shape
    acc = np.zeros((n * hp * wp, o), dtype=xp.dtype)
    _shift_forward(xp.reshape(-1, c), wp, w, acc)
    return acc.reshape(n, hp, wp, o)[:, : hp - k + 1, : wp - k + 1]


def _shift_conv_grads(xp: np.ndarray, w: np.ndarray, gfull: np.ndarray):
    """Gradients of :func:`_shift_conv` given dL/d(out) laid on the padded grid."""
    n, hp, wp, c = xp.shape
    o, _, k, _ = w.shape
    flat = xp.reshape(-1, c)
    dx = np.zeros_like(flat)
    dw = np.zeros((k, k, o, c), dtype=w.dtype)
    _shift_backward(flat, wp, w, gfull.reshape(-1, o), dx, dw)
    return dx.reshape(n, hp, wp, c), dw.transpose(2, 3, 0, 1)


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None,
           padding: str = "same", stride: int = 1, channels_last: bool = False) -> Tensor:
    """2-D cross-correlation with a (O, C, k, k) kernel.

    Input is (N, C, H, W), or (N, H, W, C) when ``channels_last`` is set; the
    output uses the same layout as the input.
    """
    if x.ndim == 3:
        y = conv2d(reshape(x, (1,) + x.shape), weight, bias, padding, stride, channels_last)
        return reshape(y, y.shape[1:])
    if channels_last:
        n, h, w_, c = x.shape
    else:
        n, c, h, w_ = x.shape
    o, ci, k, k2 = weight.shape
    if ci != c:
        raise ShapeError(f"conv2d: input has {c} channels, kernel expects {ci}")
    if k != k2 or k not in (1, 3):
        raise ShapeError(f"conv2d: unsupported kernel {k}x{k2}")
    if stride not in (1, 2):
        raise ShapeError("conv2d: stride must be 1 or 2")
    if padding not in ("same", "none"):
        raise ValueError(f"padding must be 'same' or 'none', got {padding!r}")
    xd, wd = x.data, weight.data
    pad = (k // 2) if padding == "same" else 0
    xl = xd if channels_last else xd.transpose(0, 2, 3, 1)
    if k == 1:
        xs = xl[:, ::stride, ::stride] if stride > 1 else xl
        out_l = xs @ np.ascontiguousarray(wd[:, :, 0, 0].T)
        xp = None
    else:
        xp = np.zeros((n, h + 2 * pad, w_ + 2 * pad, c), dtype=xd.dtype)
        xp[:, pad:pad + h, pad:pad + w_] = xl
        full = _shift_conv(xp, wd)
        out_l = full[:, ::stride, ::stride] if stride > 1 else full
    if bias is not None:
        out_l = out_l + bias.data
    out = np.ascontiguousarray(out_l if channels_last else out_l.transpose(0, 3, 1, 2))

    def bw(g):
        gl = g if channels_last else g.transpose(0, 2, 3, 1)
        if k == 1:
            w2 = np.ascontiguousarray(wd[:, :, 0, 0])
            gx_s = gl @ w2
            xs_flat = (xl[:, ::stride, ::stride] if stride > 1 else xl).reshape(-1, c)
            gw = (gl.reshape(-1, o).T @ xs_flat)[:, :, None, None]
            if stride > 1:
                gx_l = np.zeros_like(xl)
                gx_l[:, ::stride, ::stride] = gx_s
            else:
                gx_l = gx_s
        else:
            hp, wp = xp.shape[1], xp.shape[2]
            gfull = np.zeros((n, hp, wp, o), dtype=g.dtype)
            gfull[:, : (hp - k + 1): stride, : (wp - k + 1): stride] = gl
            dxp, gw = _shift_conv_grads(xp, wd, gfull)
            gx_l = dxp[:, pad:pad + h, pad:pad + w_]
        gx = np.ascontiguousarray(gx_l if channels_last else gx_l.transpose(0, 3, 1, 2))
        if bias is None:
            return gx, gw
        return gx, gw, gl.reshape(-1, o).sum(0)

    parents = (x, weight) if bias is None else (x, weight, bias)
    return _make(out, parents, bw, "conv2d")


class _Packed:
    """Channels-last layout for 3x3 'same' convolutions over a batch.

    Images of width ``w`` sit in rows of length ``w + 1`` and are stacked
    with one zero row between them. In the flattened buffer the single zero
    column serves as the right pad of one row and the left pad of the next,
    and the zero row as the bottom pad of one image and the top pad of the
    next, so padding costs (h + 1)(w + 1) rows per image instead of
    (h + 2)(w + 2). A leading zero element aligns the valid correlation of
    :func:`_shift_forward` so that output row ``s`` is centred on canvas
    element ``s + w + 1``.
    """

    def __init__(self, n: int, h: int, w: int):
        self.n, self.h, self.w = n, h, w
        self.wp = w + 1
        self.span = n * (h + 1) * self.wp  # outputs covering every image
        self.rows = self.span + 2 * self.wp + 2

    def images(self, flat: np.ndarray) -> np.ndarray:
        """(N, H, W, C) view of the image pixels in a (rows, C) buffer."""
        body = flat[1 + self.wp:1 + self.wp + self.span]
        return body.reshape(self.n, self.h + 1, self.wp, -1)[:, :self.h, :self.w]

    def outputs(self, acc: np.ndarray) -> np.ndarray:
        """(N, H, W, O) view of the valid outputs in a (>= span, O) array."""
        return acc[:self.span].reshape(self.n, self.h + 1, self.wp, -1)[:, :self.h, :self.w]


def dense_block(x: Tensor, weights: Sequence[Tensor], biases: Sequence[Tensor],
                slope: float = 0.2) -> Tensor:
    """Fused densely connected stack of 3x3 'same' convolutions on (N, C, H, W).

    Layer i reads the input concatenated with every earlier layer's output;
    all but the last layer are followed by a leaky ReLU. Numerically equal to
    the composition of :func:`conv2d`, :func:`concat` and :func:`leaky_relu`,
    but every activation lives in one shared zero-padded buffer.
    """
    n, c0, h, w_ = x.shape
    dims = [wt.shape for wt in weights]
    grow = [d[0] for d in dims[:-1]]
    total = c0 + sum(grow)
    expect = c0
    for d, b in zip(dims, biases):
        if d[1] != expect or d[2:] != (3, 3) or b.shape != (d[0],):
            raise ShapeError(f"dense_block: layer expects {expect} input channels, got kernel {d}")
        expect += d[0]
    if not 0 <= slope <= 1:
        raise ValueError(f"dense_block: slope must be in [0, 1], got {slope}")
    lay = _Packed(n, h, w_)
    wp, span = lay.wp, lay.span
    flat = np.zeros((lay.rows, total), dtype=x.dtype)
    act = lay.images(flat)
    act[..., :c0] = x.data.transpose(0, 2, 3, 1)
    cin = c0
    for wt, b, g in zip(weights[:-1], biases[:-1], grow):
        acc = np.zeros((span, g), dtype=x.dtype)
        _shift_forward(np.ascontiguousarray(flat[:, :cin]), wp, wt.data, acc)
        acc += b.data
        np.maximum(acc, acc * slope, out=acc)  # leaky ReLU for slope in [0, 1]
        act[..., cin:cin + g] = lay.outputs(acc)
        cin += g
    o = dims[-1][0]
    acc = np.zeros((span, o), dtype=x.dtype)
    _shift_forward(flat, wp, weights[-1].data, acc)
    acc += biases[-1].data
    out = np.ascontiguousarray(lay.outputs(acc).transpose(0, 3, 1, 2))

    def bw(gout):
        gbuf = np.zeros_like(flat)
        gw = [None] * len(weights)
        gb = [None] * len(weights)

        def layer_grad(idx, gl, width):
            cout = gl.shape[-1]
            gfull = np.zeros((span, cout), dtype=gl.dtype)
            lay.outputs(gfull)[...] = gl
            dw = np.zeros((3, 3, cout, width), dtype=gl.dtype)
            # strided in-place adds are slow, so accumulate densely then add once
            dsrc = np.zeros((lay.rows, width), dtype=gl.dtype)
            _shift_backward(np.ascontiguousarray(flat[:, :width]), wp, weights[idx].data,
                            gfull, dsrc, dw)
            gbuf[:, :width] += dsrc
            gw[idx] = dw.transpose(2, 3, 0, 1)
            gb[idx] = gl.reshape(-1, cout).sum(0)

        layer_grad(len(weights) - 1, gout.transpose(0, 2, 3, 1), total)
        gact = lay.images(gbuf)
        for idx in range(len(grow) - 1, -1, -1):
            cin = c0 + sum(grow[:idx])
            ga = gact[..., cin:cin + grow[idx]]
            # activations are positive exactly where pre-activations are
            pos = act[..., cin:cin + grow[idx]] > 0
            layer_grad(idx, np.where(pos, ga, ga * slope), cin)
        gx = np.ascontiguousarray(gact[..., :c0].transpose(0, 3, 1, 2))
        return (gx, *gw, *gb)

    return _make(out, (x, *weights, *biases), bw, "dense_block")


def zeros(shape, requires_grad: bool = False) -> Tensor:
    return Tensor(np.zeros(shape, dtype=_DTYPE), requires_grad=requires_grad)
