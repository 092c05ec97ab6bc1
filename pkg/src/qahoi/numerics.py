"""Dense arrays with reverse-mode differentiation.

Only the operations the detection pipeline needs are provided. Each op
records a closure that maps the output gradient to gradients of its inputs;
:func:`backward` replays the closures in reverse topological order.

Arrays are float64 by default so that finite-difference checks are
meaningful; :func:`set_default_dtype` switches new arrays to float32.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np

_DEFAULT_DTYPE = np.float64
_GRAD_ENABLED = True


class NonFiniteError(FloatingPointError):
    """Raised when an operation would store NaN or Inf."""


def set_default_dtype(dtype) -> None:
    global _DEFAULT_DTYPE
    dtype = np.dtype(dtype).type
    if dtype not in (np.float32, np.float64):
        raise ValueError(f"unsupported dtype {dtype}")
    _DEFAULT_DTYPE = dtype


def get_default_dtype():
    return _DEFAULT_DTYPE


@contextlib.contextmanager
def default_dtype(dtype):
    previous = _DEFAULT_DTYPE
    set_default_dtype(dtype)
    try:
        yield
    finally:
        set_default_dtype(previous)


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block."""
    global _GRAD_ENABLED
    previous = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = previous


def is_grad_enabled() -> bool:
    return _GRAD_ENABLED


def _check_finite(data: np.ndarray) -> None:
    if not np.isfinite(data).all():
        raise NonFiniteError(f"non-finite values in array of shape {data.shape}")


class Array:
    """A row-major float array that can record how it was computed."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward")
    __array_priority__ = 1000

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        data = np.array(data, dtype=dtype or _DEFAULT_DTYPE)
        _check_finite(data)
        self.data = data
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Array, ...] = ()
        self._backward: Callable | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def detach(self) -> "Array":
        return Array(self.data, dtype=self.data.dtype)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Array(shape={self.shape}{flag})"

    def __len__(self) -> int:
        return self.data.shape[0]

    # arithmetic
    def __add__(self, other): return add(self, other)
    def __radd__(self, other): return add(other, self)
    def __sub__(self, other): return sub(self, other)
    def __rsub__(self, other): return sub(other, self)
    def __mul__(self, other): return mul(self, other)
    def __rmul__(self, other): return mul(other, self)
    def __truediv__(self, other): return div(self, other)
    def __rtruediv__(self, other): return div(other, self)
    def __neg__(self): return neg(self)
    def __pow__(self, exponent): return power(self, exponent)
    def __matmul__(self, other): return matmul(self, other)
    def __getitem__(self, index): return getitem(self, index)

    def sum(self, axis=None, keepdims=False): return sum_(self, axis, keepdims)
    def mean(self, axis=None, keepdims=False): return mean(self, axis, keepdims)
    def reshape(self, *shape): return reshape(self, shape[0] if len(shape) == 1 and isinstance(shape[0], (tuple, list)) else shape)
    def transpose(self, *axes): return transpose(self, axes[0] if len(axes) == 1 and isinstance(axes[0], (tuple, list)) else axes)
    def sigmoid(self): return sigmoid(self)
    def exp(self): return exp(self)
    def log(self): return log(self)
    def relu(self): return relu(self)
    def abs(self): return abs_(self)


def as_array(x, like: Array | None = None) -> Array:
    if isinstance(x, Array):
        return x
    dtype = like.data.dtype if like is not None else None
    return Array(x, dtype=dtype)


def _result(data: np.ndarray, parents: tuple[Array, ...], backward: Callable) -> Array:
    _check_finite(data)
    out = Array.__new__(Array)
    out.data = data
    out.grad = None
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
    else:
        out.requires_grad = False
        out._parents = ()
        out._backward = None
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def backward(loss: Array, grad: np.ndarray | None = None) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every reachable leaf."""
    if grad is None:
        if loss.data.size != 1:
            raise ValueError(f"backward() needs a scalar loss, got shape {loss.shape}")
        grad = np.ones_like(loss.data)
    if not loss.requires_grad:
        return

    order: list[Array] = []
    seen: set[int] = set()
    stack: list[tuple[Array, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))

    grads: dict[int, np.ndarray] = {id(loss): grad}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = np.array(g, dtype=node.data.dtype) if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = grads[key] + pg if key in grads else pg


# ----------------------------------------------------------------------------
# elementwise


def add(a, b) -> Array:
    a = as_array(a, b if isinstance(b, Array) else None)
    b = as_array(b, a)
    return _result(a.data + b.data, (a, b),
                   lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Array:
    a = as_array(a, b if isinstance(b, Array) else None)
    b = as_array(b, a)
    return _result(a.data - b.data, (a, b),
                   lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Array:
    a = as_array(a, b if isinstance(b, Array) else None)
    b = as_array(b, a)
    return _result(a.data * b.data, (a, b),
                   lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def div(a, b) -> Array:
    a = as_array(a, b if isinstance(b, Array) else None)
    b = as_array(b, a)
    out = a.data / b.data

    def back(g):
        return _unbroadcast(g / b.data, a.shape), _unbroadcast(-g * out / b.data, b.shape)

    return _result(out, (a, b), back)


def neg(a: Array) -> Array:
    return _result(-a.data, (a,), lambda g: (-g,))


def power(a: Array, exponent: float) -> Array:
    out = a.data ** exponent
    return _result(out, (a,), lambda g: (g * exponent * a.data ** (exponent - 1),))


def exp(a: Array) -> Array:
    out = np.exp(a.data)
    return _result(out, (a,), lambda g: (g * out,))


def log(a: Array) -> Array:
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(a.data)
    return _result(out, (a,), lambda g: (g / a.data,))


def sqrt(a: Array) -> Array:
    out = np.sqrt(a.data)
    return _result(out, (a,), lambda g: (g * 0.5 / out,))


def _sigmoid_np(x: np.ndarray) -> np.ndarray:
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(x.dtype, copy=False)


def sigmoid(a: Array) -> Array:
    out = _sigmoid_np(a.data)
    return _result(out, (a,), lambda g: (g * out * (1.0 - out),))


def log_sigmoid(a: Array) -> Array:
    """log(sigmoid(x)) without overflow for large |x|."""
    x = a.data
    out = np.minimum(x, 0.0) - np.log1p(np.exp(-np.abs(x)))
    return _result(out, (a,), lambda g: (g * _sigmoid_np(-x),))


def inverse_sigmoid(a: Array, eps: float = 1e-5) -> Array:
    x = clip(a, 0.0, 1.0)
    return log(maximum(x, eps)) - log(maximum(1.0 - x, eps))


def relu(a: Array) -> Array:
    mask = a.data > 0
    return _result(a.data * mask, (a,), lambda g: (g * mask,))


def abs_(a: Array) -> Array:
    # right-continuous subgradient: d|x|/dx = 1 at x == 0
    sign = np.where(a.data >= 0, 1.0, -1.0).astype(a.data.dtype)
    return _result(np.abs(a.data), (a,), lambda g: (g * sign,))


def maximum(a, b) -> Array:
    a = as_array(a, b if isinstance(b, Array) else None)
    b = as_array(b, a)
    pick_a = a.data >= b.data
    return _result(np.maximum(a.data, b.data), (a, b),
                   lambda g: (_unbroadcast(g * pick_a, a.shape), _unbroadcast(g * ~pick_a, b.shape)))


def minimum(a, b) -> Array:
    a = as_array(a, b if isinstance(b, Array) else None)
    b = as_array(b, a)
    pick_a = a.data <= b.data
    return _result(np.minimum(a.data, b.data), (a, b),
                   lambda g: (_unbroadcast(g * pick_a, a.shape), _unbroadcast(g * ~pick_a, b.shape)))


def clip(a: Array, lo: float, hi: float) -> Array:
    inside = (a.data >= lo) & (a.data <= hi)
    return _result(np.clip(a.data, lo, hi), (a,), lambda g: (g * inside,))


def where(cond: np.ndarray, a, b) -> Array:
    a = as_array(a, b if isinstance(b, Array) else None)
    b = as_array(b, a)
    cond = np.asarray(cond, dtype=bool)
    return _result(np.where(cond, a.data, b.data), (a, b),
                   lambda g: (_unbroadcast(g * cond, a.shape), _unbroadcast(g * ~cond, b.shape)))


# ----------------------------------------------------------------------------
# reductions and shape ops


def _norm_axis(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(ax % ndim for ax in axis)


def sum_(a: Array, axis=None, keepdims: bool = False) -> Array:
    axes = _norm_axis(axis, a.ndim)
    out = a.data.sum(axis=axes, keepdims=keepdims)

    def back(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, a.shape),)

    return _result(np.asarray(out), (a,), back)


def mean(a: Array, axis=None, keepdims: bool = False) -> Array:
    axes = _norm_axis(axis, a.ndim)
    count = int(np.prod([a.shape[ax] for ax in axes])) if axes else 1
    return sum_(a, axes, keepdims) * (1.0 / max(count, 1))


def reshape(a: Array, shape) -> Array:
    return _result(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def transpose(a: Array, axes=None) -> Array:
    axes = tuple(axes) if axes else tuple(reversed(range(a.ndim)))
    inverse = tuple(np.argsort(axes))
    return _result(a.data.transpose(axes), (a,), lambda g: (g.transpose(inverse),))


def swapaxes(a: Array, ax1: int, ax2: int) -> Array:
    axes = list(range(a.ndim))
    axes[ax1], axes[ax2] = axes[ax2], axes[ax1]
    return transpose(a, axes)


def _is_basic_index(index) -> bool:
    items = index if isinstance(index, tuple) else (index,)
    return all(isinstance(i, (slice, int, np.integer, type(None), type(Ellipsis))) for i in items)


def getitem(a: Array, index) -> Array:
    out = a.data[index]
    basic = _is_basic_index(index)

    def back(g):
        full = np.zeros_like(a.data)
        if basic:
            full[index] = g
        else:
            np.add.at(full, index, g)
        return (full,)

    return _result(np.array(out), (a,), back)


def concat(arrays: Sequence[Array], axis: int = 0) -> Array:
    arrays = [as_array(x) for x in arrays]
    out = np.concatenate([x.data for x in arrays], axis=axis)
    bounds = np.cumsum([x.shape[axis] for x in arrays])[:-1]

    def back(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _result(out, tuple(arrays), back)


def stack(arrays: Sequence[Array], axis: int = 0) -> Array:
    arrays = [as_array(x) for x in arrays]
    out = np.stack([x.data for x in arrays], axis=axis)

    def back(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(arrays)))

    return _result(out, tuple(arrays), back)


def matmul(a: Array, b: Array) -> Array:
    a = as_array(a, b if isinstance(b, Array) else None)
    b = as_array(b, a)
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError("matmul operands must be at least 2-D")

    def back(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _result(a.data @ b.data, (a, b), back)


# ----------------------------------------------------------------------------
# fused neural-network primitives


def softmax(a: Array, axis: int = -1) -> Array:
    """Max-subtracted softmax along ``axis``."""
    if not -a.ndim <= axis < max(a.ndim, 1):
        raise ValueError(f"axis {axis} out of range for shape {a.shape}")
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def back(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _result(out, (a,), back)


def layer_norm(x: Array, weight: Array, bias: Array, eps: float = 1e-5) -> Array:
    """Normalize over the last axis, then scale and shift."""
    mu = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mu
    var = (centered ** 2).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv
    out = xhat * weight.data + bias.data
    n = x.shape[-1]

    def back(g):
        gw = _unbroadcast(g * xhat, weight.shape)
        gb = _unbroadcast(g, bias.shape)
        gxhat = g * weight.data
        gx = inv / n * (n * gxhat - gxhat.sum(-1, keepdims=True)
                        - xhat * (gxhat * xhat).sum(-1, keepdims=True))
        return gx, gw, gb

    return _result(out, (x, weight, bias), back)


def conv2d(x: Array, weight: Array, bias: Array | None, stride: int = 1, padding: int = 0) -> Array:
    """Channels-last convolution.

    ``x`` is (B, H, W, C_in), ``weight`` is (C_out, C_in, kh, kw); the result
    is (B, H_out, W_out, C_out).
    """
    B, H, W, C = x.shape
    O, Ci, kh, kw = weight.shape
    if Ci != C:
        raise ValueError(f"conv2d expects {Ci} input channels, got {C}")
    xp = np.pad(x.data, ((0, 0), (padding, padding), (padding, padding), (0, 0))) if padding else x.data
    Hp, Wp = xp.shape[1], xp.shape[2]
    Ho = (Hp - kh) // stride + 1
    Wo = (Wp - kw) // stride + 1
    if Ho <= 0 or Wo <= 0:
        raise ValueError(f"input {H}x{W} too small for kernel {kh}x{kw}")
    windows = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(1, 2))
    windows = windows[:, : (Ho - 1) * stride + 1: stride, : (Wo - 1) * stride + 1: stride]
    cols = windows.reshape(B, Ho, Wo, C * kh * kw)
    wmat = weight.data.reshape(O, C * kh * kw)
    out = cols @ wmat.T
    if bias is not None:
        out = out + bias.data

    def back(g):
        g2 = g.reshape(-1, O)
        gw = (g2.T @ cols.reshape(-1, C * kh * kw)).reshape(weight.shape)
        gcols = (g @ wmat).reshape(B, Ho, Wo, C, kh, kw)
        gxp = np.zeros_like(xp)
        for i in range(kh):
            for j in range(kw):
                gxp[:, i: i + stride * (Ho - 1) + 1: stride, j: j + stride * (Wo - 1) + 1: stride, :] += gcols[..., i, j]
        gx = gxp[:, padding: padding + H, padding: padding + W, :] if padding else gxp
        grads = (gx, gw)
        if bias is not None:
            grads = grads + (g2.sum(axis=0),)
        return grads

    parents = (x, weight) if bias is None else (x, weight, bias)
    return _result(out, parents, back)


def grid_sample(value: Array, points: Array) -> Array:
    """Bilinear sampling of channels-last maps at normalized points.

    ``value`` is (G, H, W, C) and ``points`` is (G, P, 2) holding (x, y) in
    normalized [0, 1] coordinates of the map; the result is (G, P, C).
    Normalized p maps to pixel coordinate p * extent - 0.5. Cells outside
    the map contribute zero. At exact cell boundaries the gradient with
    respect to the point is the right-continuous one.
    """
    G, H, W, C = value.shape
    if H < 1 or W < 1 or C < 1:
        raise ValueError(f"cannot sample from degenerate map {value.shape}")
    pts = points.data
    x = pts[..., 0] * W - 0.5
    y = pts[..., 1] * H - 0.5
    x0f = np.floor(x)
    y0f = np.floor(y)
    fx = x - x0f
    fy = y - y0f
    x0 = x0f.astype(np.int64)
    y0 = y0f.astype(np.int64)
    flat_value = value.data.reshape(G * H * W, C)
    base = (np.arange(G, dtype=np.int64) * (H * W))[:, None]

    idx, valid, vals = [], [], []
    wts = []
    for dy in (0, 1):
        for dx in (0, 1):
            xi = x0 + dx
            yi = y0 + dy
            ok = (xi >= 0) & (xi < W) & (yi >= 0) & (yi < H)
            flat = base + np.clip(yi, 0, H - 1) * W + np.clip(xi, 0, W - 1)
            v = flat_value[flat] * ok[..., None]
            wx = fx if dx else 1.0 - fx
            wy = fy if dy else 1.0 - fy
            idx.append(flat)
            valid.append(ok)
            vals.append(v)
            wts.append(wx * wy)
    out = sum(w[..., None] * v for w, v in zip(wts, vals))

    def back(g):
        gv = np.zeros_like(flat_value)
        all_idx = np.concatenate([i[o] for i, o in zip(idx, valid)])
        all_contrib = np.concatenate([(w[..., None] * g)[o] for w, o in zip(wts, valid)])
        np.add.at(gv, all_idx, all_contrib)
        v00, v01, v10, v11 = vals
        dvx = (v01 - v00) * (1.0 - fy)[..., None] + (v11 - v10) * fy[..., None]
        dvy = (v10 - v00) * (1.0 - fx)[..., None] + (v11 - v01) * fx[..., None]
        gp = np.stack([(dvx * g).sum(-1) * W, (dvy * g).sum(-1) * H], axis=-1)
        return gv.reshape(value.shape), gp

    return _result(out, (value, points), back)


def bilinear_sample(feature_map: Array, point) -> Array:
    """Sample a C x H x W map at normalized (x, y) point(s).

    ``point`` may be a single (x, y) pair or any (..., 2) batch of points;
    the result has shape (..., C).
    """
    feature_map = as_array(feature_map)
    if feature_map.ndim != 3 or min(feature_map.shape) < 1:
        raise ValueError(f"feature map must be C x H x W with positive extents, got {feature_map.shape}")
    if not isinstance(point, Array):
        raw = np.asarray(point, dtype=float)
        if not np.isfinite(raw).all():
            raise ValueError("sampling point must be finite")
        point = Array(raw, dtype=feature_map.dtype)
    if point.shape[-1] != 2:
        raise ValueError("points must end in an (x, y) axis")
    lead = point.shape[:-1]
    C = feature_map.shape[0]
    channels_last = transpose(feature_map, (1, 2, 0)).reshape(1, feature_map.shape[1], feature_map.shape[2], C)
    sampled = grid_sample(channels_last, point.reshape(1, -1, 2))
    return sampled.reshape(lead + (C,))


# ----------------------------------------------------------------------------
# gradient checking


def finite_difference_check(
    f: Callable[[], Array],
    params: Iterable[Array],
    eps: float = 1e-5,
    max_entries: int | None = None,
    rng: np.random.Generator | None = None,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``f`` takes no arguments and reads the current values of ``params``; it
    must be deterministic. The error per entry is
    ``|g_analytic - g_fd| / max(1, |g_fd|)``. With ``max_entries`` only a
    random subset of each parameter's entries is probed.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    params = list(params)
    for p in params:
        p.grad = None
    loss = f()
    backward(loss)
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]

    worst = 0.0
    with no_grad():
        for p, ga in zip(params, analytic):
            if not p.data.flags.c_contiguous:
                p.data = np.ascontiguousarray(p.data)
            flat = p.data.reshape(-1)
            positions = np.arange(flat.size)
            if max_entries is not None and flat.size > max_entries:
                rng = rng or np.random.default_rng(0)
                positions = rng.choice(flat.size, size=max_entries, replace=False)
            ga_flat = ga.reshape(-1)
            for pos in positions:
                orig = flat[pos]
                flat[pos] = orig + eps
                up = float(f().data.sum())
                flat[pos] = orig - eps
                down = float(f().data.sum())
                flat[pos] = orig
                g_fd = (up - down) / (2.0 * eps)
                err = abs(ga_flat[pos] - g_fd) / max(1.0, abs(g_fd))
                worst = max(worst, err)
    for p in params:
        p.grad = None
    return worst
