"""A small reverse-mode autodiff engine over float64 numpy arrays.

Every op returns a :class:`Tensor` that remembers its parents and a closure
that pushes the output gradient back to them. ``loss.backward()`` walks the
graph in reverse topological order. Only what the toy saliency network
needs is here: elementwise arithmetic with broadcasting, reductions,
3x3 convolution, batch norm, ReLU, bilinear x2 upsampling, 2x2 average
pooling and channel concatenation.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

DTYPE = np.float64

# when a list, non-smooth ops append their branch pattern (see record_kinks)
_kink_log = None


class record_kinks:
    """Context manager collecting the branch patterns of ReLU, minimum, amin
    and amax evaluated inside it. Two evaluations of the same graph took the
    same smooth branch everywhere iff their logs are equal."""

    def __enter__(self):
        global _kink_log
        self._saved = _kink_log
        _kink_log = self.log = []
        return self.log

    def __exit__(self, *exc):
        global _kink_log
        _kink_log = self._saved
        return False


def _log_branch(pattern):
    if _kink_log is not None:
        _kink_log.append(pattern)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_prev", "_backward", "name")
    # make ndarray <op> Tensor dispatch to the reflected Tensor methods
    __array_ufunc__ = None

    def __init__(self, data, requires_grad: bool = False, name: str = ""):
        self.data = np.asarray(data, dtype=DTYPE)
        self.grad = None
        self.requires_grad = requires_grad
        self._prev = ()
        self._backward = None
        self.name = name

    def __repr__(self):
        return f"Tensor(shape={self.shape}{', grad' if self.requires_grad else ''})"

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self):
        self.grad = None

    def backward(self, grad=None):
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without an explicit gradient needs a scalar output")
            grad = np.ones_like(self.data)
        order = _topo(self)
        self.grad = np.asarray(grad, dtype=DTYPE) + (0.0 if self.grad is None else self.grad)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # arithmetic -----------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(as_tensor(other)))

    def __rsub__(self, other):
        return add(as_tensor(other), neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(as_tensor(other), self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, p):
        return power(self, p)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis, keepdims)

    def reshape(self, *shape):
        return reshape(self, shape[0] if len(shape) == 1 and isinstance(shape[0], tuple) else shape)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _topo(root):
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._prev:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def _accum(t: Tensor, g):
    if not t.requires_grad:
        return
    g = _unbroadcast(g, t.shape)
    t.grad = g.copy() if t.grad is None else t.grad + g


def _unbroadcast(g, shape):
    g = np.asarray(g, dtype=DTYPE)
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _node(data, parents, backward) -> Tensor:
    out = Tensor(data)
    parents = tuple(p for p in parents if isinstance(p, Tensor))
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._prev = parents
        out._backward = backward
    return out


# --------------------------------------------------------------------------
# elementwise and reductions


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        _accum(a, g)
        _accum(b, g)

    return _node(a.data + b.data, (a, b), backward)


def neg(a) -> Tensor:
    return _node(-a.data, (a,), lambda g: _accum(a, -g))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        _accum(a, g * b.data)
        _accum(b, g * a.data)

    return _node(a.data * b.data, (a, b), backward)


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data / b.data

    def backward(g):
        _accum(a, g / b.data)
        _accum(b, -g * out / b.data)

    return _node(out, (a, b), backward)


def power(a, p: float) -> Tensor:
    a = as_tensor(a)
    return _node(a.data**p, (a,), lambda g: _accum(a, g * p * a.data ** (p - 1)))


def log(a) -> Tensor:
    a = as_tensor(a)
    return _node(np.log(a.data), (a,), lambda g: _accum(a, g / a.data))


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    out = np.sqrt(a.data)
    return _node(out, (a,), lambda g: _accum(a, g * 0.5 / out))


def relu(x) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0
    _log_branch(mask)
    # np.maximum keeps NaN, so a blow-up is not silently zeroed
    return _node(np.maximum(x.data, 0.0), (x,), lambda g: _accum(x, g * mask))


def minimum(a, b) -> Tensor:
    """Elementwise minimum; exact ties send half the gradient to each side."""
    a, b = as_tensor(a), as_tensor(b)
    wa = np.where(a.data < b.data, 1.0, np.where(a.data == b.data, 0.5, 0.0))
    _log_branch(wa)

    def backward(g):
        _accum(a, g * wa)
        _accum(b, g * (1.0 - wa))

    return _node(np.minimum(a.data, b.data), (a, b), backward)


def _norm_axis(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(ax % ndim for ax in axis)


def _expand(g, shape, axis, keepdims):
    if not keepdims:
        for ax in sorted(axis):
            g = np.expand_dims(g, ax)
    return np.broadcast_to(g, shape)


def tsum(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    ax = _norm_axis(axis, a.ndim)
    out = a.data.sum(axis=ax, keepdims=keepdims)
    return _node(out, (a,), lambda g: _accum(a, _expand(g, a.shape, ax, keepdims)))


def tmean(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    ax = _norm_axis(axis, a.ndim)
    n = int(np.prod([a.shape[i] for i in ax]))
    out = a.data.mean(axis=ax, keepdims=keepdims)
    return _node(out, (a,), lambda g: _accum(a, _expand(g, a.shape, ax, keepdims) / n))


def _extreme(a, axis, keepdims, fn):
    a = as_tensor(a)
    ax = _norm_axis(axis, a.ndim)
    out = fn(a.data, axis=ax, keepdims=True)
    hit = a.data == out
    _log_branch(hit)
    share = hit / hit.sum(axis=ax, keepdims=True)

    def backward(g):
        _accum(a, _expand(g, a.shape, ax, keepdims) * share)

    return _node(out if keepdims else np.squeeze(out, axis=ax), (a,), backward)


def amax(a, axis=None, keepdims=False) -> Tensor:
    return _extreme(a, axis, keepdims, np.max)


def amin(a, axis=None, keepdims=False) -> Tensor:
    return _extreme(a, axis, keepdims, np.min)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    return _node(a.data.reshape(shape), (a,), lambda g: _accum(a, g.reshape(a.shape)))


def concat(tensors, axis: int = 1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def backward(g):
        for t, lo, hi in zip(tensors, bounds[:-1], bounds[1:]):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(lo, hi)
            _accum(t, g[tuple(sl)])

    return _node(np.concatenate([t.data for t in tensors], axis=axis), tensors, backward)


def take(a, index: int, axis: int = 1) -> Tensor:
    """Slice ``index`` along ``axis``, keeping the axis (size 1)."""
    a = as_tensor(a)
    sl = [slice(None)] * a.ndim
    sl[axis] = slice(index, index + 1)
    sl = tuple(sl)

    def backward(g):
        full = np.zeros_like(a.data)
        full[sl] = g
        _accum(a, full)

    return _node(a.data[sl], (a,), backward)


# --------------------------------------------------------------------------
# convolutional ops, NCHW layout


def _check4(x, what):
    if x.ndim != 4:
        raise ValueError(f"{what} expects an (N, C, H, W) tensor, got shape {x.shape}")


def conv2d(x, w, b=None) -> Tensor:
    """3x3 convolution, stride 1, zero padding 1 (output keeps H x W)."""
    x, w = as_tensor(x), as_tensor(w)
    _check4(x, "conv2d")
    if w.ndim != 4 or w.shape[2:] != (3, 3):
        raise ValueError(f"conv2d weight must be (O, C, 3, 3), got {w.shape}")
    if w.shape[1] != x.shape[1]:
        raise ValueError(f"conv2d: input has {x.shape[1]} channels, weight expects {w.shape[1]}")
    xp = np.pad(x.data, ((0, 0), (0, 0), (1, 1), (1, 1)))
    win = sliding_window_view(xp, (3, 3), axis=(2, 3))  # N, C, H, W, 3, 3
    out = np.tensordot(win, w.data, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)
    parents = (x, w)
    if b is not None:
        b = as_tensor(b)
        out = out + b.data[None, :, None, None]
        parents = (x, w, b)

    def backward(g):
        if w.requires_grad:
            _accum(w, np.tensordot(g, win, axes=([0, 2, 3], [0, 2, 3])))
        if b is not None and b.requires_grad:
            _accum(b, g.sum(axis=(0, 2, 3)))
        if x.requires_grad:
            gp = np.pad(g, ((0, 0), (0, 0), (1, 1), (1, 1)))
            gwin = sliding_window_view(gp, (3, 3), axis=(2, 3))
            gx = np.tensordot(gwin, w.data[:, :, ::-1, ::-1], axes=([1, 4, 5], [0, 2, 3]))
            _accum(x, gx.transpose(0, 3, 1, 2))

    return _node(np.ascontiguousarray(out), parents, backward)


class BatchNormState:
    """Running statistics for one batch-norm layer."""

    __slots__ = ("mean", "var", "momentum")

    def __init__(self, channels: int, momentum: float = 0.1):
        self.mean = np.zeros(channels, dtype=DTYPE)
        self.var = np.ones(channels, dtype=DTYPE)
        self.momentum = momentum


def batch_norm(x, gamma, beta, state: BatchNormState, training: bool, eps: float = 1e-5) -> Tensor:
    """Per-channel batch norm. Training mode normalizes with batch statistics
    (biased variance) and updates ``state``; inference mode uses ``state``."""
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    _check4(x, "batch_norm")
    axes = (0, 2, 3)
    bshape = (1, -1, 1, 1)
    if training:
        m = x.shape[0] * x.shape[2] * x.shape[3]
        mu = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        unbiased = var * m / max(m - 1, 1)
        state.mean = (1 - state.momentum) * state.mean + state.momentum * mu
        state.var = (1 - state.momentum) * state.var + state.momentum * unbiased
    else:
        mu, var = state.mean, state.var
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu.reshape(bshape)) * inv.reshape(bshape)
    out = gamma.data.reshape(bshape) * xhat + beta.data.reshape(bshape)

    def backward(g):
        _accum(gamma, (g * xhat).sum(axis=axes))
        _accum(beta, g.sum(axis=axes))
        if not x.requires_grad:
            return
        dxhat = g * gamma.data.reshape(bshape)
        if training:
            mean_d = dxhat.mean(axis=axes, keepdims=True)
            mean_dx = (dxhat * xhat).mean(axis=axes, keepdims=True)
            _accum(x, inv.reshape(bshape) * (dxhat - mean_d - xhat * mean_dx))
        else:
            _accum(x, dxhat * inv.reshape(bshape))

    return _node(out, (x, gamma, beta), backward)


@lru_cache(maxsize=None)
def _upsample_matrix(n: int) -> np.ndarray:
    """(2n, n) linear interpolation weights, half-pixel centres, edge clamped."""
    a = np.zeros((2 * n, n), dtype=DTYPE)
    for o in range(2 * n):
        s = max((o + 0.5) / 2.0 - 0.5, 0.0)
        i0 = min(int(np.floor(s)), n - 1)
        i1 = min(i0 + 1, n - 1)
        lam = s - i0
        a[o, i0] += 1.0 - lam
        a[o, i1] += lam
    a.setflags(write=False)
    return a


def upsample2x(x) -> Tensor:
    """Bilinear x2 upsampling (half-pixel alignment, edges clamped)."""
    x = as_tensor(x)
    _check4(x, "upsample2x")
    ah, aw = _upsample_matrix(x.shape[2]), _upsample_matrix(x.shape[3])
    out = np.einsum("ph,nchw,qw->ncpq", ah, x.data, aw, optimize=True)

    def backward(g):
        _accum(x, np.einsum("ph,ncpq,qw->nchw", ah, g, aw, optimize=True))

    return _node(out, (x,), backward)


def avg_pool2x(x) -> Tensor:
    x = as_tensor(x)
    _check4(x, "avg_pool2x")
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ValueError(f"avg_pool2x needs even spatial dims, got {h}x{w}")
    out = x.data.reshape(n, c, h // 2, 2, w // 2, 2).mean(axis=(3, 5))

    def backward(g):
        _accum(x, np.repeat(np.repeat(g, 2, axis=2), 2, axis=3) / 4.0)

    return _node(out, (x,), backward)
