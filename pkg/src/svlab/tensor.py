"""Dense float64 tensors with reverse-mode differentiation.

Every network operation in the toolkit is built on this module. Values are
numpy arrays; gradients are produced by recording ops on a Tape and walking
it once in reverse. Without an active tape, ops compute values only, which
is the fast path used for embedding extraction.

Design points (fixed for reproducibility):
  * double precision everywhere,
  * "same" padding is zero padding applied before striding,
  * log/sqrt inputs are floored at 1e-10,
  * batchnorm momentum 0.1, epsilon 1e-5.
"""

import os
from contextlib import contextmanager

import numpy as np

from .errors import ConfigError, ShapeError, UsageError

try:
    if os.environ.get("SVLAB_NO_KERNELS"):
        _K = None
    else:
        from . import _kernels as _K
except ImportError:  # pure-numpy fallback
    _K = None

LOG_FLOOR = 1e-10
_num_threads = 1


def set_num_threads(n):
    """Thread count for the fused conv kernels (results are unaffected)."""
    global _num_threads
    _num_threads = max(1, int(n))


def kernels_available():
    return _K is not None


class Tensor:
    """A dense float64 array, optionally participating in a tape."""

    __slots__ = ("data", "grad", "requires_grad")

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad)

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data)

    def detach(self):
        return Tensor(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # arithmetic sugar; every overload routes through the recorded ops below
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __pow__(self, p):
        return power(self, p)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)


class Tape:
    """Ordered record of ops; backward visits each node once, in reverse."""

    def __init__(self):
        self.nodes = []  # (out, inputs, backward_fn)

    def backward(self, loss):
        """Populate .grad of every tape participant with d(loss)/d(tensor)."""
        if not isinstance(loss, Tensor) or loss.size != 1:
            raise UsageError("backward requires a scalar loss tensor")
        if not loss.requires_grad:
            raise UsageError("loss is not recorded on this tape")
        loss.grad = np.ones_like(loss.data)
        for out, inputs, fn in reversed(self.nodes):
            g = out.grad
            if g is None:
                continue
            grads = fn(g)
            for t, gi in zip(inputs, grads):
                if gi is None or not t.requires_grad:
                    continue
                t.grad = gi if t.grad is None else t.grad + gi


_TAPE = None


@contextmanager
def tape():
    """Activate a fresh tape; ops executed inside are recorded on it."""
    global _TAPE
    prev = _TAPE
    t = Tape()
    _TAPE = t
    try:
        yield t
    finally:
        _TAPE = prev


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _record(out, inputs, backward_fn):
    if _TAPE is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        _TAPE.nodes.append((out, inputs, backward_fn))
    return out


def _unbroadcast(g, shape):
    """Sum gradient over broadcast axes back to the operand shape."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _check_broadcast(a, b, opname):
    try:
        return np.broadcast_shapes(a.data.shape, b.data.shape)
    except ValueError:
        raise ShapeError(
            f"{opname}: shapes {a.data.shape} and {b.data.shape} do not broadcast"
        ) from None


# ---------------------------------------------------------------------------
# elementwise arithmetic

def add(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast(a, b, "add")
    out = Tensor(a.data + b.data)

    def backward(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)

    return _record(out, (a, b), backward)


def sub(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast(a, b, "sub")
    out = Tensor(a.data - b.data)

    def backward(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)

    return _record(out, (a, b), backward)


def mul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast(a, b, "mul")
    out = Tensor(a.data * b.data)

    def backward(g):
        return (_unbroadcast(g * b.data, a.data.shape),
                _unbroadcast(g * a.data, b.data.shape))

    return _record(out, (a, b), backward)


def div(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast(a, b, "div")
    out = Tensor(a.data / b.data)

    def backward(g):
        return (_unbroadcast(g / b.data, a.data.shape),
                _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape))

    return _record(out, (a, b), backward)


def power(a, p):
    a = _as_tensor(a)
    p = float(p)
    out = Tensor(a.data ** p)

    def backward(g):
        return (g * (p * a.data ** (p - 1.0)),)

    return _record(out, (a,), backward)


def where(cond, a, b):
    """Select a where cond else b; cond is a plain boolean array (constant)."""
    a, b = _as_tensor(a), _as_tensor(b)
    cond = np.asarray(cond, dtype=bool)
    out = Tensor(np.where(cond, a.data, b.data))

    def backward(g):
        return (_unbroadcast(np.where(cond, g, 0.0), a.data.shape),
                _unbroadcast(np.where(cond, 0.0, g), b.data.shape))

    return _record(out, (a, b), backward)


def maximum(a, floor):
    """Elementwise max with a scalar floor; gradient passes where a >= floor."""
    a = _as_tensor(a)
    floor = float(floor)
    out = Tensor(np.maximum(a.data, floor))
    mask = a.data >= floor

    def backward(g):
        return (g * mask,)

    return _record(out, (a,), backward)


# ---------------------------------------------------------------------------
# linear algebra

def matmul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} @ {b.shape}")
    out = Tensor(a.data @ b.data)

    def backward(g):
        return g @ b.data.T, a.data.T @ g

    return _record(out, (a, b), backward)


# ---------------------------------------------------------------------------
# convolutions

def _conv1d_fwd_raw(xp, w, dilation):
    B, Ci, Tp = xp.shape
    Co, _, K = w.shape
    T = Tp - (K - 1) * dilation
    if _K is not None:
        out = np.empty((B, Co, T))
        _K.conv1d_fwd(xp, w, out, dilation, _num_threads)
        return out
    out = np.zeros((B, Co, T))
    for k in range(K):
        out += np.einsum("oc,bct->bot", w[:, :, k],
                         xp[:, :, k * dilation:k * dilation + T], optimize=True)
    return out


def _conv1d_dw_raw(xp, g, K, dilation):
    B, Ci, Tp = xp.shape
    Co, T = g.shape[1], g.shape[2]
    if _K is not None:
        dw = np.empty((Co, Ci, K))
        _K.conv1d_dw(xp, g, dw, dilation, _num_threads)
        return dw
    dw = np.zeros((Co, Ci, K))
    for k in range(K):
        dw[:, :, k] = np.einsum("bot,bct->oc", g,
                                xp[:, :, k * dilation:k * dilation + T], optimize=True)
    return dw


def conv1d(x, w, dilation=1):
    """Same-padded 1D convolution over time.

    x: (Ci, T) or (B, Ci, T); w: (Co, Ci, K) with K odd. Output keeps T.
    """
    x, w = _as_tensor(x), _as_tensor(w)
    if dilation < 1:
        raise ConfigError("conv1d: dilation must be >= 1")
    if w.ndim != 3:
        raise ShapeError(f"conv1d: weight must be rank 3, got {w.shape}")
    K = w.shape[2]
    if K % 2 == 0:
        raise ConfigError(f"conv1d: kernel size must be odd, got {K}")
    squeeze = x.ndim == 2
    xd = x.data[None] if squeeze else x.data
    if xd.ndim != 3 or xd.shape[1] != w.shape[1]:
        raise ShapeError(f"conv1d: input {x.shape} does not match weight {w.shape}")
    B, Ci, T = xd.shape
    pad = (K // 2) * dilation
    xp = np.zeros((B, Ci, T + 2 * pad))
    xp[:, :, pad:pad + T] = xd
    od = _conv1d_fwd_raw(xp, w.data, dilation)
    out = Tensor(od[0] if squeeze else od)

    def backward(g):
        gb = g[None] if squeeze else g
        gp = np.zeros((B, w.shape[0], T + 2 * pad))
        gp[:, :, pad:pad + T] = gb
        wflip = np.ascontiguousarray(w.data[:, :, ::-1].transpose(1, 0, 2))
        dx = _conv1d_fwd_raw(gp, wflip, dilation)
        dw = _conv1d_dw_raw(xp, np.ascontiguousarray(gb), K, dilation)
        return dx[0] if squeeze else dx, dw

    return _record(out, (x, w), backward)


def _conv2d_fwd_raw(xp, w, sF, sT, Fo, To):
    B, Ci = xp.shape[0], xp.shape[1]
    Co, _, KF, KT = w.shape
    if _K is not None:
        out = np.empty((B, Co, Fo, To))
        _K.conv2d_fwd(xp, w, out, sF, sT, _num_threads)
        return out
    out = np.zeros((B, Co, Fo, To))
    for kf in range(KF):
        for kt in range(KT):
            xs = xp[:, :, kf:kf + (Fo - 1) * sF + 1:sF, kt:kt + (To - 1) * sT + 1:sT]
            out += np.einsum("oc,bcft->boft", w[:, :, kf, kt], xs, optimize=True)
    return out


def _conv2d_dw_raw(xp, g, KF, KT, sF, sT):
    Co, Fo, To = g.shape[1], g.shape[2], g.shape[3]
    Ci = xp.shape[1]
    if _K is not None:
        dw = np.empty((Co, Ci, KF, KT))
        _K.conv2d_dw(xp, g, dw, sF, sT, _num_threads)
        return dw
    dw = np.zeros((Co, Ci, KF, KT))
    for kf in range(KF):
        for kt in range(KT):
            xs = xp[:, :, kf:kf + (Fo - 1) * sF + 1:sF, kt:kt + (To - 1) * sT + 1:sT]
            dw[:, :, kf, kt] = np.einsum("boft,bcft->oc", g, xs, optimize=True)
    return dw


def conv2d(x, w, stride=(1, 1)):
    """Same-padded (before striding) 2D convolution over frequency x time.

    x: (Ci, F, T) or (B, Ci, F, T); w: (Co, Ci, KF, KT) with odd kernels.
    Output spatial dims are ceil(F/sF) x ceil(T/sT).
    """
    x, w = _as_tensor(x), _as_tensor(w)
    sF, sT = int(stride[0]), int(stride[1])
    if sF < 1 or sT < 1:
        raise ConfigError("conv2d: strides must be >= 1")
    if w.ndim != 4:
        raise ShapeError(f"conv2d: weight must be rank 4, got {w.shape}")
    KF, KT = w.shape[2], w.shape[3]
    if KF % 2 == 0 or KT % 2 == 0:
        raise ConfigError(f"conv2d: kernel sizes must be odd, got {KF}x{KT}")
    squeeze = x.ndim == 3
    xd = x.data[None] if squeeze else x.data
    if xd.ndim != 4 or xd.shape[1] != w.shape[1]:
        raise ShapeError(f"conv2d: input {x.shape} does not match weight {w.shape}")
    B, Ci, F, T = xd.shape
    pF, pT = KF // 2, KT // 2
    Fo, To = -(-F // sF), -(-T // sT)
    xp = np.zeros((B, Ci, F + 2 * pF, T + 2 * pT))
    xp[:, :, pF:pF + F, pT:pT + T] = xd
    od = _conv2d_fwd_raw(xp, w.data, sF, sT, Fo, To)
    out = Tensor(od[0] if squeeze else od)

    def backward(g):
        gb = g[None] if squeeze else g
        Co = w.shape[0]
        gup = np.zeros((B, Co, F + 2 * pF, T + 2 * pT))
        gup[:, :, pF:pF + (Fo - 1) * sF + 1:sF, pT:pT + (To - 1) * sT + 1:sT] = gb
        wflip = np.ascontiguousarray(w.data[:, :, ::-1, ::-1].transpose(1, 0, 2, 3))
        dx = _conv2d_fwd_raw(gup, wflip, 1, 1, F, T)
        dw = _conv2d_dw_raw(xp, np.ascontiguousarray(gb), KF, KT, sF, sT)
        return dx[0] if squeeze else dx, dw

    return _record(out, (x, w), backward)


# ---------------------------------------------------------------------------
# activations

def relu(x):
    x = _as_tensor(x)
    out = Tensor(np.maximum(x.data, 0.0))
    mask = x.data > 0.0

    def backward(g):
        return (g * mask,)

    return _record(out, (x,), backward)


def sigmoid(x):
    x = _as_tensor(x)
    xd = x.data
    y = np.empty_like(xd)
    pos = xd >= 0
    y[pos] = 1.0 / (1.0 + np.exp(-xd[pos]))
    e = np.exp(xd[~pos])
    y[~pos] = e / (1.0 + e)
    out = Tensor(y)

    def backward(g):
        return (g * y * (1.0 - y),)

    return _record(out, (x,), backward)


def tanh(x):
    x = _as_tensor(x)
    y = np.tanh(x.data)
    out = Tensor(y)

    def backward(g):
        return (g * (1.0 - y * y),)

    return _record(out, (x,), backward)


def exp(x):
    x = _as_tensor(x)
    y = np.exp(x.data)
    out = Tensor(y)

    def backward(g):
        return (g * y,)

    return _record(out, (x,), backward)


def log(x):
    """Natural log with the input floored at LOG_FLOOR."""
    x = _as_tensor(x)
    clipped = np.maximum(x.data, LOG_FLOOR)
    out = Tensor(np.log(clipped))
    mask = x.data >= LOG_FLOOR

    def backward(g):
        return (np.where(mask, g / clipped, 0.0),)

    return _record(out, (x,), backward)


def sqrt(x):
    """Square root with the input floored at LOG_FLOOR."""
    x = _as_tensor(x)
    clipped = np.maximum(x.data, LOG_FLOOR)
    y = np.sqrt(clipped)
    out = Tensor(y)
    mask = x.data >= LOG_FLOOR

    def backward(g):
        return (np.where(mask, g / (2.0 * y), 0.0),)

    return _record(out, (x,), backward)


def softmax(x, axis):
    x = _as_tensor(x)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)
    out = Tensor(y)

    def backward(g):
        dot = (g * y).sum(axis=axis, keepdims=True)
        return ((g - dot) * y,)

    return _record(out, (x,), backward)


# ---------------------------------------------------------------------------
# reductions and shape ops

def _norm_axes(axes, ndim):
    if axes is None:
        return tuple(range(ndim))
    if isinstance(axes, int):
        axes = (axes,)
    return tuple(a % ndim for a in axes)


def sum_(x, axes=None, keepdims=False):
    x = _as_tensor(x)
    axes = _norm_axes(axes, x.ndim)
    out = Tensor(x.data.sum(axis=axes, keepdims=keepdims))

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, x.data.shape),)

    return _record(out, (x,), backward)


def mean(x, axes=None, keepdims=False):
    x = _as_tensor(x)
    axes = _norm_axes(axes, x.ndim)
    n = int(np.prod([x.data.shape[a] for a in axes]))
    out = Tensor(x.data.mean(axis=axes, keepdims=keepdims))

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g / n, x.data.shape),)

    return _record(out, (x,), backward)


def variance(x, axes=None, keepdims=False):
    """Population variance over the given axes."""
    x = _as_tensor(x)
    axes = _norm_axes(axes, x.ndim)
    n = int(np.prod([x.data.shape[a] for a in axes]))
    m = x.data.mean(axis=axes, keepdims=True)
    out = Tensor(((x.data - m) ** 2).mean(axis=axes, keepdims=keepdims))

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (2.0 / n * (x.data - m) * g,)

    return _record(out, (x,), backward)


def max_(x, axis):
    """Max over one axis; gradient routes to the first maximal element."""
    x = _as_tensor(x)
    axis = axis % x.ndim
    out = Tensor(x.data.max(axis=axis))
    idx = np.expand_dims(x.data.argmax(axis=axis), axis)

    def backward(g):
        dx = np.zeros_like(x.data)
        np.put_along_axis(dx, idx, np.expand_dims(g, axis), axis)
        return (dx,)

    return _record(out, (x,), backward)


def concat(tensors, axis):
    tensors = [_as_tensor(t) for t in tensors]
    axis = axis % tensors[0].ndim
    try:
        out = Tensor(np.concatenate([t.data for t in tensors], axis=axis))
    except ValueError:
        raise ShapeError(
            f"concat: shapes {[t.shape for t in tensors]} incompatible on axis {axis}"
        ) from None
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, splits, axis=axis))

    return _record(out, tuple(tensors), backward)


def reshape(x, shape):
    x = _as_tensor(x)
    try:
        out = Tensor(x.data.reshape(shape))
    except ValueError:
        raise ShapeError(f"reshape: cannot view {x.shape} as {shape}") from None

    def backward(g):
        return (g.reshape(x.data.shape),)

    return _record(out, (x,), backward)


def transpose(x, axes):
    x = _as_tensor(x)
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    out = Tensor(np.ascontiguousarray(x.data.transpose(axes)))

    def backward(g):
        return (np.ascontiguousarray(g.transpose(inv)),)

    return _record(out, (x,), backward)


def broadcast_to(x, shape):
    x = _as_tensor(x)
    out = Tensor(np.broadcast_to(x.data, shape).copy())

    def backward(g):
        return (_unbroadcast(g, x.data.shape),)

    return _record(out, (x,), backward)


def getitem(x, idx):
    x = _as_tensor(x)
    out = Tensor(x.data[idx].copy())

    def backward(g):
        dx = np.zeros_like(x.data)
        dx[idx] = g
        return (dx,)

    return _record(out, (x,), backward)


def detach(x):
    return Tensor(_as_tensor(x).data)


# ---------------------------------------------------------------------------
# batch normalization (fused op: composing it from primitives is too slow on
# the desk-scale hot path)

def batchnorm(x, gamma, beta, running_mean, running_var, training,
              momentum=0.1, eps=1e-5):
    """Normalize per channel (axis 1; axis 0 for rank-1 stats over a batch).

    gamma/beta are (C,) tensors; running_mean/running_var are plain numpy
    buffers updated in place when training.
    """
    x, gamma, beta = _as_tensor(x), _as_tensor(gamma), _as_tensor(beta)
    ch_axis = 0 if x.ndim == 1 else 1
    C = x.data.shape[ch_axis]
    if gamma.shape != (C,) or beta.shape != (C,):
        raise ShapeError(f"batchnorm: scale/shift must be ({C},)")
    axes = tuple(a for a in range(x.ndim) if a != ch_axis)
    n = max(1, int(np.prod([x.data.shape[a] for a in axes])))
    shape = tuple(C if a == ch_axis else 1 for a in range(x.ndim))

    if training:
        m = x.data.mean(axis=axes)
        v = x.data.var(axis=axes)
        running_mean *= 1.0 - momentum
        running_mean += momentum * m
        running_var *= 1.0 - momentum
        running_var += momentum * v
    else:
        m, v = running_mean, running_var

    inv = 1.0 / np.sqrt(v + eps)
    xhat = (x.data - m.reshape(shape)) * inv.reshape(shape)
    out = Tensor(gamma.data.reshape(shape) * xhat + beta.data.reshape(shape))

    def backward(g):
        dbeta = g.sum(axis=axes)
        dgamma = (g * xhat).sum(axis=axes)
        gs = gamma.data.reshape(shape) * inv.reshape(shape)
        if training:
            dx = gs * (g - (dbeta / n).reshape(shape)
                       - xhat * (dgamma / n).reshape(shape))
        else:
            dx = gs * g
        return dx, dgamma, dbeta

    return _record(out, (x, gamma, beta), backward)
