"""Differentiable primitives.

Each op computes its forward result with numpy (or a kernel from
:mod:`spikedistill.kernels`) and registers an exact backward rule on the tape.
Binary elementwise ops follow numpy broadcasting; the backward pass sums the
upstream gradient back over broadcast axes.
"""
from __future__ import annotations

from typing import Sequence

import numpy as np

from . import kernels
from .errors import DimensionError, DomainError
from .tensor import Tensor, record


def _const(x, like: Tensor) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=like.dtype), dtype=like.dtype)


def _pair(a, b) -> tuple[Tensor, Tensor]:
    if not isinstance(a, Tensor) and not isinstance(b, Tensor):
        raise TypeError("at least one operand must be a Tensor")
    if not isinstance(a, Tensor):
        a = _const(a, b)
    if not isinstance(b, Tensor):
        b = _const(b, a)
    return a, b


def _broadcast_shape(a: Tensor, b: Tensor, op: str) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{op}: cannot broadcast shapes {a.shape} and {b.shape}") from None


def unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``g`` down to ``shape`` (inverse of numpy broadcasting)."""
    if g.shape == shape:
        return g
    lead = g.ndim - len(shape)
    if lead:
        g = g.sum(axis=tuple(range(lead)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# -- elementwise arithmetic --------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _pair(a, b)
    _broadcast_shape(a, b, "add")
    sa, sb = a.shape, b.shape

    def bw(g):
        return unbroadcast(g, sa), unbroadcast(g, sb)

    return record("add", (a, b), (a.data + b.data,), bw)[0]


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)
    _broadcast_shape(a, b, "sub")
    sa, sb = a.shape, b.shape

    def bw(g):
        return unbroadcast(g, sa), unbroadcast(-g, sb)

    return record("sub", (a, b), (a.data - b.data,), bw)[0]


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)
    _broadcast_shape(a, b, "mul")
    ad, bd = a.data, b.data

    def bw(g):
        ga = unbroadcast(g * bd, ad.shape) if a.requires_grad else None
        gb = unbroadcast(g * ad, bd.shape) if b.requires_grad else None
        return ga, gb

    return record("mul", (a, b), (ad * bd,), bw)[0]


def div(a, b) -> Tensor:
    a, b = _pair(a, b)
    _broadcast_shape(a, b, "div")
    if np.any(b.data == 0):
        raise DomainError("div: division by zero")
    ad, bd = a.data, b.data
    out = ad / bd

    def bw(g):
        ga = unbroadcast(g / bd, ad.shape) if a.requires_grad else None
        gb = unbroadcast(-g * out / bd, bd.shape) if b.requires_grad else None
        return ga, gb

    return record("div", (a, b), (out,), bw)[0]


def neg(x: Tensor) -> Tensor:
    return record("neg", (x,), (-x.data,), lambda g: (-g,))[0]


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    out = np.where(mask, x.data, x.data.dtype.type(0))
    return record("relu", (x,), (out,), lambda g: (g * mask,))[0]


def sigmoid(x: Tensor) -> Tensor:
    out = np.exp(-np.logaddexp(x.data.dtype.type(0), -x.data))
    one = x.data.dtype.type(1)
    return record("sigmoid", (x,), (out,), lambda g: (g * out * (one - out),))[0]


def exp(x: Tensor) -> Tensor:
    # overflow surfaces as a NumericalError from record(), not a numpy warning
    with np.errstate(over="ignore"):
        out = np.exp(x.data)
    return record("exp", (x,), (out,), lambda g: (g * out,))[0]


def log(x: Tensor) -> Tensor:
    if np.any(x.data <= 0):
        raise DomainError("log: input has non-positive entries")
    xd = x.data
    return record("log", (x,), (np.log(xd),), lambda g: (g / xd,))[0]


def detach(x: Tensor) -> Tensor:
    return x.detach()


# -- reductions and shape ops -------------------------------------------------

def _norm_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    axes = _norm_axes(axis, x.ndim)
    out = np.asarray(x.data.sum(axis=axes, keepdims=keepdims), dtype=x.dtype)
    shape = x.shape

    def bw(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, shape).copy(),)

    return record("sum", (x,), (out,), bw)[0]


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axes(axis, x.ndim)
    count = int(np.prod([x.shape[a] for a in axes])) if axes else 1
    out = np.asarray(x.data.mean(axis=axes, keepdims=keepdims), dtype=x.dtype)
    shape = x.shape
    scale = x.dtype.type(1.0 / count)

    def bw(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g * scale, shape).copy(),)

    return record("mean", (x,), (out,), bw)[0]


def reshape(x: Tensor, shape) -> Tensor:
    shape = tuple(int(s) for s in shape)
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise DimensionError(f"reshape: cannot view {x.shape} as {shape}") from None
    src = x.shape
    return record("reshape", (x,), (out,), lambda g: (g.reshape(src),))[0]


def flatten(x: Tensor, start: int = 1) -> Tensor:
    return reshape(x, x.shape[:start] + (-1,))


def stack(xs: Sequence[Tensor], axis: int = 0) -> Tensor:
    if not xs:
        raise DimensionError("stack: empty sequence")
    shapes = {t.shape for t in xs}
    if len(shapes) != 1:
        raise DimensionError(f"stack: mismatched shapes {sorted(shapes)}")
    out = np.stack([t.data for t in xs], axis=axis)
    n = len(xs)

    def bw(g):
        return tuple(np.take(g, i, axis=axis) for i in range(n))

    return record("stack", tuple(xs), (out,), bw)[0]


def unstack(x: Tensor, axis: int = 0) -> tuple[Tensor, ...]:
    n = x.shape[axis]
    outs = [np.ascontiguousarray(np.take(x.data, i, axis=axis)) for i in range(n)]

    def bw(*gs):
        return (np.stack(gs, axis=axis),)

    return record("unstack", (x,), outs, bw)


# -- linear algebra ---------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    ad, bd = a.data, b.data

    def bw(g):
        ga = g @ bd.T if a.requires_grad else None
        gb = ad.T @ g if b.requires_grad else None
        return ga, gb

    return record("matmul", (a, b), (ad @ bd,), bw)[0]


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """``x @ w.T + b`` for x (n, in), w (out, in), b (out,)."""
    if x.ndim != 2 or w.ndim != 2 or x.shape[1] != w.shape[1]:
        raise DimensionError(f"linear: input {x.shape} does not match weight {w.shape}")
    xd, wd = x.data, w.data
    out = xd @ wd.T
    if b is not None:
        out = out + b.data
    inputs = (x, w) if b is None else (x, w, b)

    def bw(g):
        gx = g @ wd if x.requires_grad else None
        gw = g.T @ xd if w.requires_grad else None
        if b is None:
            return gx, gw
        return gx, gw, (g.sum(axis=0) if b.requires_grad else None)

    return record("linear", inputs, (out,), bw)[0]


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1, pad: int = 0) -> Tensor:
    """2-D cross-correlation with zero padding, lowered to im2col + GEMM."""
    if x.ndim != 4 or w.ndim != 4:
        raise DimensionError(f"conv2d: expected 4-D input and kernel, got {x.shape} and {w.shape}")
    B, C, H, W = x.shape
    O, Ck, kh, kw = w.shape
    if C != Ck:
        raise DimensionError(f"conv2d: input channels {C} != kernel channels {Ck}")
    if kh % 2 == 0 or kw % 2 == 0:
        raise DimensionError(f"conv2d: kernel extents must be odd, got {kh}x{kw}")
    if stride < 1 or pad < 0:
        raise DimensionError(f"conv2d: invalid stride {stride} / pad {pad}")
    Hp, Wp = H + 2 * pad, W + 2 * pad
    if Hp < kh or Wp < kw:
        raise DimensionError(f"conv2d: non-positive output extent for input {x.shape}, kernel {w.shape}, pad {pad}")
    oh, ow = (Hp - kh) // stride + 1, (Wp - kw) // stride + 1
    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x.data
    cols = kernels.im2col(xp, kh, kw, stride, oh, ow)
    w2 = w.data.reshape(O, -1)
    out = w2 @ cols
    if b is not None:
        out += b.data[:, None]
    out = np.ascontiguousarray(out.reshape(O, B, oh, ow).transpose(1, 0, 2, 3))
    inputs = (x, w) if b is None else (x, w, b)
    wshape = w.shape

    def bw(g):
        g2 = g.transpose(1, 0, 2, 3).reshape(O, -1)
        gw = (g2 @ cols.T).reshape(wshape) if w.requires_grad else None
        gx = None
        if x.requires_grad:
            dcols = np.ascontiguousarray(w2.T @ g2)
            gxp = kernels.col2im(dcols, B, C, Hp, Wp, kh, kw, stride, oh, ow)
            gx = gxp[:, :, pad:pad + H, pad:pad + W] if pad else gxp
        if b is None:
            return gx, gw
        return gx, gw, (g2.sum(axis=1) if b.requires_grad else None)

    return record("conv2d", inputs, (out,), bw)[0]


def avgpool2d(x: Tensor, k: int = 2) -> Tensor:
    B, C, H, W = x.shape
    if H % k or W % k:
        raise DimensionError(f"avgpool2d: spatial dims {H}x{W} not divisible by {k}")
    out = x.data.reshape(B, C, H // k, k, W // k, k).mean(axis=(3, 5))
    scale = x.dtype.type(1.0 / (k * k))

    def bw(g):
        gg = np.broadcast_to((g * scale)[:, :, :, None, :, None], (B, C, H // k, k, W // k, k))
        return (gg.reshape(B, C, H, W),)

    return record("avgpool2d", (x,), (out,), bw)[0]


# -- softmax family -----------------------------------------------------------

def _softmax_np(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _log_softmax_np(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def softmax(x: Tensor) -> Tensor:
    s = _softmax_np(x.data)

    def bw(g):
        return (s * (g - (g * s).sum(axis=-1, keepdims=True)),)

    return record("softmax", (x,), (s,), bw)[0]


def log_softmax(x: Tensor) -> Tensor:
    out = _log_softmax_np(x.data)
    s = np.exp(out)

    def bw(g):
        return (g - s * g.sum(axis=-1, keepdims=True),)

    return record("log_softmax", (x,), (out,), bw)[0]


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Batch-mean cross-entropy against integer class labels (log-sum-exp form)."""
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    if logits.ndim != 2 or labels.shape[0] != logits.shape[0]:
        raise DimensionError(f"cross_entropy: logits {logits.shape} vs labels {labels.shape}")
    n, k = logits.shape
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise DomainError("cross_entropy: label outside [0, n_cls)")
    ls = _log_softmax_np(logits.data)
    rows = np.arange(n)
    loss = np.asarray(-ls[rows, labels].mean(), dtype=logits.dtype)
    p = np.exp(ls)

    def bw(g):
        d = p.copy()
        d[rows, labels] -= 1
        return (d * (g / n),)

    return record("cross_entropy", (logits,), (loss,), bw)[0]


def soft_cross_entropy(logits: Tensor, target) -> Tensor:
    """Batch-mean of ``-sum(target * log_softmax(logits))``.

    ``target`` is a row-stochastic matrix treated as a constant.
    """
    t = target.data if isinstance(target, Tensor) else np.asarray(target, dtype=logits.dtype)
    if t.shape != logits.shape or logits.ndim != 2:
        raise DimensionError(f"soft_cross_entropy: logits {logits.shape} vs target {t.shape}")
    n = logits.shape[0]
    ls = _log_softmax_np(logits.data)
    loss = np.asarray(-(t * ls).sum() / n, dtype=logits.dtype)
    p = np.exp(ls)
    tsum = t.sum(axis=-1, keepdims=True)

    def bw(g):
        return ((p * tsum - t) * (g / n),)

    return record("soft_cross_entropy", (logits,), (loss,), bw)[0]


# -- spike nonlinearity -------------------------------------------------------

def heaviside_surrogate(u: Tensor, alpha: float = 4.0, soft: bool = False) -> Tensor:
    """Spike function: forward is the step ``u >= 0``; backward uses the
    derivative of ``sigmoid(alpha * u)``.

    ``soft=True`` swaps the forward for the sigmoid itself, which makes the
    op smooth so the backward rule can be verified by finite differences.
    """
    dt = u.dtype.type
    a = dt(alpha)
    with np.errstate(over="ignore"):
        sig = dt(1) / (dt(1) + np.exp(-a * u.data))
    out = sig if soft else (u.data >= 0).astype(u.dtype)
    sg = a * sig * (dt(1) - sig)
    return record("heaviside_surrogate", (u,), (out,), lambda g: (g * sg,))[0]
