"""Pure-numpy implementations of the compiled kernels (import fallback)."""
import numpy as np


def im2col(xp, kh, kw, stride, oh, ow):
    B, C = xp.shape[:2]
    cols = np.empty((C, kh, kw, B, oh, ow), dtype=xp.dtype)
    for i in range(kh):
        for j in range(kw):
            patch = xp[:, :, i:i + stride * oh:stride, j:j + stride * ow:stride]
            cols[:, i, j] = patch.transpose(1, 0, 2, 3)
    return cols.reshape(C * kh * kw, B * oh * ow)


def col2im(cols, B, C, Hp, Wp, kh, kw, stride, oh, ow):
    dx = np.zeros((B, C, Hp, Wp), dtype=cols.dtype)
    c6 = cols.reshape(C, kh, kw, B, oh, ow)
    for i in range(kh):
        for j in range(kw):
            dx[:, :, i:i + stride * oh:stride, j:j + stride * ow:stride] += c6[:, i, j].transpose(1, 0, 2, 3)
    return dx


def _sigmoid(z):
    one = z.dtype.type(1)
    with np.errstate(over="ignore"):
        return one / (one + np.exp(-z))


def lif_forward(i_t, v, v_th, v_reset, tau, alpha, pure_if, soft):
    dt = i_t.dtype.type
    one = dt(1)
    vr = dt(v_reset)
    if pure_if:
        h = v + i_t
    else:
        h = v + (i_t - (v - vr)) / dt(tau)
    u = h - dt(v_th)
    s = _sigmoid(dt(alpha) * u) if soft else (u >= 0).astype(i_t.dtype)
    v_new = h * (one - s) + vr * s
    return s, v_new, h


def surrogate_grad(h, v_th, alpha):
    dt = h.dtype.type
    a = dt(alpha)
    sig = _sigmoid(a * (h - dt(v_th)))
    return a * sig * (dt(1) - sig)


def lif_backward(gs, gv, s, h, v_th, v_reset, tau, alpha, pure_if, detach):
    dt = gs.dtype.type
    one = dt(1)
    sg = surrogate_grad(h, v_th, alpha)
    gh = gs * sg + gv * (one - s)
    if not detach:
        gh = gh + gv * (dt(v_reset) - h) * sg
    if pure_if:
        return gh, gh.copy()
    tm = dt(tau)
    return gh / tm, gh * (one - one / tm)
