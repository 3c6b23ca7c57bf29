# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot loops: patch extraction for convolution and the fused
integrate-and-fire update. Mirrors ``_npkernels`` operation for operation."""
import numpy as np
cimport numpy as cnp
from cython cimport floating
from libc.math cimport exp, expf

cnp.import_array()


def im2col(floating[:, :, :, ::1] xp, int kh, int kw, int stride, int oh, int ow):
    cdef Py_ssize_t B = xp.shape[0], C = xp.shape[1]
    dtype = np.float32 if floating is float else np.float64
    out = np.empty((C * kh * kw, B * oh * ow), dtype=dtype)
    cdef floating[:, ::1] cols = out
    cdef Py_ssize_t b, c, i, j, y, x, row, col
    with nogil:
        for c in range(C):
            for i in range(kh):
                for j in range(kw):
                    row = (c * kh + i) * kw + j
                    for b in range(B):
                        col = b * oh * ow
                        for y in range(oh):
                            for x in range(ow):
                                cols[row, col] = xp[b, c, i + stride * y, j + stride * x]
                                col += 1
    return out


def col2im(floating[:, ::1] cols, int B, int C, int Hp, int Wp,
           int kh, int kw, int stride, int oh, int ow):
    dtype = np.float32 if floating is float else np.float64
    out = np.zeros((B, C, Hp, Wp), dtype=dtype)
    cdef floating[:, :, :, ::1] dx = out
    cdef Py_ssize_t b, c, i, j, y, x, row, col
    with nogil:
        for c in range(C):
            for i in range(kh):
                for j in range(kw):
                    row = (c * kh + i) * kw + j
                    for b in range(B):
                        col = b * oh * ow
                        for y in range(oh):
                            for x in range(ow):
                                dx[b, c, i + stride * y, j + stride * x] += cols[row, col]
                                col += 1
    return out


cdef inline floating _sigmoid(floating z) noexcept nogil:
    cdef floating one = 1
    if floating is float:
        return one / (one + expf(-z))
    else:
        return one / (one + exp(-z))


def lif_forward(floating[::1] i_t, floating[::1] v, double v_th, double v_reset,
                double tau, double alpha, bint pure_if, bint soft):
    cdef Py_ssize_t n = i_t.shape[0], k
    dtype = np.float32 if floating is float else np.float64
    s_arr = np.empty(n, dtype=dtype)
    v_arr = np.empty(n, dtype=dtype)
    h_arr = np.empty(n, dtype=dtype)
    cdef floating[::1] s_o = s_arr, v_o = v_arr, h_o = h_arr
    cdef floating th = v_th, vr = v_reset, tm = tau, a = alpha
    cdef floating h, u, s, one = 1, zero = 0
    with nogil:
        for k in range(n):
            if pure_if:
                h = v[k] + i_t[k]
            else:
                h = v[k] + (i_t[k] - (v[k] - vr)) / tm
            u = h - th
            if soft:
                s = _sigmoid(a * u)
            else:
                s = one if u >= 0 else zero
            h_o[k] = h
            s_o[k] = s
            v_o[k] = h * (one - s) + vr * s
    return s_arr, v_arr, h_arr


def surrogate_grad(floating[::1] h, double v_th, double alpha):
    cdef Py_ssize_t n = h.shape[0], k
    dtype = np.float32 if floating is float else np.float64
    out = np.empty(n, dtype=dtype)
    cdef floating[::1] o = out
    cdef floating th = v_th, a = alpha, sig, one = 1
    with nogil:
        for k in range(n):
            sig = _sigmoid(a * (h[k] - th))
            o[k] = a * sig * (one - sig)
    return out


def lif_backward(floating[::1] gs, floating[::1] gv, floating[::1] s, floating[::1] h,
                 double v_th, double v_reset, double tau, double alpha, bint pure_if, bint detach):
    cdef Py_ssize_t n = gs.shape[0], k
    dtype = np.float32 if floating is float else np.float64
    gi_arr = np.empty(n, dtype=dtype)
    gp_arr = np.empty(n, dtype=dtype)
    cdef floating[::1] gi = gi_arr, gp = gp_arr
    cdef floating th = v_th, vr = v_reset, tm = tau, a = alpha, one = 1, gh, sig, sg
    cdef floating decay = one - one / tm
    with nogil:
        for k in range(n):
            sig = _sigmoid(a * (h[k] - th))
            sg = a * sig * (one - sig)
            gh = gs[k] * sg + gv[k] * (one - s[k])
            if not detach:
                gh = gh + gv[k] * (vr - h[k]) * sg
            if pure_if:
                gi[k] = gh
                gp[k] = gh
            else:
                gi[k] = gh / tm
                gp[k] = gh * decay
    return gi_arr, gp_arr
