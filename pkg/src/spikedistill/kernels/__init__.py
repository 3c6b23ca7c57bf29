"""Hot-loop kernels with a compiled backend and a numpy fallback.

The compiled extension is used when it imported cleanly, unless the
environment variable ``SPIKEDISTILL_PURE`` is set to a non-empty value other
than ``0``. Both backends take and return contiguous numpy arrays of one
floating dtype; the neuron kernels operate on flattened 1-D views.
"""
import os

from . import _npkernels as numpy_backend

try:
    from . import _ckernels as compiled_backend
except ImportError:  # extension not built
    compiled_backend = None

_force_pure = os.environ.get("SPIKEDISTILL_PURE", "") not in ("", "0")

backend = numpy_backend if (_force_pure or compiled_backend is None) else compiled_backend
BACKEND_NAME = "numpy" if backend is numpy_backend else "cython"


def use_backend(name: str) -> None:
    """Switch backends at runtime ("cython" or "numpy")."""
    global backend, BACKEND_NAME
    if name == "cython":
        if compiled_backend is None:
            raise ImportError("compiled kernels are not built; run `pip install -e .`")
        backend = compiled_backend
    elif name == "numpy":
        backend = numpy_backend
    else:
        raise ValueError(f"unknown kernel backend {name!r}")
    BACKEND_NAME = name


def im2col(xp, kh, kw, stride, oh, ow):
    return backend.im2col(xp, kh, kw, stride, oh, ow)


def col2im(cols, B, C, Hp, Wp, kh, kw, stride, oh, ow):
    return backend.col2im(cols, B, C, Hp, Wp, kh, kw, stride, oh, ow)


def lif_forward(i_t, v, v_th, v_reset, tau, alpha, pure_if, soft):
    return backend.lif_forward(i_t, v, v_th, v_reset, tau, alpha, pure_if, soft)


def surrogate_grad(h, v_th, alpha):
    return backend.surrogate_grad(h, v_th, alpha)


def lif_backward(gs, gv, s, h, v_th, v_reset, tau, alpha, pure_if, detach):
    return backend.lif_backward(gs, gv, s, h, v_th, v_reset, tau, alpha, pure_if, detach)
