"""Central finite-difference oracle for the autodiff engine.

The oracle only ever calls the forward pass (under ``no_grad``), so it is
independent of every backward rule it checks.

Relative error is measured elementwise as::

    |analytic - numeric| / max(|analytic|, |numeric|, floor)

with ``floor = 1e-3 * max(max|analytic|, max|numeric|) + 1e-12``. The floor
keeps entries that are tiny compared to the largest gradient entry from
amplifying roundoff noise of the difference quotient.
"""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor, backward, clear_tape, no_grad


def numerical_grads(fn: Callable[[], Tensor], inputs: Sequence[Tensor], eps: float = 1e-5) -> list[np.ndarray]:
    out = []
    with no_grad():
        for t in inputs:
            g = np.zeros_like(t.data)
            flat = t.data.reshape(-1)
            gflat = g.reshape(-1)
            for k in range(flat.size):
                orig = flat[k]
                flat[k] = orig + eps
                fp = fn().item()
                flat[k] = orig - eps
                fm = fn().item()
                flat[k] = orig
                gflat[k] = (fp - fm) / (2 * eps)
            out.append(g)
    return out


def analytic_grads(fn: Callable[[], Tensor], inputs: Sequence[Tensor]) -> list[np.ndarray]:
    clear_tape()
    saved = [(t.requires_grad, t.grad) for t in inputs]
    for t in inputs:
        t.requires_grad = True
        t.grad = None
    loss = fn()
    backward(loss)
    grads = [np.zeros_like(t.data) if t.grad is None else t.grad for t in inputs]
    for t, (rg, g) in zip(inputs, saved):
        t.requires_grad = rg
        t.grad = g
    return grads


def rel_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    if a.size == 0:
        return 0.0
    scale = max(np.abs(a).max(), np.abs(n).max())
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-3 * scale + 1e-12)
    return float((np.abs(a - n) / denom).max())


def check_grads(fn: Callable[[], Tensor], inputs: Sequence[Tensor], eps: float = 1e-5) -> float:
    """Max relative error between tape gradients and central differences.

    ``fn`` must rebuild its graph from ``inputs`` on every call and return a
    scalar Tensor. Inputs should be float64 for meaningful comparisons.
    """
    ana = analytic_grads(fn, inputs)
    num = numerical_grads(fn, inputs, eps)
    return max(rel_error(a, n) for a, n in zip(ana, num))
