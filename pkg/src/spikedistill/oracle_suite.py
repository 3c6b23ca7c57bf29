"""Finite-difference checks for every differentiable primitive.

Each case builds float64 inputs from a seed and returns a closure producing a
scalar. Non-scalar op outputs are contracted with a fixed random weight
tensor so every output element contributes to the checked gradient.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import zlib

import numpy as np

from . import functional as F
from .distill import DistillHead, bkd_loss, blurred_restore, ld_loss, sample_blur_mask, soften_logits
from .gradcheck import check_grads
from .models import AvgPool2d, Conv2d, Flatten, Linear
from .neuron import IFNeuron, NeuronConfig, NeuronState, if_step, unroll
from .rng import stream
from .tensor import Tensor, no_grad

TOL = 1e-4
N_SEEDS = 20


def _t(rng, *shape, lo=-1.0, hi=1.0):
    return Tensor(rng.uniform(lo, hi, size=shape), dtype=np.float64)


def _contract(op, inputs, rng):
    with no_grad():
        shape = op().shape
    w = Tensor(rng.standard_normal(shape), dtype=np.float64)
    return lambda: F.sum(F.mul(op(), w)), inputs


def case_matmul(rng):
    a, b = _t(rng, 3, 4), _t(rng, 4, 2)
    return _contract(lambda: F.matmul(a, b), [a, b], rng)


def case_linear(rng):
    x, w, b = _t(rng, 4, 5), _t(rng, 3, 5), _t(rng, 3)
    return _contract(lambda: F.linear(x, w, b), [x, w, b], rng)


def case_conv2d(rng):
    stride, pad = [(1, 1), (1, 0), (2, 1)][int(rng.integers(3))]
    x, k, b = _t(rng, 2, 2, 5, 5), _t(rng, 3, 2, 3, 3), _t(rng, 3)
    return _contract(lambda: F.conv2d(x, k, b, stride, pad), [x, k, b], rng)


def case_add_broadcast(rng):
    a, b = _t(rng, 2, 3, 4), _t(rng, 2, 3, 1)
    return _contract(lambda: F.add(a, b), [a, b], rng)


def case_sub(rng):
    a, b = _t(rng, 3, 4), _t(rng, 4)
    return _contract(lambda: F.sub(a, b), [a, b], rng)


def case_mul_broadcast(rng):
    a, b = _t(rng, 2, 3, 2, 2), _t(rng, 2, 3, 1, 1)
    return _contract(lambda: F.mul(a, b), [a, b], rng)


def case_div(rng):
    a, b = _t(rng, 3, 4), _t(rng, 3, 4, lo=0.5, hi=2.0)
    return _contract(lambda: F.div(a, b), [a, b], rng)


def case_relu(rng):
    # keep inputs away from the kink so the difference quotient is valid
    x = Tensor(rng.uniform(0.05, 1.0, (4, 5)) * rng.choice([-1.0, 1.0], (4, 5)), dtype=np.float64)
    return _contract(lambda: F.relu(x), [x], rng)


def case_sigmoid(rng):
    x = _t(rng, 4, 5, lo=-4, hi=4)
    return _contract(lambda: F.sigmoid(x), [x], rng)


def case_exp(rng):
    x = _t(rng, 4, 5)
    return _contract(lambda: F.exp(x), [x], rng)


def case_log(rng):
    x = _t(rng, 4, 5, lo=0.2, hi=3.0)
    return _contract(lambda: F.log(x), [x], rng)


def case_sum_axis(rng):
    x = _t(rng, 3, 4, 5)
    return _contract(lambda: F.sum(x, axis=1), [x], rng)


def case_mean_axis(rng):
    x = _t(rng, 3, 4, 5)
    return _contract(lambda: F.mean(x, axis=(0, 2)), [x], rng)


def case_avgpool2d(rng):
    x = _t(rng, 2, 3, 4, 6)
    return _contract(lambda: F.avgpool2d(x, 2), [x], rng)


def case_flatten(rng):
    x = _t(rng, 2, 3, 2, 2)
    return _contract(lambda: F.flatten(x), [x], rng)


def case_stack_unstack(rng):
    a, b = _t(rng, 2, 3), _t(rng, 2, 3)

    def op():
        s = F.stack([a, b], 0)
        u0, u1 = F.unstack(s, 0)
        return F.mul(u0, u1)

    return _contract(op, [a, b], rng)


def case_softmax(rng):
    x = _t(rng, 3, 5, lo=-3, hi=3)
    return _contract(lambda: F.softmax(x), [x], rng)


def case_log_softmax(rng):
    x = _t(rng, 3, 5, lo=-3, hi=3)
    return _contract(lambda: F.log_softmax(x), [x], rng)


def case_cross_entropy(rng):
    x = _t(rng, 6, 4, lo=-3, hi=3)
    labels = rng.integers(0, 4, 6)
    return (lambda: F.cross_entropy(x, labels)), [x]


def case_soft_cross_entropy(rng):
    x = _t(rng, 5, 4, lo=-3, hi=3)
    p = rng.dirichlet(np.ones(4), 5)
    return (lambda: F.soft_cross_entropy(x, p)), [x]


def case_soften_logits(rng):
    y = _t(rng, 4, 6, lo=-3, hi=3)
    tau = float(rng.uniform(0.5, 4.0))
    return _contract(lambda: soften_logits(y, tau), [y], rng)


def case_ld_loss(rng):
    ys, yt = _t(rng, 5, 4, lo=-3, hi=3), _t(rng, 5, 4, lo=-3, hi=3)
    tau = float(rng.uniform(0.5, 4.0))
    return (lambda: ld_loss(ys, yt, tau)), [ys]


def case_bkd_loss(rng):
    fh, ft = _t(rng, 2, 3, 2, 2), _t(rng, 2, 3, 2, 2)
    return (lambda: bkd_loss(fh, ft)), [fh]


def case_blurred_restore(rng):
    head = DistillHead(2, 3, rng, dtype=np.float64)
    f_avg = _t(rng, 2, 2, 3, 3, lo=0.0, hi=1.0)
    f_tea = _t(rng, 2, 3, 3, 3, lo=0.0, hi=1.0)
    mask = sample_blur_mask(2, 3, 0.3, rng, np.float64)
    params = head.parameters()
    # zero biases would put fully-masked samples exactly on the relu kink
    for p in params:
        if p.ndim == 1:
            p.data = rng.uniform(0.1, 0.5, p.shape) * rng.choice([-1.0, 1.0], p.shape)
    return (lambda: bkd_loss(blurred_restore(f_avg, mask, head), f_tea)), [f_avg] + params


def case_heaviside_soft(rng):
    u = _t(rng, 4, 5, lo=-2, hi=2)
    alpha = float(rng.uniform(1.0, 6.0))
    return _contract(lambda: F.heaviside_surrogate(u, alpha, soft=True), [u], rng)


def _soft_cfg(rng, pure_if=False):
    return NeuronConfig(v_th=1.0, v_reset=float(rng.uniform(-0.5, 0.5)), tau_mem=float(rng.uniform(1.0, 4.0)),
                        alpha=4.0, pure_if=pure_if, detach_reset=False, soft_forward=True)


def case_neuron_step_soft(rng):
    cfg = _soft_cfg(rng, pure_if=bool(rng.integers(2)))
    i_t = _t(rng, 3, 4, lo=-1, hi=2)
    v0 = _t(rng, 3, 4, lo=-0.5, hi=1.0)
    ws, wv = rng.standard_normal((3, 4)), rng.standard_normal((3, 4))

    def op():
        s, st = if_step(i_t, NeuronState(v0), cfg)
        return F.add(F.sum(F.mul(s, Tensor(ws, dtype=np.float64))), F.sum(F.mul(st.v, Tensor(wv, dtype=np.float64))))

    return op, [i_t, v0]


def case_unroll_soft(rng):
    """Tiny conv-neuron-linear net unrolled over up to 4 steps, soft forward."""
    cfg = _soft_cfg(rng)
    T = int(rng.integers(1, 5))
    conv = Conv2d(1, 2, 3, 1, 1, rng, np.float64)
    fc = Linear(2 * 2 * 2, 3, rng, np.float64)
    layers = [conv, AvgPool2d(2), IFNeuron(cfg), Flatten(), fc]
    x = _t(rng, 2, 1, 4, 4, lo=0, hi=2)
    labels = rng.integers(0, 3, 2)

    def op():
        outs, _ = unroll(layers, [x] * T, T)
        logits = F.mean(F.stack(outs, 0), axis=0)
        return F.cross_entropy(logits, labels)

    return op, [conv.weight, conv.bias, fc.weight, fc.bias]


CASES: dict[str, Callable] = {
    "matmul": case_matmul,
    "linear": case_linear,
    "conv2d": case_conv2d,
    "add": case_add_broadcast,
    "sub": case_sub,
    "mul": case_mul_broadcast,
    "div": case_div,
    "relu": case_relu,
    "sigmoid": case_sigmoid,
    "exp": case_exp,
    "log": case_log,
    "sum": case_sum_axis,
    "mean": case_mean_axis,
    "avgpool2d": case_avgpool2d,
    "flatten": case_flatten,
    "stack_unstack": case_stack_unstack,
    "softmax": case_softmax,
    "log_softmax": case_log_softmax,
    "cross_entropy": case_cross_entropy,
    "soft_cross_entropy": case_soft_cross_entropy,
    "soften_logits": case_soften_logits,
    "ld_loss": case_ld_loss,
    "bkd_loss": case_bkd_loss,
    "blurred_restore": case_blurred_restore,
    "heaviside_soft": case_heaviside_soft,
    "neuron_step_soft": case_neuron_step_soft,
    "unroll_soft": case_unroll_soft,
}


@dataclass
class OracleResult:
    name: str
    max_rel_err: float
    n_seeds: int

    @property
    def passed(self) -> bool:
        return self.max_rel_err < TOL


def run_case(name: str, n_seeds: int = N_SEEDS, eps: float = 1e-5) -> OracleResult:
    worst = 0.0
    for seed in range(n_seeds):
        rng = stream(seed, "test", zlib.crc32(name.encode()))
        fn, inputs = CASES[name](rng)
        worst = max(worst, check_grads(fn, inputs, eps))
    return OracleResult(name, worst, n_seeds)


def run_all(n_seeds: int = N_SEEDS, names=None) -> list[OracleResult]:
    return [run_case(n, n_seeds) for n in (names or CASES)]
