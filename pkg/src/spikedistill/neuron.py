"""Integrate-and-fire neurons with a sigmoid surrogate gradient.

Charge, fire and hard reset per step::

    charged = v + (i - (v - v_reset)) / tau_mem     (v + i when pure_if)
    spike   = charged >= v_th
    v_next  = charged * (1 - spike) + v_reset * spike

The backward pass replaces d(spike)/d(charged) by ``alpha * sig * (1 - sig)``
with ``sig = sigmoid(alpha * (charged - v_th))``. With ``detach_reset`` the
reset term is treated as a constant w.r.t. the spike, so
d(v_next)/d(charged) = 1 - spike.

``tau_mem`` defaults to 2.0; that value is a choice made here, not a
published constant.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import kernels
from .errors import ConfigError, DimensionError
from .functional import heaviside_surrogate  # noqa: F401  (re-export)
from .tensor import Tensor, record


@dataclass
class NeuronConfig:
    v_th: float = 1.0
    v_reset: float = 0.0
    tau_mem: float = 2.0
    alpha: float = 4.0
    pure_if: bool = False
    detach_reset: bool = True
    # diagnostic: fire sigmoid(alpha*u) instead of a hard step so the whole
    # unroll is smooth and can be checked against finite differences
    soft_forward: bool = False

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if not self.v_th > self.v_reset:
            raise ConfigError(f"v_th ({self.v_th}) must exceed v_reset ({self.v_reset})")
        if not self.tau_mem >= 1:
            raise ConfigError(f"tau_mem must be >= 1, got {self.tau_mem}")
        if not self.alpha > 0:
            raise ConfigError(f"alpha must be positive, got {self.alpha}")


@dataclass
class NeuronState:
    v: Tensor
    t: int = 0
    # charged potential of the last step, kept for diagnostics
    h: Tensor | None = None

    @classmethod
    def fresh(cls, shape, cfg: NeuronConfig, dtype=np.float32) -> "NeuronState":
        return cls(Tensor(np.full(shape, cfg.v_reset, dtype=dtype)), 0)


def if_step(i_t: Tensor, state: NeuronState, cfg: NeuronConfig) -> tuple[Tensor, NeuronState]:
    """Advance one time-step. Returns the spike tensor and the new state."""
    if i_t.shape != state.v.shape:
        raise DimensionError(f"if_step: input {i_t.shape} vs membrane {state.v.shape}")
    shape = i_t.shape
    iflat = i_t.data.reshape(-1)
    vflat = state.v.data.reshape(-1)
    if vflat.dtype != iflat.dtype:
        vflat = vflat.astype(iflat.dtype)
    s, v_new, h = kernels.lif_forward(iflat, vflat, cfg.v_th, cfg.v_reset, cfg.tau_mem,
                                      cfg.alpha, cfg.pure_if, cfg.soft_forward)
    v_th, v_reset, tau, alpha = cfg.v_th, cfg.v_reset, cfg.tau_mem, cfg.alpha
    pure_if, detach = cfg.pure_if, cfg.detach_reset

    def bw(gs, gv):
        gi, gp = kernels.lif_backward(np.ascontiguousarray(gs).reshape(-1),
                                      np.ascontiguousarray(gv).reshape(-1),
                                      s, h, v_th, v_reset, tau, alpha, pure_if, detach)
        return gi.reshape(shape), gp.reshape(shape)

    spikes, v_out = record("if_step", (i_t, state.v), (s.reshape(shape), v_new.reshape(shape)), bw)
    return spikes, NeuronState(v_out, state.t + 1, Tensor(h.reshape(shape)))


def surrogate_grad(u: np.ndarray, alpha: float) -> np.ndarray:
    """Backward factor for d(spike)/du, where u is the charged potential minus v_th."""
    u = np.ascontiguousarray(u)
    return kernels.surrogate_grad(u.reshape(-1), 0.0, alpha).reshape(u.shape)


class IFNeuron:
    """Stateful layer wrapper: holds one NeuronState across an unroll."""

    kind = "if_neuron"

    def __init__(self, cfg: NeuronConfig):
        self.cfg = cfg
        self.state: NeuronState | None = None

    def reset(self) -> None:
        self.state = None

    def __call__(self, x: Tensor) -> Tensor:
        if self.state is None or self.state.v.shape != x.shape:
            self.state = NeuronState.fresh(x.shape, self.cfg, x.dtype)
        s, self.state = if_step(x, self.state, self.cfg)
        return s

    def parameters(self) -> list[Tensor]:
        return []


def unroll(layers: Sequence, x_steps, T: int | None = None, tap_index: int | None = None):
    """Run ``layers`` for every time-step, threading neuron state through time.

    ``x_steps`` is either a Tensor of shape (T, b, ...) or a list of per-step
    Tensors. Neuron states are reset first. Returns the per-step outputs of the
    last layer and, when ``tap_index`` is given, the per-step outputs of layer
    ``tap_index``. The tape spans all steps, so one backward call is BPTT.
    """
    from .functional import unstack

    if isinstance(x_steps, Tensor):
        steps = list(unstack(x_steps, axis=0))
    else:
        steps = list(x_steps)
    if T is not None and len(steps) != T:
        raise ConfigError(f"unroll: got {len(steps)} steps, expected T={T}")
    if len(steps) < 1:
        raise ConfigError("unroll: T must be >= 1")
    for layer in layers:
        if isinstance(layer, IFNeuron):
            layer.reset()
    outputs, taps = [], []
    for x in steps:
        h = x
        for k, layer in enumerate(layers):
            h = layer(h)
            if k == tap_index:
                taps.append(h)
        outputs.append(h)
    return outputs, taps
