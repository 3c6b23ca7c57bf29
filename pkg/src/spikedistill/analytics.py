"""Firing rates, synaptic-operation counts and the MAC/AC energy model.

Operation counts are MACs at batch size 1, computed from layer shapes:

* conv:   c_out * h_out * w_out * c_in * kh * kw
* linear: fan_in * fan_out

Pooling, neuron updates and additions are not counted. For a spiking layer
whose input is a spike train with firing rate ``r``, the accumulate-only
operation count is ``SOPS = r * T * FLOPS``. Energy charges the first layer
(which sees analog input) at MAC cost and every later layer at AC cost::

    E = e_mac * FLOPS(layer 1) + e_ac * sum(SOPS(layer i), i >= 2)

A continuous network pays ``e_mac`` on every layer.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError
from .models import LayerSpec, ModelBundle, SpikeFeature
from .tensor import Tensor


@dataclass(frozen=True)
class EnergyModel:
    e_mac: float = 4.6e-12  # joules per multiply-accumulate, 45 nm
    e_ac: float = 0.9e-12  # joules per accumulate, 45 nm
    process: str = "45nm"


@dataclass
class LayerOpCount:
    layer: str
    flops: float
    r_input: float = 1.0
    T: int = 1

    def __post_init__(self):
        if self.flops < 0:
            raise ContractError(f"{self.layer}: negative FLOPS")
        if not 0.0 <= self.r_input <= 1.0:
            raise ContractError(f"{self.layer}: firing rate {self.r_input} outside [0, 1]")


def firing_rate(f, averaged: bool = False) -> float:
    """Mean spike probability of a spike record.

    Raw spike input must be exactly 0/1. Pass ``averaged=True`` for a
    time-averaged tensor, whose entries only need to lie in [0, 1].
    """
    if isinstance(f, SpikeFeature):
        f = f.data
    arr = f.data if isinstance(f, Tensor) else np.asarray(f)
    if arr.size == 0:
        raise ContractError("firing_rate of an empty tensor")
    if averaged:
        if arr.min() < 0 or arr.max() > 1:
            raise ContractError("time-averaged spike tensor has entries outside [0, 1]")
    elif not np.all((arr == 0) | (arr == 1)):
        raise ContractError("firing_rate expects binary spikes; pass averaged=True for rates")
    return float(arr.mean(dtype=np.float64))


def count_sops(l: LayerOpCount) -> float:
    return l.r_input * l.T * l.flops


def energy(first_layer_flops: float, sops_rest, model: EnergyModel = EnergyModel()) -> float:
    """Energy in joules."""
    sops_rest = list(sops_rest)
    if first_layer_flops < 0 or any(s < 0 for s in sops_rest):
        raise ContractError("operation counts must be non-negative")
    return model.e_mac * first_layer_flops + model.e_ac * float(sum(sops_rest))


def ann_energy(flops, model: EnergyModel = EnergyModel()) -> float:
    """Energy of a continuous network: every layer at MAC cost."""
    flops = [flops] if np.isscalar(flops) else list(flops)
    return model.e_mac * float(sum(flops))


def layer_flops(specs: list[LayerSpec], in_shape: tuple[int, int, int]) -> dict[str, int]:
    """MACs per conv/linear layer for one input of shape (c, h, w)."""
    c, h, w = in_shape
    out = {}
    for s in specs:
        if s.kind == "conv":
            oh = (h + 2 * s.pad - s.kernel) // s.stride + 1
            ow = (w + 2 * s.pad - s.kernel) // s.stride + 1
            out[s.name] = s.out_ch * oh * ow * s.in_ch * s.kernel * s.kernel
            c, h, w = s.out_ch, oh, ow
        elif s.kind == "avgpool":
            h, w = h // s.kernel, w // s.kernel
        elif s.kind == "flatten":
            c, h, w = c * h * w, 1, 1
        elif s.kind == "linear":
            out[s.name] = s.in_ch * s.out_ch
            c = s.out_ch
    return out


@dataclass
class EnergyReport:
    rows: list[LayerOpCount]
    sops: list[float]
    energy_j: float
    role: str

    @property
    def energy_mj(self) -> float:
        return self.energy_j * 1e3

    def text_table(self) -> str:
        lines = [f"{'layer':<10}{'FLOPS':>14}{'r_input':>10}{'T':>4}{'SOPS':>16}"]
        for row, s in zip(self.rows, self.sops):
            lines.append(f"{row.layer:<10}{row.flops:>14.4g}{row.r_input:>10.4f}{row.T:>4d}{s:>16.4g}")
        lines.append(f"energy: {self.energy_mj:.6g} mJ ({self.role})")
        return "\n".join(lines)

    def kv_lines(self) -> list[str]:
        out = []
        for row, s in zip(self.rows, self.sops):
            out.append(f"layer={row.layer} flops={row.flops:.6g} r_input={row.r_input:.6g} T={row.T} sops={s:.6g}")
        out.append(f"energy_mj={self.energy_mj:.6g}")
        return out


def model_energy_report(m: ModelBundle, rates: dict[str, float] | None = None, T: int = 1,
                        model: EnergyModel = EnergyModel()) -> EnergyReport:
    """Per-layer counts and total energy for a teacher or student bundle.

    For a student, ``rates`` maps each neuron layer name to its measured
    firing rate; a weight layer's input rate is that of the nearest
    preceding neuron layer.
    """
    a = m.arch
    flops = layer_flops(m.specs, (a.in_channels, a.height, a.width))
    rows: list[LayerOpCount] = []
    if m.role == "teacher_ann":
        for name, f in flops.items():
            rows.append(LayerOpCount(name, f, 1.0, 1))
        return EnergyReport(rows, [r.flops for r in rows], ann_energy([r.flops for r in rows], model), m.role)
    rates = rates or {}
    last_rate = None
    for s in m.specs:
        if s.kind == "if_neuron":
            last_rate = rates.get(s.name, 0.0)
        elif s.kind in ("conv", "linear"):
            r = 1.0 if last_rate is None else last_rate
            rows.append(LayerOpCount(s.name, flops[s.name], r, T))
    sops = [rows[0].flops] + [count_sops(r) for r in rows[1:]]
    e = energy(rows[0].flops, sops[1:], model)
    return EnergyReport(rows, sops, e, m.role)
