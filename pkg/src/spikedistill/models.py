"""Layers and the two desk-scale architectures.

Teacher (continuous ANN)::

    conv3x3(c1) - relu - avgpool2 - conv3x3(c2) - relu - avgpool2 [tap] - flatten - linear

Student (spiking)::

    conv3x3(c1) - avgpool2 - IF - conv3x3(c2) - avgpool2 - IF [tap] - flatten - linear

The student pools before each neuron so the tap (the input of the classifier)
is a binary spike map with the same (h, w) as the teacher tap. Input coding is
direct: the analog image is the input current at every step, so the layers
before the first neuron are evaluated once and reused for all T steps.
Student logits are the mean over steps of the per-step classifier outputs.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from . import functional as F
from .errors import ConfigError, StateError
from .neuron import IFNeuron, NeuronConfig, unroll
from .tensor import Tensor


@dataclass
class LayerSpec:
    kind: str  # conv | linear | relu | if_neuron | avgpool | flatten
    name: str = ""
    in_ch: int = 0
    out_ch: int = 0
    kernel: int = 3
    stride: int = 1
    pad: int = 1
    tap: bool = False


# -- layers -----------------------------------------------------------------

def kaiming_uniform(shape, fan_in: int, rng: np.random.Generator, dtype) -> np.ndarray:
    bound = math.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Conv2d:
    kind = "conv"

    def __init__(self, in_ch, out_ch, kernel=3, stride=1, pad=1, rng=None, dtype=np.float32, name="conv"):
        self.stride, self.pad, self.name = stride, pad, name
        shape = (out_ch, in_ch, kernel, kernel)
        fan_in = in_ch * kernel * kernel
        w = kaiming_uniform(shape, fan_in, rng, dtype) if rng is not None else np.zeros(shape, dtype)
        self.weight = Tensor(w, requires_grad=True, dtype=dtype, name=f"{name}.weight")
        self.bias = Tensor(np.zeros(out_ch, dtype), requires_grad=True, dtype=dtype, name=f"{name}.bias")

    def __call__(self, x: Tensor) -> Tensor:
        return F.conv2d(x, self.weight, self.bias, self.stride, self.pad)

    def parameters(self):
        return [self.weight, self.bias]


class Linear:
    kind = "linear"

    def __init__(self, fan_in, fan_out, rng=None, dtype=np.float32, name="fc"):
        self.name = name
        shape = (fan_out, fan_in)
        w = kaiming_uniform(shape, fan_in, rng, dtype) if rng is not None else np.zeros(shape, dtype)
        self.weight = Tensor(w, requires_grad=True, dtype=dtype, name=f"{name}.weight")
        self.bias = Tensor(np.zeros(fan_out, dtype), requires_grad=True, dtype=dtype, name=f"{name}.bias")

    def __call__(self, x: Tensor) -> Tensor:
        return F.linear(x, self.weight, self.bias)

    def parameters(self):
        return [self.weight, self.bias]


class ReLU:
    kind = "relu"

    def __call__(self, x):
        return F.relu(x)

    def parameters(self):
        return []


class AvgPool2d:
    kind = "avgpool"

    def __init__(self, k=2):
        self.k = k

    def __call__(self, x):
        return F.avgpool2d(x, self.k)

    def parameters(self):
        return []


class Flatten:
    kind = "flatten"

    def __call__(self, x):
        return F.flatten(x, 1)

    def parameters(self):
        return []


# -- architectures ------------------------------------------------------------

@dataclass
class ArchConfig:
    in_channels: int = 1
    height: int = 28
    width: int = 28
    n_cls: int = 10
    teacher_channels: tuple[int, int] = (16, 32)
    student_channels: tuple[int, int] = (16, 16)
    kernel: int = 3

    def validate(self) -> None:
        if self.n_cls < 2:
            raise ConfigError(f"n_cls must be >= 2, got {self.n_cls}")
        if self.height % 4 or self.width % 4:
            raise ConfigError(f"input {self.height}x{self.width} is not divisible by the two 2x pools")
        if self.kernel % 2 == 0 or self.kernel < 1:
            raise ConfigError("kernel size must be odd")
        if min(self.in_channels, *self.teacher_channels, *self.student_channels) < 1:
            raise ConfigError("channel counts must be positive")

    @property
    def tap_hw(self) -> tuple[int, int]:
        return self.height // 4, self.width // 4


@dataclass
class ModelBundle:
    role: str  # teacher_ann | student_snn
    specs: list[LayerSpec]
    layers: list[Any]
    arch: ArchConfig
    neuron: NeuronConfig | None = None
    loaded: bool = False
    tap_index: int = -1

    @property
    def n_cls(self) -> int:
        return self.arch.n_cls

    @property
    def tap_channels(self) -> int:
        return self.specs[self.tap_index].out_ch

    def named_parameters(self) -> dict[str, Tensor]:
        out = {}
        for spec, layer in zip(self.specs, self.layers):
            if spec.kind in ("conv", "linear"):
                out[f"{spec.name}.weight"] = layer.weight
                out[f"{spec.name}.bias"] = layer.bias
        return out

    def parameters(self) -> list[Tensor]:
        return list(self.named_parameters().values())

    def freeze(self) -> None:
        for p in self.parameters():
            p.requires_grad = False
            p.grad = None

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())


def _teacher_specs(a: ArchConfig) -> list[LayerSpec]:
    c1, c2 = a.teacher_channels
    h, w = a.tap_hw
    k, p = a.kernel, a.kernel // 2
    return [
        LayerSpec("conv", "conv1", a.in_channels, c1, k, 1, p),
        LayerSpec("relu", "relu1", c1, c1),
        LayerSpec("avgpool", "pool1", c1, c1, 2, 2, 0),
        LayerSpec("conv", "conv2", c1, c2, k, 1, p),
        LayerSpec("relu", "relu2", c2, c2),
        LayerSpec("avgpool", "pool2", c2, c2, 2, 2, 0, tap=True),
        LayerSpec("flatten", "flatten", c2, c2 * h * w),
        LayerSpec("linear", "fc", c2 * h * w, a.n_cls),
    ]


def _student_specs(a: ArchConfig) -> list[LayerSpec]:
    c1, c2 = a.student_channels
    h, w = a.tap_hw
    k, p = a.kernel, a.kernel // 2
    return [
        LayerSpec("conv", "conv1", a.in_channels, c1, k, 1, p),
        LayerSpec("avgpool", "pool1", c1, c1, 2, 2, 0),
        LayerSpec("if_neuron", "if1", c1, c1),
        LayerSpec("conv", "conv2", c1, c2, k, 1, p),
        LayerSpec("avgpool", "pool2", c2, c2, 2, 2, 0),
        LayerSpec("if_neuron", "if2", c2, c2, tap=True),
        LayerSpec("flatten", "flatten", c2, c2 * h * w),
        LayerSpec("linear", "fc", c2 * h * w, a.n_cls),
    ]


def validate_specs(specs: list[LayerSpec]) -> int:
    """Check the tap contract and return the tap position."""
    taps = [k for k, s in enumerate(specs) if s.tap]
    if len(taps) != 1:
        raise ConfigError(f"exactly one tap layer required, found {len(taps)}")
    t = taps[0]
    tail = [s.kind for s in specs[t + 1:]]
    if tail != ["flatten", "linear"]:
        raise ConfigError(f"tap must sit directly before the classifier, tail is {tail}")
    return t


def build_layers(specs, rng, dtype, neuron_cfg=None) -> list:
    layers = []
    for s in specs:
        if s.kind == "conv":
            layers.append(Conv2d(s.in_ch, s.out_ch, s.kernel, s.stride, s.pad, rng, dtype, s.name))
        elif s.kind == "linear":
            layers.append(Linear(s.in_ch, s.out_ch, rng, dtype, s.name))
        elif s.kind == "relu":
            layers.append(ReLU())
        elif s.kind == "avgpool":
            layers.append(AvgPool2d(s.kernel))
        elif s.kind == "flatten":
            layers.append(Flatten())
        elif s.kind == "if_neuron":
            if neuron_cfg is None:
                raise ConfigError("if_neuron layer needs a NeuronConfig")
            layers.append(IFNeuron(neuron_cfg))
        else:
            raise ConfigError(f"unknown layer kind {s.kind!r}")
    return layers


def build_teacher(arch: ArchConfig, rng: np.random.Generator | None = None, dtype=np.float32) -> ModelBundle:
    """Continuous ANN teacher. With ``rng=None`` weights are left unloaded."""
    arch.validate()
    specs = _teacher_specs(arch)
    tap = validate_specs(specs)
    layers = build_layers(specs, rng, dtype)
    return ModelBundle("teacher_ann", specs, layers, arch, None, loaded=rng is not None, tap_index=tap)


def build_student(arch: ArchConfig, neuron: NeuronConfig | None = None,
                  rng: np.random.Generator | None = None, dtype=np.float32) -> ModelBundle:
    arch.validate()
    neuron = neuron or NeuronConfig()
    neuron.validate()
    specs = _student_specs(arch)
    tap = validate_specs(specs)
    layers = build_layers(specs, rng, dtype, neuron)
    return ModelBundle("student_snn", specs, layers, arch, neuron, loaded=rng is not None, tap_index=tap)


def check_tap_compat(teacher: ModelBundle, student: ModelBundle) -> None:
    ta, sa = teacher.arch, student.arch
    if (ta.height, ta.width, ta.in_channels, ta.n_cls) != (sa.height, sa.width, sa.in_channels, sa.n_cls):
        raise ConfigError("teacher and student disagree on input shape or class count")
    if ta.tap_hw != sa.tap_hw:
        raise ConfigError(f"tap spatial mismatch: teacher {ta.tap_hw} vs student {sa.tap_hw}")


# -- forward passes -----------------------------------------------------------

def forward_teacher(m: ModelBundle, x: Tensor) -> tuple[Tensor, Tensor]:
    """Return (logits, tap feature). Teacher parameters never enter the tape."""
    if m.role != "teacher_ann":
        raise StateError("forward_teacher called on a non-teacher bundle")
    if not m.loaded:
        raise StateError("teacher weights are not loaded")
    h = x
    tap = None
    for k, layer in enumerate(m.layers):
        h = layer(h)
        if k == m.tap_index:
            tap = h
    return h, tap


@dataclass
class SpikeFeature:
    """Tap record with shape (T, b, c, h, w); entries are 0/1 in hard mode."""

    data: Tensor

    @property
    def T(self) -> int:
        return self.data.shape[0]

    @property
    def shape(self):
        return self.data.shape


@dataclass
class RateRecorder:
    """Accumulates spike counts per neuron layer during student forwards."""

    sums: dict[str, float] = field(default_factory=dict)
    counts: dict[str, int] = field(default_factory=dict)

    def add(self, name: str, spikes: np.ndarray) -> None:
        self.sums[name] = self.sums.get(name, 0.0) + float(spikes.sum(dtype=np.float64))
        self.counts[name] = self.counts.get(name, 0) + spikes.size

    def rate(self, name: str) -> float:
        return self.sums[name] / self.counts[name] if self.counts.get(name) else 0.0


class _Recording:
    def __init__(self, layer, name, rec):
        self.layer, self.name, self.rec = layer, name, rec

    def __call__(self, x):
        s = self.layer(x)
        self.rec.add(self.name, s.data)
        return s


def forward_student(m: ModelBundle, x: Tensor, T: int,
                    recorder: RateRecorder | None = None) -> tuple[Tensor, SpikeFeature]:
    """Return (mean-over-steps logits, tap SpikeFeature of shape (T, b, c, h, w))."""
    if m.role != "student_snn":
        raise StateError("forward_student called on a non-student bundle")
    if T < 1:
        raise ConfigError(f"T must be >= 1, got {T}")
    first_if = next(k for k, s in enumerate(m.specs) if s.kind == "if_neuron")
    h = x
    for layer in m.layers[:first_if]:
        h = layer(h)
    rest = m.layers[first_if:]
    if recorder is not None:
        rest = [_Recording(l, s.name, recorder) if s.kind == "if_neuron" else l
                for l, s in zip(rest, m.specs[first_if:])]
    outs, taps = unroll(rest, [h] * T, T, tap_index=m.tap_index - first_if)
    logits = outs[0] if T == 1 else F.mean(F.stack(outs, 0), axis=0)
    return logits, SpikeFeature(F.stack(taps, 0))
