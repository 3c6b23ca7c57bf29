"""Run configuration as a sectioned ``key = value`` text file.

Grammar (standard INI as read by :mod:`configparser`)::

    [section]
    key = value      ; '#' or ';' starts a comment line

Sections and keys (every key has a default)::

    [data]    dataset (mnist|cifar10), root, train_subset, test_subset, augment
    [arch]    in_channels, height, width, n_cls, teacher_channels, student_channels, kernel
    [neuron]  v_th, v_reset, tau_mem, alpha, pure_if, detach_reset
    [distill] mode (none|ld|bkd|md), tau_temp, blur_ratio, w_ld, w_bkd
    [optim]   kind (sgd_momentum|adam), lr, momentum, beta1, beta2, eps, weight_decay,
              schedule (cosine|constant), clip_norm
    [run]     epochs, batch_size, seed, T, out_dir, dtype (float32|float64)

Integer tuples are comma separated (``teacher_channels = 16, 32``). An empty
subset value means "use the whole split". Unknown sections or keys are
rejected so typos cannot silently fall back to a default.
"""
from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .distill import DistillConfig
from .errors import ConfigError, UsageError
from .models import ArchConfig
from .neuron import NeuronConfig


@dataclass
class DataConfig:
    dataset: str = "mnist"
    root: str = ""
    train_subset: int | None = None
    test_subset: int | None = None
    augment: bool = False

    def validate(self) -> None:
        if self.dataset not in ("mnist", "cifar10"):
            raise ConfigError(f"unknown dataset {self.dataset!r}")
        for k in ("train_subset", "test_subset"):
            v = getattr(self, k)
            if v is not None and v < 1:
                raise ConfigError(f"{k} must be positive")


@dataclass
class OptimConfig:
    kind: str = "sgd_momentum"
    lr: float = 0.05
    momentum: float = 0.9
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 5e-4
    schedule: str = "cosine"
    clip_norm: float = 5.0  # 0 disables global-norm clipping

    def validate(self) -> None:
        if self.kind not in ("sgd_momentum", "adam"):
            raise ConfigError(f"unknown optimizer {self.kind!r}")
        if self.schedule not in ("cosine", "constant"):
            raise ConfigError(f"unknown schedule {self.schedule!r}")
        if not self.lr > 0:
            raise ConfigError("lr must be positive")
        if not 0 <= self.momentum < 1 or not 0 <= self.beta1 < 1 or not 0 <= self.beta2 < 1:
            raise ConfigError("momentum / betas must lie in [0, 1)")
        if self.weight_decay < 0 or self.clip_norm < 0:
            raise ConfigError("weight_decay and clip_norm must be non-negative")


@dataclass
class RunSection:
    epochs: int = 10
    batch_size: int = 64
    seed: int = 0
    T: int = 4
    out_dir: str = "runs/default"
    dtype: str = "float32"

    def validate(self) -> None:
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be >= 1")
        if self.T < 1:
            raise ConfigError(f"T must be >= 1, got {self.T}")
        if self.seed < 0:
            raise ConfigError("seed must be non-negative")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError(f"dtype must be float32 or float64, got {self.dtype!r}")


@dataclass
class RunConfig:
    data: DataConfig = field(default_factory=DataConfig)
    arch: ArchConfig = field(default_factory=ArchConfig)
    neuron: NeuronConfig = field(default_factory=NeuronConfig)
    distill: DistillConfig = field(default_factory=DistillConfig)
    optim: OptimConfig = field(default_factory=OptimConfig)
    run: RunSection = field(default_factory=RunSection)

    def validate(self) -> None:
        self.data.validate()
        self.arch.validate()
        self.neuron.validate()
        self.distill.validate()
        self.optim.validate()
        self.run.validate()
        if self.data.dataset == "cifar10" and (self.arch.in_channels, self.arch.height) != (3, 32):
            raise ConfigError("cifar10 needs in_channels = 3 and 32x32 inputs")
        if self.data.dataset == "mnist" and (self.arch.in_channels, self.arch.height) != (1, 28):
            raise ConfigError("mnist needs in_channels = 1 and 28x28 inputs")

    @property
    def np_dtype(self):
        return np.float64 if self.run.dtype == "float64" else np.float32

    def to_text(self) -> str:
        lines = []
        for sec in SECTIONS:
            lines.append(f"[{sec}]")
            obj = getattr(self, sec)
            for f in dataclasses.fields(obj):
                if sec == "neuron" and f.name == "soft_forward":
                    continue
                lines.append(f"{f.name} = {_fmt(getattr(obj, f.name))}")
            lines.append("")
        return "\n".join(lines)

    def save(self, path) -> None:
        Path(path).write_text(self.to_text())


SECTIONS = ("data", "arch", "neuron", "distill", "optim", "run")


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return ", ".join(str(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _parse(raw: str, default, typ: str, where: str):
    raw = raw.strip()
    try:
        if "None" in typ and raw == "":
            return None
        if "bool" in typ:
            low = raw.lower()
            if low in ("true", "yes", "1", "on"):
                return True
            if low in ("false", "no", "0", "off"):
                return False
            raise ValueError(raw)
        if "tuple" in typ:
            return tuple(int(x) for x in raw.split(","))
        if "int" in typ:
            return int(raw)
        if "float" in typ:
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"{where}: cannot parse {raw!r} as {typ}") from None


def from_text(text: str, source: str = "<config>") -> RunConfig:
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    cp.optionxform = str  # keys are case-sensitive (``T``)
    try:
        cp.read_string(text, source=source)
    except configparser.Error as e:
        raise ConfigError(f"{source}: {e}") from None
    cfg = RunConfig()
    for sec in cp.sections():
        if sec not in SECTIONS:
            raise ConfigError(f"{source}: unknown section [{sec}]")
        obj = getattr(cfg, sec)
        types = {f.name: str(f.type) for f in dataclasses.fields(obj)}
        updates = {}
        for key, raw in cp.items(sec):
            if key not in types:
                raise ConfigError(f"{source}: unknown key {key!r} in [{sec}]")
            updates[key] = _parse(raw, getattr(obj, key), types[key], f"{source} [{sec}] {key}")
        setattr(cfg, sec, dataclasses.replace(obj, **updates))
    cfg.validate()
    return cfg


def load_config(path) -> RunConfig:
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"config file not found: {p}")
    return from_text(p.read_text(), str(p))
