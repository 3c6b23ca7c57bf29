"""Blurred feature distillation, logit distillation and their mixture.

Feature path for one batch::

    avg      = mean over steps of the student tap     (b, c_stu, h, w), values in [0, 1]
    aligned  = adapter(avg) if c_stu != c_tea else avg
    restored = restore(aligned * mask[:, :, None, None])   restore: conv3x3, relu, conv3x3
    l_bkd    = sum((restored - teacher_feature) ** 2)      plain sum over all elements

``mask`` is a (b, c_tea) 0/1 matrix drawn fresh every iteration, zero
wherever a uniform draw falls below ``blur_ratio``. ``l_bkd`` is a raw sum,
so its scale grows with batch size; ``w_bkd`` absorbs that.

Logit path: ``l_ld = tau^2 * batch-mean soft cross-entropy`` between the
temperature-softened teacher and student distributions, with the teacher
side held constant.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import functional as F
from .errors import ConfigError, DimensionError, StateError
from .models import Conv2d, ReLU, SpikeFeature
from .tensor import Tensor

MODES = ("none", "ld", "bkd", "md")


@dataclass
class DistillConfig:
    tau_temp: float = 2.0
    blur_ratio: float = 0.15
    w_ld: float = 1.0
    w_bkd: float = 7e-4
    mode: str = "md"

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if not self.tau_temp > 0:
            raise ConfigError(f"tau_temp must be positive, got {self.tau_temp}")
        if not 0.0 <= self.blur_ratio <= 1.0:
            raise ConfigError(f"blur_ratio must lie in [0, 1], got {self.blur_ratio}")
        if self.w_ld < 0 or self.w_bkd < 0:
            raise ConfigError("distillation weights must be non-negative")
        if self.mode not in MODES:
            raise ConfigError(f"unknown distillation mode {self.mode!r}; expected one of {MODES}")

    @property
    def uses_ld(self) -> bool:
        return self.mode in ("ld", "md")

    @property
    def uses_bkd(self) -> bool:
        return self.mode in ("bkd", "md")


@dataclass
class BlurMask:
    values: np.ndarray  # (b, c_tea) of 0/1
    blur_ratio: float

    @property
    def zero_fraction(self) -> float:
        return float(1.0 - self.values.mean()) if self.values.size else 0.0


def sample_blur_mask(b: int, c_tea: int, blur_ratio: float, rng: np.random.Generator,
                     dtype=np.float32) -> BlurMask:
    if not 0.0 <= blur_ratio <= 1.0:
        raise ConfigError(f"blur_ratio must lie in [0, 1], got {blur_ratio}")
    r = rng.random((b, c_tea))
    return BlurMask(np.where(r < blur_ratio, 0, 1).astype(dtype), blur_ratio)


def time_average(f: SpikeFeature | Tensor) -> Tensor:
    data = f.data if isinstance(f, SpikeFeature) else f
    if data.shape[0] == 1:
        return F.reshape(data, data.shape[1:])
    return F.mean(data, axis=0)


class DistillHead:
    """Training-only modules: optional 1x1 channel adapter and restoration block."""

    def __init__(self, c_stu: int, c_tea: int, rng: np.random.Generator | None = None,
                 dtype=np.float32, identity: bool = False, with_adapter: bool | None = None):
        self.c_stu, self.c_tea = c_stu, c_tea
        if with_adapter is None:
            with_adapter = c_stu != c_tea
        self.adapter = Conv2d(c_stu, c_tea, 1, 1, 0, rng, dtype, "adapter") if with_adapter else None
        self.restore1 = Conv2d(c_tea, c_tea, 3, 1, 1, rng, dtype, "restore1")
        self.act = ReLU()
        self.restore2 = Conv2d(c_tea, c_tea, 3, 1, 1, rng, dtype, "restore2")
        if identity:
            self._identity_init()

    def _identity_init(self) -> None:
        """Set the restoration convs (and a square adapter) to the identity map on non-negative inputs."""
        for conv in (self.restore1, self.restore2):
            w = np.zeros_like(conv.weight.data)
            for c in range(self.c_tea):
                w[c, c, 1, 1] = 1
            conv.weight.data = w
            conv.bias.data = np.zeros_like(conv.bias.data)
        if self.adapter is not None and self.c_stu == self.c_tea:
            w = np.zeros_like(self.adapter.weight.data)
            for c in range(self.c_tea):
                w[c, c, 0, 0] = 1
            self.adapter.weight.data = w

    def named_parameters(self) -> dict[str, Tensor]:
        out = {}
        mods = [("adapter", self.adapter), ("restore1", self.restore1), ("restore2", self.restore2)]
        for name, mod in mods:
            if mod is not None:
                out[f"{name}.weight"] = mod.weight
                out[f"{name}.bias"] = mod.bias
        return out

    def parameters(self) -> list[Tensor]:
        return list(self.named_parameters().values())

    def restore(self, z: Tensor) -> Tensor:
        return self.restore2(self.act(self.restore1(z)))


def blurred_restore(f_avg: Tensor, mask: BlurMask, head: DistillHead) -> Tensor:
    b, c = f_avg.shape[:2]
    if c != head.c_tea:
        if head.adapter is None:
            raise StateError(f"student channels {c} != teacher channels {head.c_tea} and no adapter configured")
        z = head.adapter(f_avg)
    elif head.adapter is not None:
        z = head.adapter(f_avg)
    else:
        z = f_avg
    if mask.values.shape != (b, head.c_tea):
        raise DimensionError(f"mask shape {mask.values.shape} != {(b, head.c_tea)}")
    m = mask.values.astype(z.dtype, copy=False)[:, :, None, None]
    return head.restore(F.mul(z, Tensor(m, dtype=z.dtype)))


def bkd_loss(f_hat: Tensor, f_tea: Tensor) -> Tensor:
    if f_hat.shape != f_tea.shape:
        raise DimensionError(f"bkd_loss: restored {f_hat.shape} vs teacher {f_tea.shape}")
    d = F.sub(f_hat, f_tea.detach())
    return F.sum(F.mul(d, d))


def soften_logits(y: Tensor, tau_temp: float) -> Tensor:
    if not tau_temp > 0:
        raise ConfigError("tau_temp must be positive")
    return F.softmax(_scaled(y, tau_temp))


def _scaled(y: Tensor, tau_temp: float) -> Tensor:
    return y if tau_temp == 1 else F.div(y, float(tau_temp))


def ld_loss(y_stu: Tensor, y_tea: Tensor, tau_temp: float) -> Tensor:
    """``tau^2`` times the soft cross-entropy of the student against the teacher.

    Works from logits so ``log(0)`` is never formed; the teacher is constant.
    """
    if y_stu.shape != y_tea.shape:
        raise DimensionError(f"ld_loss: student {y_stu.shape} vs teacher {y_tea.shape}")
    q_tea = F._softmax_np(_scaled(y_tea.detach(), tau_temp).data)
    h = F.soft_cross_entropy(_scaled(y_stu, tau_temp), q_tea)
    return F.mul(h, float(tau_temp) ** 2)


def mixed_loss(l_ld: Tensor | None, l_bkd: Tensor | None, w_ld: float, w_bkd: float) -> Tensor:
    terms = []
    if l_ld is not None:
        terms.append(F.mul(l_ld, float(w_ld)))
    if l_bkd is not None:
        terms.append(F.mul(l_bkd, float(w_bkd)))
    if not terms:
        raise ValueError("mixed_loss needs at least one loss term")
    return terms[0] if len(terms) == 1 else F.add(terms[0], terms[1])


def total_loss(y_stu: Tensor, labels, cfg: DistillConfig,
               l_ld: Tensor | None = None, l_bkd: Tensor | None = None) -> Tensor:
    """Task cross-entropy plus the distillation terms that ``cfg.mode`` selects."""
    if cfg.mode not in MODES:
        raise ConfigError(f"unknown distillation mode {cfg.mode!r}")
    task = F.cross_entropy(y_stu, labels)
    if cfg.mode == "none":
        return task
    if cfg.mode == "ld":
        return F.add(task, mixed_loss(_need(l_ld, "ld"), None, cfg.w_ld, 0.0))
    if cfg.mode == "bkd":
        return F.add(task, mixed_loss(None, _need(l_bkd, "bkd"), 0.0, cfg.w_bkd))
    return F.add(task, mixed_loss(_need(l_ld, "md"), _need(l_bkd, "md"), cfg.w_ld, cfg.w_bkd))


def _need(x, mode):
    if x is None:
        raise ConfigError(f"mode {mode!r} needs its distillation loss term")
    return x
