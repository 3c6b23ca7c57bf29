"""SGD with classical momentum, Adam, and a per-epoch cosine schedule.

SGD update per parameter (weight decay folded into the gradient)::

    v <- momentum * v + g + wd * p
    p <- p - lr * v

Adam uses the same L2 folding and bias-corrected moments. With
``clip_norm > 0`` the raw gradients are first rescaled so their global L2
norm (accumulated in float64, in parameter order) is at most ``clip_norm``.
Both optimizers refuse to apply a step when any gradient is NaN or Inf.
"""
from __future__ import annotations

import math

import numpy as np

from .errors import ConfigError, NumericalError
from .tensor import Tensor


def cosine_lr(base_lr: float, epoch: int, epochs: int) -> float:
    """Learning rate for 0-based ``epoch``; decays to 0 over ``epochs``."""
    return 0.5 * base_lr * (1.0 + math.cos(math.pi * epoch / epochs))


def _check_finite(named: dict[str, Tensor], step: int) -> None:
    for name, p in named.items():
        if p.grad is not None and not np.isfinite(p.grad).all():
            bad = int((~np.isfinite(p.grad)).sum())
            raise NumericalError(f"non-finite gradient in {name!r} at step {step} ({bad} entries); update aborted")


class Optimizer:
    def __init__(self, named_params: dict[str, Tensor], lr: float, weight_decay: float = 0.0,
                 clip_norm: float = 0.0):
        if not named_params:
            raise ConfigError("optimizer received no parameters")
        self.params = dict(named_params)
        self.lr = float(lr)
        self.weight_decay = float(weight_decay)
        self.clip_norm = float(clip_norm)
        self.step_count = 0
        self.last_grad_norm = 0.0

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def step(self) -> None:
        _check_finite(self.params, self.step_count)
        sq = 0.0
        for p in self.params.values():
            if p.grad is not None:
                sq += float(np.square(p.grad, dtype=np.float64).sum())
        self.last_grad_norm = norm = math.sqrt(sq)
        scale = self.clip_norm / norm if 0 < self.clip_norm < norm else None
        for name, p in self.params.items():
            if p.grad is None:
                continue
            g = p.grad if scale is None else p.grad * scale
            if self.weight_decay:
                g = g + self.weight_decay * p.data
            p.data = self._update(name, p.data, g.astype(p.data.dtype, copy=False))
        self.step_count += 1

    def _update(self, name, p, g):
        raise NotImplementedError

    def state_dict(self) -> dict[str, np.ndarray]:
        return {"step": np.array([self.step_count], dtype=np.int64)}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        self.step_count = int(state["step"][0])


class SGDMomentum(Optimizer):
    def __init__(self, named_params, lr: float, momentum: float = 0.9, weight_decay: float = 0.0,
                 clip_norm: float = 0.0):
        super().__init__(named_params, lr, weight_decay, clip_norm)
        self.momentum = float(momentum)
        self.velocity = {k: np.zeros_like(p.data) for k, p in self.params.items()}

    def _update(self, name, p, g):
        v = self.momentum * self.velocity[name] + g
        self.velocity[name] = v
        return p - self.lr * v

    def state_dict(self):
        out = super().state_dict()
        out.update({f"velocity/{k}": v for k, v in self.velocity.items()})
        return out

    def load_state_dict(self, state):
        super().load_state_dict(state)
        for k in self.velocity:
            self.velocity[k] = _fetch(state, f"velocity/{k}", self.velocity[k])


class Adam(Optimizer):
    def __init__(self, named_params, lr: float, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8, weight_decay: float = 0.0, clip_norm: float = 0.0):
        super().__init__(named_params, lr, weight_decay, clip_norm)
        self.beta1, self.beta2, self.eps = float(beta1), float(beta2), float(eps)
        self.m = {k: np.zeros_like(p.data) for k, p in self.params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in self.params.items()}

    def _update(self, name, p, g):
        t = self.step_count + 1
        m = self.beta1 * self.m[name] + (1.0 - self.beta1) * g
        v = self.beta2 * self.v[name] + (1.0 - self.beta2) * (g * g)
        self.m[name], self.v[name] = m, v
        mhat = m / (1.0 - self.beta1 ** t)
        vhat = v / (1.0 - self.beta2 ** t)
        return p - self.lr * mhat / (np.sqrt(vhat) + self.eps)

    def state_dict(self):
        out = super().state_dict()
        out.update({f"m/{k}": a for k, a in self.m.items()})
        out.update({f"v/{k}": a for k, a in self.v.items()})
        return out

    def load_state_dict(self, state):
        super().load_state_dict(state)
        for k in self.m:
            self.m[k] = _fetch(state, f"m/{k}", self.m[k])
            self.v[k] = _fetch(state, f"v/{k}", self.v[k])


def _fetch(state, key, like):
    if key not in state:
        raise ConfigError(f"optimizer state is missing {key!r}")
    arr = state[key]
    if arr.shape != like.shape:
        raise ConfigError(f"optimizer state {key!r} has shape {arr.shape}, expected {like.shape}")
    return arr.astype(like.dtype, copy=True)


def sgd_step(params: list[Tensor], lr: float, momentum: float = 0.0, wd: float = 0.0,
             velocity: list[np.ndarray] | None = None) -> list[np.ndarray]:
    """One functional SGD step on ``params`` using their ``.grad``; returns the new velocities."""
    velocity = velocity or [np.zeros_like(p.data) for p in params]
    _check_finite({p.name or f"param{k}": p for k, p in enumerate(params)}, 0)
    out = []
    for p, v in zip(params, velocity):
        if p.grad is None:
            out.append(v)
            continue
        v = momentum * v + p.grad + wd * p.data
        p.data = p.data - lr * v
        out.append(v)
    return out


def build_optimizer(cfg, named_params: dict[str, Tensor]) -> Optimizer:
    if cfg.kind == "sgd_momentum":
        return SGDMomentum(named_params, cfg.lr, cfg.momentum, cfg.weight_decay, cfg.clip_norm)
    if cfg.kind == "adam":
        return Adam(named_params, cfg.lr, cfg.beta1, cfg.beta2, cfg.eps, cfg.weight_decay, cfg.clip_norm)
    raise ConfigError(f"unknown optimizer {cfg.kind!r}")
