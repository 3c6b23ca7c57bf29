"""Teacher pretraining, student distillation training and evaluation.

A run directory holds::

    config.ini    resolved configuration, written before the first step
    metrics.tsv   one line per (epoch, split), tab-separated key:value pairs
    timing.tsv    wall-clock seconds per epoch (kept apart so metrics.tsv is
                  byte-identical across identical runs)
    last.ckpt     state after the most recent finished epoch (resume point)
    best.ckpt     state with the best test top-1 so far
    run.lock      present while a process owns the directory

Re-running the same command on a directory that holds ``last.ckpt`` resumes
from it; the resumed run is bit-identical to an uninterrupted one. Seeds are
fixed per purpose (see :mod:`spikedistill.rng`): weight init, per-epoch
shuffle, subset selection, blur masks and augmentation never share a stream.
"""
from __future__ import annotations

import hashlib
import os
import time
from contextlib import contextmanager
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import checkpoint as ckpt_io
from . import functional as F
from .config import RunConfig, from_text
from .data import BatchPlan, Dataset, load_dataset, normalize_batch, random_crop_flip
from .distill import DistillHead, bkd_loss, blurred_restore, ld_loss, mixed_loss, sample_blur_mask, time_average
from .errors import ConfigError, NumericalError, StateError
from .models import (ModelBundle, RateRecorder, build_student, build_teacher, check_tap_compat,
                     forward_student, forward_teacher)
from .optim import build_optimizer, cosine_lr
from .rng import get_state, set_state, stream
from .tensor import Tensor, backward, no_grad

EVAL_BATCH = 500


# -- metrics ------------------------------------------------------------------

@dataclass
class MetricsRecord:
    epoch: int
    split: str
    task_loss: float
    l_ld: float | None = None
    l_bkd: float | None = None
    l_md: float | None = None
    top1: float = 0.0
    rate: float | None = None  # tap firing rate; None for the ANN teacher
    n: int = 0

    def to_line(self) -> str:
        fields = [("epoch", self.epoch), ("split", self.split), ("task_loss", self.task_loss),
                  ("l_ld", self.l_ld), ("l_bkd", self.l_bkd), ("l_md", self.l_md),
                  ("top1", self.top1), ("rate", self.rate), ("n", self.n)]
        return "\t".join(f"{k}:{_fmt(v)}" for k, v in fields)

    @classmethod
    def from_line(cls, line: str) -> "MetricsRecord":
        kv = dict(item.split(":", 1) for item in line.rstrip("\n").split("\t"))

        def num(k):
            return None if kv[k] == "na" else float(kv[k])

        return cls(int(kv["epoch"]), kv["split"], num("task_loss"), num("l_ld"), num("l_bkd"),
                   num("l_md"), num("top1"), num("rate"), int(kv["n"]))


def _fmt(v) -> str:
    if v is None:
        return "na"
    if isinstance(v, float):
        return f"{v:.10g}"
    return str(v)


def read_metrics(path) -> list[MetricsRecord]:
    p = Path(path)
    if not p.is_file():
        return []
    return [MetricsRecord.from_line(l) for l in p.read_text().splitlines() if l.strip()]


class _Mean:
    def __init__(self):
        self.total, self.count = 0.0, 0

    def add(self, value: float, n: int) -> None:
        self.total += value * n
        self.count += n

    @property
    def value(self) -> float | None:
        return self.total / self.count if self.count else None


# -- run directory ------------------------------------------------------------

@contextmanager
def run_lock(run_dir: Path):
    run_dir.mkdir(parents=True, exist_ok=True)
    lock = run_dir / "run.lock"
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        if not _stale(lock):
            raise StateError(f"{run_dir} is locked by another run (remove {lock} if stale)") from None
        lock.unlink(missing_ok=True)
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    try:
        os.write(fd, f"{os.getpid()}\n".encode())
        os.close(fd)
        yield
    finally:
        lock.unlink(missing_ok=True)


def _stale(lock: Path) -> bool:
    """True when the lock names a process on this host that no longer exists."""
    try:
        pid = int(lock.read_text().split()[0])
    except (OSError, ValueError, IndexError):
        return False
    try:
        os.kill(pid, 0)
    except ProcessLookupError:
        return True
    except PermissionError:
        return False
    return False


def _truncate_metrics(path: Path, upto_epoch: int) -> None:
    if not path.is_file():
        return
    keep = [l for l in path.read_text().splitlines(keepends=True)
            if l.strip() and MetricsRecord.from_line(l).epoch <= upto_epoch]
    path.write_text("".join(keep))


def _append(path: Path, lines: list[str]) -> None:
    with open(path, "a") as fh:
        for l in lines:
            fh.write(l + "\n")


# -- data ----------------------------------------------------------------------

def load_split(cfg: RunConfig, split: str) -> Dataset:
    if split not in ("train", "test"):
        raise ConfigError(f"unknown split {split!r}; expected train or test")
    ds = load_dataset(cfg.data.dataset, split, cfg.data.root or None)
    k = cfg.data.train_subset if split == "train" else cfg.data.test_subset
    # separate subset keys for the two splits
    plan = BatchPlan(cfg.run.batch_size, cfg.run.seed * 2 + (split == "test"), k)
    return ds.take(plan.subset_indices(len(ds)))


# -- model state <-> checkpoint -----------------------------------------------

def params_to_arrays(named: dict[str, Tensor], prefix: str) -> dict[str, np.ndarray]:
    return {f"{prefix}/{k}": p.data for k, p in named.items()}


def load_params(named: dict[str, Tensor], arrays: dict[str, np.ndarray], what: str) -> None:
    """Copy arrays into parameters; any name or shape mismatch fails before anything is written."""
    missing = sorted(set(named) - set(arrays))
    extra = sorted(set(arrays) - set(named))
    if missing or extra:
        raise ConfigError(f"{what}: architecture mismatch (missing {missing}, unexpected {extra})")
    for k, p in named.items():
        if arrays[k].shape != p.shape:
            raise ConfigError(f"{what}: {k} has shape {arrays[k].shape}, model expects {p.shape}")
    for k, p in named.items():
        p.data = arrays[k].astype(p.dtype, copy=True)


def param_hash(named: dict[str, Tensor]) -> str:
    h = hashlib.sha256()
    for k in sorted(named):
        h.update(k.encode())
        h.update(named[k].data.tobytes())
    return h.hexdigest()


def build_from_checkpoint(tensors: dict[str, np.ndarray]) -> tuple[ModelBundle, RunConfig]:
    """Rebuild the model stored in a checkpoint; ``distill/`` entries are ignored."""
    cfg = from_text(ckpt_io.u8_to_text(tensors["meta/config"]), "checkpoint config")
    role = ckpt_io.u8_to_text(tensors["meta/role"])
    if role == "teacher_ann":
        m = build_teacher(cfg.arch, None, cfg.np_dtype)
    elif role == "student_snn":
        m = build_student(cfg.arch, cfg.neuron, None, cfg.np_dtype)
    else:
        raise StateError(f"checkpoint has unknown role {role!r}")
    load_params(m.named_parameters(), ckpt_io.sub(tensors, "model"), "checkpoint")
    m.loaded = True
    return m, cfg


# -- evaluation ----------------------------------------------------------------

def evaluate_model(m: ModelBundle, ds: Dataset, cfg: RunConfig, epoch: int = 0, split: str = "test",
                   recorder: RateRecorder | None = None) -> MetricsRecord:
    """Top-1, mean task loss and tap firing rate over ``ds`` in file order."""
    loss, correct = _Mean(), 0
    rec = recorder if recorder is not None else RateRecorder()
    tap_name = m.specs[m.tap_index].name
    with no_grad():
        for idx in BatchPlan(EVAL_BATCH, 0).batches(len(ds)):
            x = Tensor(normalize_batch(ds.images[idx], ds.name, cfg.np_dtype))
            labels = ds.labels[idx].astype(np.int64)
            if m.role == "teacher_ann":
                logits, _ = forward_teacher(m, x)
            else:
                logits, _ = forward_student(m, x, cfg.run.T, rec)
            loss.add(F.cross_entropy(logits, labels).item(), len(idx))
            correct += int((logits.data.argmax(1) == labels).sum())
    rate = rec.rate(tap_name) if m.role == "student_snn" else None
    return MetricsRecord(epoch, split, loss.value, top1=correct / len(ds), rate=rate, n=len(ds))


def evaluate(ckpt_path, split: str = "test", cfg_override: RunConfig | None = None) -> MetricsRecord:
    tensors = ckpt_io.load(ckpt_path)
    m, cfg = build_from_checkpoint(tensors)
    cfg = cfg_override or cfg
    ds = load_split(cfg, split)
    epoch = int(tensors["meta/epoch"][0])
    return evaluate_model(m, ds, cfg, epoch, split)


# -- training ------------------------------------------------------------------

@dataclass
class RunResult:
    run_dir: Path
    epochs_done: int
    best_top1: float
    history: list[MetricsRecord]


class _Trainer:
    """Shared epoch loop; subclasses supply the per-batch step."""

    role = ""

    def __init__(self, cfg: RunConfig, run_dir):
        cfg.validate()
        self.cfg = cfg
        self.run_dir = Path(run_dir or cfg.run.out_dir)
        self.dtype = cfg.np_dtype
        self.train_ds = load_split(cfg, "train")
        self.test_ds = load_split(cfg, "test")
        self.plan = BatchPlan(cfg.run.batch_size, cfg.run.seed)
        self.aug_rng = stream(cfg.run.seed, "augment")
        self.best_top1 = -1.0
        self.start_epoch = 0

    # hooks
    def trainable(self) -> dict[str, Tensor]:
        raise NotImplementedError

    def step(self, x: Tensor, labels: np.ndarray, stats: dict) -> None:
        raise NotImplementedError

    def extra_state(self) -> dict[str, np.ndarray]:
        return {}

    def load_extra_state(self, t: dict[str, np.ndarray]) -> None:
        pass

    def header_text(self) -> str:
        return ""

    # state
    def state(self, epoch: int) -> dict[str, np.ndarray]:
        out = params_to_arrays(self.model.named_parameters(), "model")
        out.update({f"opt/{k}": v for k, v in self.opt.state_dict().items()})
        out.update({f"rng/augment/{k}": v for k, v in get_state(self.aug_rng).items()})
        out["meta/epoch"] = np.array([epoch], dtype=np.int64)
        out["meta/best_top1"] = np.array([self.best_top1], dtype=np.float64)
        out["meta/role"] = ckpt_io.text_to_u8(self.role)
        out["meta/config"] = ckpt_io.text_to_u8(self.cfg.to_text())
        out.update(self.extra_state())
        return out

    def restore(self, t: dict[str, np.ndarray]) -> None:
        stored = ckpt_io.u8_to_text(t["meta/config"])
        if stored != self.cfg.to_text():
            raise ConfigError(f"{self.run_dir} holds a run with a different configuration; use a fresh out_dir")
        load_params(self.model.named_parameters(), ckpt_io.sub(t, "model"), "resume")
        self.opt.load_state_dict(ckpt_io.sub(t, "opt"))
        set_state(self.aug_rng, ckpt_io.sub(t, "rng/augment"))
        self.best_top1 = float(t["meta/best_top1"][0])
        self.start_epoch = int(t["meta/epoch"][0])
        self.load_extra_state(t)

    def batch_x(self, idx: np.ndarray) -> Tensor:
        imgs = self.train_ds.images[idx]
        if self.cfg.data.augment:
            imgs = random_crop_flip(imgs, self.aug_rng)
        return Tensor(normalize_batch(imgs, self.train_ds.name, self.dtype))

    def run(self, until_epoch: int | None = None, log=None) -> RunResult:
        cfg = self.cfg
        with run_lock(self.run_dir):
            last = self.run_dir / "last.ckpt"
            metrics = self.run_dir / "metrics.tsv"
            timing = self.run_dir / "timing.tsv"
            if last.is_file():
                self.restore(ckpt_io.load(last))
                _truncate_metrics(metrics, self.start_epoch)
            else:
                for p in (metrics, timing):
                    p.unlink(missing_ok=True)
            text = self.cfg.to_text()
            header = self.header_text()
            (self.run_dir / "config.ini").write_text(text + (header and "\n" + header))
            stop = cfg.run.epochs if until_epoch is None else min(until_epoch, cfg.run.epochs)
            for epoch in range(self.start_epoch, stop):
                t0 = time.perf_counter()
                if cfg.optim.schedule == "cosine":
                    self.opt.lr = cosine_lr(cfg.optim.lr, epoch, cfg.run.epochs)
                stats = {k: _Mean() for k in ("task", "ld", "bkd", "md")}
                stats["correct"] = 0
                stats["rec"] = RateRecorder()
                n = len(self.train_ds)
                for idx in self.plan.batches(n, epoch):
                    x = self.batch_x(idx)
                    self.step(x, self.train_ds.labels[idx].astype(np.int64), stats)
                tap = self.model.specs[self.model.tap_index].name
                train_rec = MetricsRecord(
                    epoch + 1, "train", stats["task"].value, stats["ld"].value, stats["bkd"].value,
                    stats["md"].value, stats["correct"] / n,
                    stats["rec"].rate(tap) if self.role == "student_snn" else None, n)
                test_rec = evaluate_model(self.model, self.test_ds, cfg, epoch + 1, "test")
                _append(metrics, [train_rec.to_line(), test_rec.to_line()])
                _append(timing, [f"epoch:{epoch + 1}\tseconds:{time.perf_counter() - t0:.3f}"])
                if test_rec.top1 > self.best_top1:
                    self.best_top1 = test_rec.top1
                    ckpt_io.save(self.run_dir / "best.ckpt", self.state(epoch + 1))
                ckpt_io.save(last, self.state(epoch + 1))
                if log:
                    log(f"[{self.role}] epoch {epoch + 1}/{cfg.run.epochs} "
                        f"train_loss {train_rec.task_loss:.4f} test_top1 {test_rec.top1:.4f}")
            done = max(stop, self.start_epoch)
        return RunResult(self.run_dir, done, self.best_top1, read_metrics(metrics))


def _check_loss(loss: Tensor, step: int) -> None:
    if not np.isfinite(loss.data).all():
        raise NumericalError(f"loss diverged (non-finite) at step {step}")


class TeacherTrainer(_Trainer):
    role = "teacher_ann"

    def __init__(self, cfg: RunConfig, run_dir=None):
        super().__init__(cfg, run_dir)
        self.model = build_teacher(cfg.arch, stream(cfg.run.seed, "init"), self.dtype)
        self.opt = build_optimizer(cfg.optim, self.trainable())

    def trainable(self):
        return self.model.named_parameters()

    def step(self, x, labels, stats):
        self.opt.zero_grad()
        logits, _ = forward_teacher(self.model, x)
        loss = F.cross_entropy(logits, labels)
        _check_loss(loss, self.opt.step_count)
        backward(loss)
        self.opt.step()
        stats["task"].add(loss.item(), len(labels))
        stats["correct"] += int((logits.data.argmax(1) == labels).sum())


class StudentTrainer(_Trainer):
    role = "student_snn"

    def __init__(self, cfg: RunConfig, teacher_ckpt, run_dir=None):
        super().__init__(cfg, run_dir)
        self.teacher_path = Path(teacher_ckpt)
        tt = ckpt_io.load(teacher_ckpt)
        self.teacher, _ = build_from_checkpoint(tt)
        if self.teacher.role != "teacher_ann":
            raise ConfigError(f"{teacher_ckpt} is not a teacher checkpoint")
        init = stream(cfg.run.seed, "init")
        self.model = build_student(cfg.arch, cfg.neuron, init, self.dtype)
        check_tap_compat(self.teacher, self.model)
        self.teacher.freeze()
        for p in self.teacher.parameters():
            p.data = p.data.astype(self.dtype)
        self.teacher_hash = param_hash(self.teacher.named_parameters())
        # the head is always built (same init draws in every mode) but only
        # trained when the feature term is active
        self.head = DistillHead(self.model.tap_channels, self.teacher.tap_channels, init, self.dtype)
        self.mask_rng = stream(cfg.run.seed, "mask")
        self.opt = build_optimizer(cfg.optim, self.trainable())

    def trainable(self):
        named = dict(self.model.named_parameters())
        if self.cfg.distill.uses_bkd:
            named.update({f"distill.{k}": p for k, p in self.head.named_parameters().items()})
        return named

    def extra_state(self):
        out = params_to_arrays(self.head.named_parameters(), "distill")
        out.update({f"rng/mask/{k}": v for k, v in get_state(self.mask_rng).items()})
        out["meta/teacher_sha256"] = ckpt_io.text_to_u8(self.teacher_hash)
        return out

    def load_extra_state(self, t):
        load_params(self.head.named_parameters(), ckpt_io.sub(t, "distill"), "resume distill head")
        set_state(self.mask_rng, ckpt_io.sub(t, "rng/mask"))
        if ckpt_io.u8_to_text(t["meta/teacher_sha256"]) != self.teacher_hash:
            raise ConfigError("resume: teacher checkpoint differs from the one this run started with")

    def header_text(self):
        return f"# teacher = {self.teacher_path}\n# teacher_sha256 = {self.teacher_hash}\n"

    def step(self, x, labels, stats):
        d = self.cfg.distill
        self.opt.zero_grad()
        y_tea = f_tea = None
        if d.mode != "none":
            with no_grad():
                y_tea, f_tea = forward_teacher(self.teacher, x)
        logits, feat = forward_student(self.model, x, self.cfg.run.T, stats["rec"])
        task = F.cross_entropy(logits, labels)
        l_ld = ld_loss(logits, y_tea, d.tau_temp) if d.uses_ld else None
        l_bkd = None
        if d.uses_bkd:
            mask = sample_blur_mask(len(labels), self.teacher.tap_channels, d.blur_ratio, self.mask_rng, self.dtype)
            l_bkd = bkd_loss(blurred_restore(time_average(feat), mask, self.head), f_tea)
        if d.mode == "none":
            loss, l_md = task, None
        else:
            w_ld = d.w_ld if d.uses_ld else 0.0
            w_bkd = d.w_bkd if d.uses_bkd else 0.0
            dist = mixed_loss(l_ld, l_bkd, w_ld, w_bkd)
            loss = F.add(task, dist)
            l_md = dist.item() if d.mode == "md" else None
        _check_loss(loss, self.opt.step_count)
        backward(loss)
        self.opt.step()
        if param_hash(self.teacher.named_parameters()) != self.teacher_hash:
            raise StateError(f"teacher parameters changed at step {self.opt.step_count}")
        b = len(labels)
        stats["task"].add(task.item(), b)
        if l_ld is not None:
            stats["ld"].add(l_ld.item(), b)
        if l_bkd is not None:
            stats["bkd"].add(l_bkd.item(), b)
        if l_md is not None:
            stats["md"].add(l_md, b)
        stats["correct"] += int((logits.data.argmax(1) == labels).sum())


def train_teacher(cfg: RunConfig, run_dir=None, until_epoch: int | None = None, log=None) -> RunResult:
    return TeacherTrainer(cfg, run_dir).run(until_epoch, log)


def train_student(cfg: RunConfig, teacher_ckpt, run_dir=None, until_epoch: int | None = None,
                  log=None, mode: str | None = None) -> RunResult:
    if mode is not None:
        cfg = replace(cfg, distill=replace(cfg.distill, mode=mode))
    return StudentTrainer(cfg, teacher_ckpt, run_dir).run(until_epoch, log)
