"""Command-line entry point: ``spikedistill <command> [options]``.

Exit codes: 0 success, 2 usage error or missing file, otherwise the
``exit_code`` of the raised :class:`~spikedistill.errors.SpikeDistillError`
(3 shape/domain/contract, 4 config, 5 file format, 6 numerical, 7 state).
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import checkpoint as ckpt_io
from .analytics import EnergyModel, ann_energy, model_energy_report
from .config import RunConfig, load_config
from .distill import MODES
from .errors import SpikeDistillError, UsageError
from .models import RateRecorder


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _parser() -> argparse.ArgumentParser:
    p = _Parser(prog="spikedistill", description="Spiking student training with blurred feature distillation.")
    p.add_argument("--threads", type=int, default=None, help="BLAS/OpenMP thread cap (1 for bit-exact runs)")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    t = sub.add_parser("train-teacher", help="pretrain the continuous teacher")
    t.add_argument("--config", required=True)
    t.add_argument("--out", help="run directory (overrides [run] out_dir)")
    t.add_argument("--until-epoch", type=int, help="stop after this epoch; rerun to resume")

    s = sub.add_parser("train-student", help="train the spiking student")
    s.add_argument("--config", required=True)
    s.add_argument("--teacher", required=True, help="teacher checkpoint")
    s.add_argument("--mode", choices=MODES, help="distillation mode (overrides [distill] mode)")
    s.add_argument("--out")
    s.add_argument("--until-epoch", type=int)

    e = sub.add_parser("eval", help="top-1, loss and tap firing rate of a checkpoint")
    e.add_argument("--ckpt", required=True)
    e.add_argument("--split", default="test")
    e.add_argument("--config", help="override the data section stored in the checkpoint")

    a = sub.add_parser("analyze", help="firing-rate and energy report")
    a.add_argument("--ckpt", required=True)
    a.add_argument("--split", default="test")
    a.add_argument("--config")
    a.add_argument("--ann-flops", type=float, nargs="+",
                   help="also report continuous-network energy for these per-layer FLOPS counts")

    g = sub.add_parser("gradcheck", help="finite-difference oracle suite")
    g.add_argument("--seeds", type=int, default=None)
    g.add_argument("--only", nargs="+", help="restrict to these primitives")
    return p


def _need_file(path: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"file not found: {p}")
    return p


def _log(msg: str) -> None:
    print(msg, flush=True)


def _with_out(cfg: RunConfig, out: str | None) -> str:
    return out or cfg.run.out_dir


def cmd_train_teacher(args) -> int:
    from .train import train_teacher

    cfg = load_config(_need_file(args.config))
    r = train_teacher(cfg, _with_out(cfg, args.out), args.until_epoch, _log)
    print(f"run_dir={r.run_dir} epochs={r.epochs_done} best_top1={r.best_top1:.4f}")
    return 0


def cmd_train_student(args) -> int:
    from .train import train_student

    cfg = load_config(_need_file(args.config))
    _need_file(args.teacher)
    r = train_student(cfg, args.teacher, _with_out(cfg, args.out), args.until_epoch, _log, args.mode)
    print(f"run_dir={r.run_dir} epochs={r.epochs_done} best_top1={r.best_top1:.4f}")
    return 0


def _override(args) -> RunConfig | None:
    return load_config(_need_file(args.config)) if args.config else None


def cmd_eval(args) -> int:
    from .train import evaluate

    _need_file(args.ckpt)
    print(evaluate(args.ckpt, args.split, _override(args)).to_line())
    return 0


def cmd_analyze(args) -> int:
    from .train import build_from_checkpoint, evaluate_model, load_split

    tensors = ckpt_io.load(_need_file(args.ckpt))
    m, cfg = build_from_checkpoint(tensors)
    cfg = _override(args) or cfg
    em = EnergyModel()
    print(f"role={m.role} T={cfg.run.T if m.role == 'student_snn' else 1} "
          f"e_mac={em.e_mac:.3g}J e_ac={em.e_ac:.3g}J process={em.process}")
    print(f"normalization={cfg.data.dataset}")
    rec = RateRecorder()
    rec_line = evaluate_model(m, load_split(cfg, args.split), cfg, int(tensors["meta/epoch"][0]), args.split, rec)
    print(rec_line.to_line())
    rates = {name: rec.rate(name) for name in rec.counts}
    for name, r in rates.items():
        print(f"rate\tlayer:{name}\tr:{r:.6f}")
    report = model_energy_report(m, rates, cfg.run.T, em)
    print(report.text_table())
    if args.ann_flops:
        e = ann_energy(args.ann_flops, em)
        print(f"ann_energy\tflops:{sum(args.ann_flops):.6g}\tenergy_mj:{e * 1e3:.2f}")
    return 0


def cmd_gradcheck(args) -> int:
    from .oracle_suite import N_SEEDS, TOL, run_all

    results = run_all(args.seeds or N_SEEDS, args.only)
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'}\t{r.name}\tmax_rel_err:{r.max_rel_err:.3e}\tseeds:{r.n_seeds}")
    failed = [r.name for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} primitives within {TOL:g}")
    return 1 if failed else 0


COMMANDS = {
    "train-teacher": cmd_train_teacher,
    "train-student": cmd_train_student,
    "eval": cmd_eval,
    "analyze": cmd_analyze,
    "gradcheck": cmd_gradcheck,
}


def main(argv=None) -> int:
    try:
        args = _parser().parse_args(argv)
        if args.threads is not None:
            if args.threads < 1:
                raise UsageError("--threads must be >= 1")
            from threadpoolctl import threadpool_limits

            with threadpool_limits(limits=args.threads):
                return COMMANDS[args.command](args)
        return COMMANDS[args.command](args)
    except SpikeDistillError as e:
        print(f"error[{type(e).__name__}]: {e}", file=sys.stderr)
        return e.exit_code
    except KeyboardInterrupt:
        print("interrupted", file=sys.stderr)
        return 130


if __name__ == "__main__":
    sys.exit(main())
