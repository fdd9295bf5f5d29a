"""Command-line entry point: train / eval / bench / check.

Exit codes: 0 success, 1 runtime or property failure, 2 bad configuration.
The environment variable ``STFM_SEED`` overrides the config-file seed;
an explicit ``--seed`` flag beats both.
"""

from __future__ import annotations

import argparse
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import bench as bench_mod
from . import checks, checkpoint, training
from .runconfig import ConfigError, load_run_config, resolved_text
from .rng import Rng
from .training import MetricsRecord, MetricsWriter, TrainingDiverged


def _resolve_seed(arg_seed: int | None) -> int | None:
    if arg_seed is not None:
        return arg_seed
    env = os.environ.get("STFM_SEED")
    return int(env) if env else None


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------

def cmd_train(args) -> int:
    try:
        cfg = load_run_config(args.config, _resolve_seed(args.seed))
    except (OSError, ConfigError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    if args.workers is not None:
        cfg.workers = args.workers
    out = Path(args.out) if args.out else Path("runs") / Path(args.config).stem
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.resolved").write_text(resolved_text(cfg))
    writer = MetricsWriter(out / "metrics.csv")
    ckpt_path = out / "model.stfm"

    def on_eval(rec: MetricsRecord, model):
        writer.write(rec)
        checkpoint.save_checkpoint(model, ckpt_path)
        shown = ", ".join(f"{k}={v:.4f}" for k, v in rec.metrics.items())
        print(f"step {rec.step}: loss={rec.loss:.4f} {shown} "
              f"[{rec.wall_s:.0f}s]", flush=True)

    try:
        model, _ = training.train(cfg, on_eval=on_eval)
    except TrainingDiverged as e:
        print(f"error: {e}; last-good checkpoint kept at {ckpt_path}",
              file=sys.stderr)
        return 1
    checkpoint.save_checkpoint(model, ckpt_path)
    print(f"wrote {ckpt_path} and {out / 'metrics.csv'}")
    return 0


# ---------------------------------------------------------------------------
# eval
# ---------------------------------------------------------------------------

def cmd_eval(args) -> int:
    seed = _resolve_seed(args.seed)
    seed = 0 if seed is None else seed
    cfg = training.TrainConfig(task=args.task, seed=seed)
    if args.task == training.TASK_CLUSTERING:
        if args.oracle:
            target = "oracle"
        else:
            if not args.model:
                print("error: --model is required without --oracle",
                      file=sys.stderr)
                return 2
            model = checkpoint.load_checkpoint(args.model)
            if model.in_dim != cfg.mog_dim:
                print(f"error: checkpoint expects {model.in_dim}-dim inputs; "
                      f"task {args.task} feeds {cfg.mog_dim}-dim points",
                      file=sys.stderr)
                return 1
            target = model
        metrics = training.evaluate_clustering(
            target, cfg, Rng(seed), args.datasets, workers=args.workers or 1)
    else:
        if not args.model:
            print("error: --model is required for max regression",
                  file=sys.stderr)
            return 2
        model = checkpoint.load_checkpoint(args.model)
        if model.in_dim != 1:
            print(f"error: checkpoint expects {model.in_dim}-dim inputs; "
                  f"max regression feeds scalars", file=sys.stderr)
            return 1
        metrics = training.evaluate_max_regression(model, Rng(seed),
                                                   args.datasets)

    for name in sorted(metrics):
        if not name.endswith("_std"):
            std = metrics.get(f"{name}_std")
            tail = f" ± {std:.4f}" if std is not None else ""
            print(f"{name}: {metrics[name]:.4f}{tail}")
    if args.csv:
        MetricsWriter(args.csv).write(
            MetricsRecord(step=0, loss=float("nan"), metrics=metrics, wall_s=0.0))
    return 0


# ---------------------------------------------------------------------------
# bench
# ---------------------------------------------------------------------------

def cmd_bench(args) -> int:
    sizes = [int(s) for s in args.sizes.split(",")]
    if len(sizes) < 2:
        print("error: --sizes needs at least two entries", file=sys.stderr)
        return 2
    report = bench_mod.bench_block(args.block, sizes, reps=args.reps,
                                   m=args.m, seed=args.seed or 0)
    for n, med, lo, hi in zip(report.sizes, report.medians,
                              report.p10, report.p90):
        status = "failed" if n in report.failed else \
            f"median={med:.6f}s p10={lo:.6f} p90={hi:.6f}"
        print(f"n={n:>6d}  {status}")
    print(f"fitted log-log slope: {report.slope:.3f}")
    if args.out:
        bench_mod.write_bench_csv(report, args.out)
        print(f"wrote {args.out}")
    return 0


# ---------------------------------------------------------------------------
# check
# ---------------------------------------------------------------------------

def cmd_check(args) -> int:
    names = list(checks.SUITES) if args.suite == "all" else [args.suite]
    seed = args.seed or 0
    failed = False
    for res in checks.run_suites(names, seed=seed):
        for case, err in res.errors.items():
            mark = "FAIL" if case in res.failures else "ok"
            print(f"[{res.name}] {case}: worst error {err:.3e} "
                  f"(tol {res.tol:.0e}) {mark}")
        if not res.ok:
            failed = True
            print(f"[{res.name}] FAILED; replay with --seed {res.seed}")
    return 1 if failed else 0


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="stfm",
                                description="Set attention experiment harness")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="run a training config")
    t.add_argument("--config", required=True)
    t.add_argument("--seed", type=int)
    t.add_argument("--out")
    t.add_argument("--workers", type=int)
    t.set_defaults(fn=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint")
    e.add_argument("--model")
    e.add_argument("--task", required=True,
                   choices=[training.TASK_MAX_REGRESSION,
                            training.TASK_CLUSTERING])
    e.add_argument("--datasets", type=int, default=1000)
    e.add_argument("--seed", type=int)
    e.add_argument("--oracle", action="store_true",
                   help="score the true generating parameters")
    e.add_argument("--workers", type=int)
    e.add_argument("--csv", help="append metrics to this CSV file")
    e.set_defaults(fn=cmd_eval)

    b = sub.add_parser("bench", help="time a single SAB/ISAB block")
    b.add_argument("--block", required=True, choices=["sab", "isab"])
    b.add_argument("--m", type=int, default=16)
    b.add_argument("--sizes", required=True,
                   help="comma-separated set sizes, e.g. 256,512,1024")
    b.add_argument("--reps", type=int, default=5)
    b.add_argument("--seed", type=int)
    b.add_argument("--out", help="write raw timings CSV here")
    b.set_defaults(fn=cmd_bench)

    c = sub.add_parser("check", help="run the property suites")
    c.add_argument("--suite", default="all",
                   choices=["all", *checks.SUITES])
    c.add_argument("--seed", type=int)
    c.set_defaults(fn=cmd_check)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
