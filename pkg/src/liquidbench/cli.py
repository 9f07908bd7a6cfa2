"""Command-line interface.

Subcommands: run, sweep, profile, gradcheck, bench.  Exit codes: 0 success,
2 config error, 3 numerical failure (divergence/stiffness), 4 I/O error.
"""

import argparse
import json
import os
import sys

from ._backend import BACKEND_NAME
from .graddiff import Batch, grad_check
from .harness import (ConfigError, emit_all, load_config, profile_timing,
                      run_experiment, run_robustness_sweep)
from .models import FAMILIES, build_model
from .numerics import rng_new
from .solvers import SolverConfig, StiffnessError
from .training import TrainingDivergedError

GRADCHECK_TOL = 1e-4


def _apply_overrides(cfg, args):
    if getattr(args, "seed", None) is not None:
        cfg.set("train", "seed", args.seed)
    if getattr(args, "out", None) is not None:
        cfg.set("output", "dir", args.out)
    return cfg


def _cmd_run(args, robustness):
    cfg = _apply_overrides(load_config(args.config), args)
    report = run_robustness_sweep(cfg) if robustness else run_experiment(cfg)
    out_dir = cfg.get("output", "dir")
    emit_all(report, out_dir)
    m = report.metrics["test"]
    print(f"family={report.family} backend={report.backend} "
          f"params={report.param_count} seed={report.seed}")
    print(f"final train loss={report.losses[-1]:.6g} "
          f"test mae={m['mae']:.6g} rmse={m['rmse']:.6g} r2={m['r2']:.6g}")
    if report.robustness:
        print(f"robustness grid: {len(report.robustness)} rows")
    print(f"outputs written to {out_dir}")
    return 0


def _cmd_profile(args):
    cfg_a = _apply_overrides(load_config(args.config_a), args)
    cfg_b = _apply_overrides(load_config(args.config_b), args)
    record = profile_timing(cfg_a, cfg_b, epochs=args.epochs)
    for tag in ("a", "b"):
        r = record[tag]
        print(f"{tag}: family={r['family']} solver={r['solver_kind']} "
              f"median epoch {r['median_epoch_seconds']:.4f}s")
    print(f"ratio a/b = {record['ratio_a_over_b']:.3f}")
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        path = os.path.join(args.out, "profile.json")
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(record, fh, indent=2, sort_keys=True)
        print(f"profile written to {path}")
    return 0


_GRADCHECK_SOLVERS = {
    "ltc": SolverConfig(kind="fused", dt=0.1, substeps=3),
    "ssm": SolverConfig(kind="euler", dt=0.1, substeps=2),
}


def _cmd_gradcheck(args):
    families = [args.family] if args.family else list(FAMILIES)
    worst = 0.0
    failed = False
    for family in families:
        errs = []
        for trial in range(args.trials):
            rng = rng_new(args.seed, 100 + trial)
            model = build_model(family, input_dim=3, output_dim=2, hidden=5,
                                rng=rng, solver=_GRADCHECK_SOLVERS.get(family))
            data = rng_new(args.seed, 200 + trial)
            inputs = data.normals(4 * 9 * 3).reshape(4, 9, 3)
            targets = data.normals(4 * 2).reshape(4, 2)
            errs.append(grad_check(model, Batch(inputs, targets)))
        err = max(errs)
        worst = max(worst, err)
        status = "PASS" if err < GRADCHECK_TOL else "FAIL"
        print(f"{family:<6} max_rel_err={err:.3e}  {status}")
        failed = failed or err >= GRADCHECK_TOL
    print(f"worst={worst:.3e} tol={GRADCHECK_TOL:g} backend={BACKEND_NAME}")
    return 3 if failed else 0


def _cmd_bench(args):
    from .bench import run_bench
    run_bench(batch=args.batch, steps=args.steps, features=args.features,
              hidden=args.hidden, substeps=args.substeps)
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="liquidbench",
        description="Train and compare discrete and liquid recurrent cells "
                    "on deterministic sequence benchmarks.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="train and evaluate one config")
    p.add_argument("config")
    p.add_argument("--seed", type=int, help="override [train] seed")
    p.add_argument("--out", help="override [output] dir")

    p = sub.add_parser("sweep", help="run plus the noise-robustness grid")
    p.add_argument("config")
    p.add_argument("--seed", type=int)
    p.add_argument("--out")

    p = sub.add_parser("profile",
                       help="median per-epoch timing of two configs")
    p.add_argument("config_a")
    p.add_argument("config_b")
    p.add_argument("--epochs", type=int, default=6)
    p.add_argument("--seed", type=int)
    p.add_argument("--out")

    p = sub.add_parser("gradcheck",
                       help="BPTT vs finite differences per cell family")
    p.add_argument("--family", choices=FAMILIES)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--trials", type=int, default=3)

    p = sub.add_parser("bench",
                       help="compiled vs pure kernel benchmark")
    p.add_argument("--batch", type=int, default=32)
    p.add_argument("--steps", type=int, default=10)
    p.add_argument("--features", type=int, default=8)
    p.add_argument("--hidden", type=int, default=64)
    p.add_argument("--substeps", type=int, default=5)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        if args.command == "run":
            return _cmd_run(args, robustness=False)
        if args.command == "sweep":
            return _cmd_run(args, robustness=True)
        if args.command == "profile":
            return _cmd_profile(args)
        if args.command == "gradcheck":
            return _cmd_gradcheck(args)
        if args.command == "bench":
            return _cmd_bench(args)
        raise AssertionError(args.command)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (TrainingDivergedError, StiffnessError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
