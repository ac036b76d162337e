"""Command-line interface: ``pairdiff {fit,gcurve,simulate,bench,diagnose}``.

Exit status: 0 success, 1 usage error, 2 data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

import numpy as np

from . import bench
from .baselines import ProjectionConfig, SplineConfig, bspline_fit, nw_curve, projection_fit, \
    silverman_bandwidth
from .errors import DataError, PairDiffError
from .io import fmt, load_model, model_beta, model_to_dict, read_data_csv, save_model, \
    truth_path, write_data_csv, write_truth_csv
from .kernel import KERNEL_FAMILIES
from .simulate import SCENARIOS, ScenarioSpec, generate
from .solver import CV_POLICIES, FitConfig, fit_prd

METHODS = ("prd", "projection", "bspline")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _bandwidth(text: str):
    if text in ("auto", "rate"):
        return text
    try:
        h = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected 'auto', 'rate' or a positive number, got {text!r}")
    if not h > 0 or not np.isfinite(h):
        raise argparse.ArgumentTypeError(f"bandwidth must be positive, got {text}")
    return h


def _lambda(text: str):
    if text == "cv":
        return text
    try:
        lam = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected 'cv' or a positive number, got {text!r}")
    if not lam > 0 or not np.isfinite(lam):
        raise argparse.ArgumentTypeError(f"lambda must be positive, got {text}")
    return lam


def _int_list(text: str):
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _global_flags(parser, suppress: bool):
    d = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    parser.add_argument("--seed", type=int, default=d(None),
                        help="random seed (CV folds, simulation, bench base seed)")
    parser.add_argument("--threads", type=int, default=d(1),
                        help="worker processes; PAIRDIFF_THREADS overrides")
    parser.add_argument("--out-dir", type=Path, default=d(Path(".")),
                        help="directory for output files")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="pairdiff", description="Pairwise-difference lasso for "
                     "partially linear models.")
    _global_flags(parser, suppress=False)
    common = _Parser(add_help=False)
    _global_flags(common, suppress=True)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("fit", parents=[common], help="fit a model to a data CSV")
    p.add_argument("data")
    p.add_argument("--method", choices=METHODS, default="prd")
    p.add_argument("--kernel", choices=KERNEL_FAMILIES, default="box")
    p.add_argument("--h", type=_bandwidth, default="auto",
                   help="bandwidth: auto (2 sqrt(ln p/n)), rate (half of auto) or a number")
    p.add_argument("--lambda", dest="lam", type=_lambda, default="cv")
    p.add_argument("--cv-policy", choices=CV_POLICIES, default="obs")
    p.add_argument("--cv-folds", type=int, default=10)
    p.add_argument("--standardize", action="store_true")
    p.add_argument("--log-y", action="store_true", help="fit log(y) instead of y")
    p.add_argument("--top-k", type=int, default=0,
                   help="also print the k largest coefficients by absolute value")
    p.add_argument("--out", type=Path, help="model JSON (default OUT_DIR/model.json)")

    p = sub.add_parser("gcurve", parents=[common],
                       help="smoothed standardized residual curve against w")
    p.add_argument("data")
    p.add_argument("model")
    p.add_argument("--bandwidth", type=float, help="smoother bandwidth (default Silverman)")
    p.add_argument("--grid-size", type=int, default=101)
    p.add_argument("--kernel", choices=KERNEL_FAMILIES, default="box")
    p.add_argument("--log-y", action="store_true")
    p.add_argument("--out", type=Path, help="CSV (default OUT_DIR/gcurve.csv)")

    p = sub.add_parser("simulate", parents=[common], help="write a synthetic data set")
    p.add_argument("--scenario", type=int, choices=SCENARIOS, required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--p", type=int, required=True)
    p.add_argument("--s", type=int, required=True)
    p.add_argument("--out", type=Path, help="data CSV (default OUT_DIR/data.csv)")

    p = sub.add_parser("bench", parents=[common], help="run a Monte Carlo plan")
    p.add_argument("--plan", type=Path, required=True, help="experiment plan JSON")
    p.add_argument("--reps", type=int, help="override the plan's replication count")
    p.add_argument("--timings", action="store_true",
                   help="include per-replication runtime (makes output non-reproducible)")

    p = sub.add_parser("diagnose", parents=[common],
                       help="gradient and U-statistic sup-norms at the truth")
    p.add_argument("--scenario", type=int, choices=SCENARIOS, default=1)
    p.add_argument("--n", type=_int_list, default=[100, 200, 400, 800])
    p.add_argument("--p", type=int, default=256)
    p.add_argument("--s", type=int, default=10)
    p.add_argument("--reps", type=int, default=50)
    p.add_argument("--h", type=_bandwidth, default="auto")
    p.add_argument("--kernel", choices=KERNEL_FAMILIES, default="box")
    p.add_argument("--out", type=Path, help="CSV (default OUT_DIR/diagnostic.csv)")
    return parser


def _threads(args) -> int:
    env = os.environ.get("PAIRDIFF_THREADS")
    if env:
        try:
            t = int(env)
        except ValueError:
            raise UsageError(f"PAIRDIFF_THREADS must be an integer, got {env!r}") from None
    else:
        t = args.threads
    if t < 1:
        raise UsageError("thread count must be at least 1")
    return t


def _out(args, name: str) -> Path:
    path = args.out if args.out is not None else args.out_dir / name
    path.parent.mkdir(parents=True, exist_ok=True)
    return path


def cmd_fit(args) -> int:
    data = read_data_csv(args.data, log_y=args.log_y)
    seed = 0 if args.seed is None else args.seed
    config = FitConfig(h=args.h, lam=args.lam, cv_folds=args.cv_folds, cv_seed=seed,
                       cv_policy=args.cv_policy, standardize=args.standardize)
    if args.method == "prd":
        fit = fit_prd(data, config, args.kernel)
    elif args.method == "projection":
        fit = projection_fit(data, ProjectionConfig(lam=args.lam, cv_folds=args.cv_folds,
                                                    kernel=args.kernel), config)
    else:
        fit = bspline_fit(data, SplineConfig(lam=args.lam), config)
    echo = {"method": args.method, "kernel": args.kernel, "h": args.h, "lambda": args.lam,
            "cv_policy": args.cv_policy, "cv_folds": args.cv_folds, "seed": seed,
            "standardize": args.standardize, "log_y": args.log_y}
    if args.method == "bspline":
        echo["mu"] = fit.extra["mu"]
    path = _out(args, "model.json")
    save_model(path, model_to_dict(fit, data.n, data.p, args.kernel, echo, source=args.data))
    h = "none" if fit.h_used is None else fmt(fit.h_used)
    print(f"method      {fit.method}")
    print(f"h           {h}")
    print(f"lambda      {fmt(fit.lambda_used)}")
    print(f"support     {fit.support_size}")
    print(f"objective   {fmt(fit.objective)}")
    print(f"kkt         {fmt(fit.kkt_violation)}")
    print(f"converged   {'yes' if fit.converged else 'no'}")
    if args.top_k > 0:
        order = np.argsort(-np.abs(fit.beta_hat), kind="stable")[:args.top_k]
        for k in order:
            if fit.beta_hat[k] != 0:
                print(f"x{k + 1:<10d} {fmt(fit.beta_hat[k])}")
    print(f"model       {path}")
    return 0


def standardized_residuals(r: np.ndarray) -> np.ndarray:
    r = r - r.mean()
    sd = r.std()
    if sd <= 1e-12 * max(1.0, float(np.max(np.abs(r)))):
        return np.zeros_like(r)
    return r / sd


def cmd_gcurve(args) -> int:
    data = read_data_csv(args.data, log_y=args.log_y)
    model = load_model(args.model)
    if int(model["p"]) != data.p:
        raise DataError(f"dimension mismatch: model has p = {model['p']}, data has p = {data.p}")
    if args.grid_size < 1:
        raise UsageError("--grid-size must be at least 1")
    z = standardized_residuals(data.Y - data.X @ model_beta(model))
    bw = silverman_bandwidth(data.W) if args.bandwidth is None else args.bandwidth
    if not bw > 0:
        raise UsageError("smoother bandwidth must be positive")
    lo, hi = float(data.W.min()), float(data.W.max())
    grid = np.array([0.5 * (lo + hi)]) if args.grid_size == 1 else np.linspace(lo, hi, args.grid_size)
    curve = nw_curve(data.W, z, grid, bw, args.kernel)
    path = _out(args, "gcurve.csv")
    bench.write_csv(path, [{"w": float(w), "residual": float(c)} for w, c in zip(grid, curve)])
    print(f"wrote {len(grid)} points to {path}")
    return 0


def cmd_simulate(args) -> int:
    spec = ScenarioSpec(args.scenario, args.n, args.p, args.s,
                        0 if args.seed is None else args.seed)
    data = generate(spec)
    path = _out(args, "data.csv")
    write_data_csv(path, data)
    write_truth_csv(truth_path(path), data)
    print(f"wrote {data.n} x {data.p} data to {path} (truth in {truth_path(path)})")
    return 0


def cmd_bench(args) -> int:
    plan = bench.ExperimentPlan.from_json(args.plan)
    if args.reps is not None:
        plan.replications = args.reps
    if args.seed is not None:
        plan.base_seed = args.seed
    written = bench.run_plan(plan, args.out_dir, threads=_threads(args), timings=args.timings)
    for path in written.values():
        print(f"wrote {path}")
    return 0


def cmd_diagnose(args) -> int:
    if any(n < 2 for n in args.n) or args.reps < 1:
        raise UsageError("--n values must be at least 2 and --reps at least 1")
    template = ScenarioSpec(args.scenario, args.n[0], args.p, args.s)
    rows = bench.perturbation_diagnostic(template, args.reps, args.n,
                                         0 if args.seed is None else args.seed,
                                         args.h, args.kernel)
    path = _out(args, "diagnostic.csv")
    bench.write_csv(path, rows)
    print(f"wrote {path}")
    return 0


COMMANDS = {"fit": cmd_fit, "gcurve": cmd_gcurve, "simulate": cmd_simulate,
            "bench": cmd_bench, "diagnose": cmd_diagnose}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"pairdiff: error: {exc}", file=sys.stderr)
        return 1
    except PairDiffError as exc:
        print(f"pairdiff: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except ValueError as exc:
        # invalid option values caught by the config dataclasses
        print(f"pairdiff: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
