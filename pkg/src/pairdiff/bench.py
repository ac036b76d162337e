"""Monte Carlo harness for the synthetic experiments.

Replication ``r`` of a cell draws its data from the seed
``replication_seed(base_seed, r)``; every method in the cell sees the same
datasets, and the CV fold assignment reuses that seed. Results depend only
on the plan and ``base_seed``, never on the number of worker processes.
"""

from __future__ import annotations

import csv
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .baselines import ProjectionConfig, SplineConfig, bspline_design, bspline_fit, \
    projection_design, projection_fit
from .core import build_pairs, gradient, u_stat_g, u_stat_noise
from .errors import DataError, PairDiffError
from .io import fmt
from .simulate import ScenarioSpec, generate
from .solver import FitConfig, fit_prd, lambda_grid, pair_design, path_design, resolve_bandwidth, \
    solve_design

METHODS = ("prd", "projection", "bspline")
LAMBDA_POLICIES = ("cv", "path-sweep", "max")


def replication_seed(base_seed: int, r: int) -> int:
    return int(np.random.SeedSequence([int(base_seed), int(r)]).generate_state(1, np.uint64)[0])


@dataclass
class ExperimentPlan:
    scenarios: list
    methods: list = field(default_factory=lambda: ["prd"])
    replications: int = 100
    base_seed: int = 0
    lambda_policy: str = "cv"
    h_policy: str | float = "auto"
    kernel: str = "box"
    cv_policy: str = "obs"
    n_lambda: int = 100
    scaling_grid: dict | None = None

    def __post_init__(self):
        self.scenarios = [s if isinstance(s, ScenarioSpec) else ScenarioSpec(**s)
                          for s in self.scenarios]
        bad = set(self.methods) - set(METHODS)
        if bad:
            raise DataError(f"unknown method(s) {sorted(bad)}; expected {METHODS}")
        if self.lambda_policy not in LAMBDA_POLICIES:
            raise DataError(f"lambda_policy must be one of {LAMBDA_POLICIES}")
        if self.replications < 1:
            raise DataError("replications must be at least 1")

    @classmethod
    def from_json(cls, path) -> "ExperimentPlan":
        try:
            raw = json.loads(Path(path).read_text(encoding="utf-8"))
            return cls(**raw)
        except (OSError, json.JSONDecodeError, TypeError, ValueError) as exc:
            raise DataError(f"invalid plan file {path}: {exc}") from None


@dataclass
class BenchRow:
    scenario_id: int
    n: int
    p: int
    s: int
    method: str
    replication: int
    seed: int
    l2_error: float
    support_size: int
    true_positive_count: int
    lambda_used: float
    h_used: float
    runtime_seconds: float
    converged: bool
    error: str = ""


def fit_method(data, method: str, h_policy="auto", kernel="box", lam="cv",
               cv_policy="obs", cv_seed=0, n_lambda=100):
    config = FitConfig(h=h_policy, lam=lam, cv_seed=cv_seed, cv_policy=cv_policy,
                       n_lambda=n_lambda)
    if method == "prd":
        return fit_prd(data, config, kernel)
    if method == "projection":
        return projection_fit(data, ProjectionConfig(lam=lam, kernel=kernel), config)
    if method == "bspline":
        return bspline_fit(data, SplineConfig(lam=lam), config)
    raise DataError(f"unknown method {method!r}")


def method_design(data, method: str, h_policy="auto", kernel="box"):
    """The lasso problem a method solves, as a :class:`QuadraticDesign`."""
    if method == "prd":
        h = resolve_bandwidth(h_policy, data.n, data.p)
        return pair_design(data, build_pairs(data, h, kernel))
    if method == "projection":
        return projection_design(data, ProjectionConfig(kernel=kernel))[0]
    if method == "bspline":
        return bspline_design(data, SplineConfig())[0]
    raise DataError(f"unknown method {method!r}")


def _replication(args) -> BenchRow:
    template, method, r, base_seed, lambda_policy, h_policy, kernel, cv_policy, n_lambda = args
    seed = replication_seed(base_seed, r)
    spec = template.with_seed(seed)
    t0 = time.perf_counter()
    try:
        data = generate(spec)
        if lambda_policy == "max":
            design = method_design(data, method, h_policy, kernel)
            lam = max(design.lambda_max(), np.finfo(float).tiny)
            fit = solve_design(design, lam, FitConfig(), method=method)
        else:
            fit = fit_method(data, method, h_policy, kernel, "cv", cv_policy, seed, n_lambda)
        truth = data.beta_star
        row = BenchRow(spec.scenario_id, spec.n, spec.p, spec.s, method, r, seed,
                       float(np.linalg.norm(fit.beta_hat - truth)), fit.support_size,
                       int(np.sum((fit.beta_hat != 0) & (truth != 0))), fit.lambda_used,
                       float("nan") if fit.h_used is None else fit.h_used, 0.0,
                       bool(fit.converged))
    except PairDiffError as exc:
        row = BenchRow(spec.scenario_id, spec.n, spec.p, spec.s, method, r, seed,
                       float("nan"), 0, 0, float("nan"), float("nan"), 0.0, False,
                       f"{type(exc).__name__}: {exc}")
    row.runtime_seconds = time.perf_counter() - t0
    return row


def _map(fn, jobs, threads: int):
    if threads <= 1 or len(jobs) <= 1:
        return [fn(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(fn, jobs))


def run_cell(template: ScenarioSpec, method: str, replications: int, base_seed: int = 0,
             lambda_policy: str = "cv", h_policy="auto", kernel="box", cv_policy="obs",
             threads: int = 1, n_lambda: int = 100) -> list[BenchRow]:
    """One row per replication; fit failures are flagged in ``error``, never raised."""
    if lambda_policy not in ("cv", "max"):
        raise DataError("run_cell supports lambda_policy 'cv' or 'max'; "
                        "use path_sweep_curve for 'path-sweep'")
    jobs = [(template, method, r, base_seed, lambda_policy, h_policy, kernel, cv_policy, n_lambda)
            for r in range(replications)]
    return _map(_replication, jobs, threads)


def aggregate(rows: list[BenchRow]) -> list[dict]:
    """Mean l2 error and its standard error ``sd / sqrt(#ok)`` per cell."""
    cells = {}
    for row in rows:
        cells.setdefault((row.scenario_id, row.n, row.p, row.s, row.method), []).append(row)
    out = []
    for (sc, n, p, s, method), rs in cells.items():
        ok = [r for r in rs if not r.error]
        err = np.array([r.l2_error for r in ok])
        m = len(ok)
        out.append({
            "scenario_id": sc, "n": n, "p": p, "s": s, "method": method,
            "replications": len(rs), "failures": len(rs) - m,
            "mean_l2_error": float(err.mean()) if m else float("nan"),
            "se_l2_error": float(err.std(ddof=1) / math.sqrt(m)) if m > 1 else float("nan"),
            "mean_support_size": float(np.mean([r.support_size for r in ok])) if m else float("nan"),
            "mean_true_positives": float(np.mean([r.true_positive_count for r in ok])) if m else float("nan"),
            "nonconverged_rate": float(np.mean([not r.converged for r in ok])) if m else float("nan"),
        })
    return out


def _path_replication(args):
    template, method, r, base_seed, h_policy, kernel, n_lambda, ratio_min = args
    data = generate(template.with_seed(replication_seed(base_seed, r)))
    design = method_design(data, method, h_policy, kernel)
    config = FitConfig(n_lambda=n_lambda, lambda_min_ratio=ratio_min)
    path = path_design(design, config, lambdas=lambda_grid(design.lambda_max(), config))
    support = np.array([fit.support_size for _, fit in path], dtype=float)
    err = np.array([np.linalg.norm(fit.beta_hat - data.beta_star) for _, fit in path])
    return support, err


def path_sweep_curve(template: ScenarioSpec, method: str, replications: int, base_seed: int = 0,
                     h_policy="auto", kernel="box", n_lambda: int = 100,
                     lambda_min_ratio: float = 1e-3, threads: int = 1) -> list[dict]:
    """Average ``(support size, l2 error)`` along a common grid of ``lambda / lambda_max``."""
    jobs = [(template, method, r, base_seed, h_policy, kernel, n_lambda, lambda_min_ratio)
            for r in range(replications)]
    res = _map(_path_replication, jobs, threads)
    sup = np.mean([s for s, _ in res], axis=0)
    err = np.array([e for _, e in res])
    ratios = np.logspace(0.0, math.log10(lambda_min_ratio), n_lambda)
    se = err.std(axis=0, ddof=1) / math.sqrt(len(res)) if len(res) > 1 else np.full(n_lambda, np.nan)
    return [{"scenario_id": template.scenario_id, "n": template.n, "p": template.p,
             "s": template.s, "method": method, "grid_index": k, "lambda_ratio": float(ratios[k]),
             "mean_support_size": float(sup[k]), "mean_l2_error": float(err.mean(axis=0)[k]),
             "se_l2_error": float(se[k])}
            for k in range(n_lambda)]


def dominance_fraction(curve_a: list[dict], curve_b: list[dict]) -> float:
    """Fraction of ``curve_a`` points below ``curve_b`` at matched support size.

    ``curve_b``'s error is linearly interpolated in support size; points of
    ``curve_a`` outside ``curve_b``'s support range are skipped.
    """
    xb = np.array([c["mean_support_size"] for c in curve_b])
    yb = np.array([c["mean_l2_error"] for c in curve_b])
    order = np.argsort(xb, kind="stable")
    xb, yb = xb[order], yb[order]
    xb, first = np.unique(xb, return_index=True)
    yb = yb[first]
    wins = total = 0
    for c in curve_a:
        x = c["mean_support_size"]
        if x < xb[0] or x > xb[-1]:
            continue
        total += 1
        wins += c["mean_l2_error"] < np.interp(x, xb, yb)
    return wins / total if total else float("nan")


def scaling_grid(p_values, n_values, s: int = 10, scenario_id: int = 2, replications: int = 50,
                 base_seed: int = 0, h_policy="auto", kernel="box", cv_policy="obs",
                 threads: int = 1) -> list[dict]:
    """PRD mean l2 error per ``(n, p)``, lambda by CV in every replication."""
    out = []
    for p in p_values:
        for n in n_values:
            rows = run_cell(ScenarioSpec(scenario_id, n, p, s), "prd", replications, base_seed,
                            "cv", h_policy, kernel, cv_policy, threads)
            agg = aggregate(rows)[0]
            out.append({"scenario_id": scenario_id, "n": n, "p": p, "s": s,
                        "mean_l2_error": agg["mean_l2_error"], "se_l2_error": agg["se_l2_error"],
                        "failures": agg["failures"], "nonconverged_rate": agg["nonconverged_rate"]})
    return out


@dataclass
class DiagnosticSamples:
    """Per-replication sup-norms at one ``(n, p)``; ``U`` keeps every U_k for centring."""

    n: int
    p: int
    h: float
    grad_sup: np.ndarray
    U: np.ndarray
    noise_sup: np.ndarray

    @property
    def u_centered_sup(self) -> np.ndarray:
        return np.max(np.abs(self.U - self.U.mean(axis=0)), axis=1)


def diagnostic_samples(template: ScenarioSpec, replications: int, base_seed: int = 0,
                       h_policy="auto", kernel="box") -> DiagnosticSamples:
    grads, Us, noise = [], [], []
    h = resolve_bandwidth(h_policy, template.n, template.p)
    for r in range(replications):
        data = generate(template.with_seed(replication_seed(base_seed, r)))
        pairs = build_pairs(data, h, kernel)
        grads.append(np.max(np.abs(gradient(data, pairs, data.beta_star))))
        Us.append(u_stat_g(data, pairs))
        noise.append(np.max(np.abs(u_stat_noise(data, pairs))))
    return DiagnosticSamples(template.n, template.p, h, np.array(grads), np.array(Us),
                             np.array(noise))


def perturbation_diagnostic(template: ScenarioSpec, replications: int, n_values=None,
                            base_seed: int = 0, h_policy="auto", kernel="box") -> list[dict]:
    """Sup-norms of the loss gradient and U-statistics at the truth, per ``n``.

    ``E U_k`` is estimated by the replication mean of ``U_k``. Each row also
    carries the reference rate ``h + sqrt(ln p / n)`` and the gradient's
    ratio to it.
    """
    out = []
    for n in (n_values or [template.n]):
        spec = ScenarioSpec(template.scenario_id, n, template.p, template.s)
        d = diagnostic_samples(spec, replications, base_seed, h_policy, kernel)
        rate = d.h + math.sqrt(math.log(d.p) / n)
        g = float(d.grad_sup.mean())
        out.append({"n": n, "p": d.p, "h": d.h, "grad_sup": g,
                    "u_g_centered_sup": float(d.u_centered_sup.mean()),
                    "u_noise_sup": float(d.noise_sup.mean()),
                    "rate": rate, "grad_ratio": g / rate})
    return out


ROW_FIELDS = [f.name for f in fields(BenchRow)]


def _cell(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return fmt(v)
    return str(v)


def write_csv(path, records: list[dict], columns=None) -> None:
    columns = columns or (list(records[0]) if records else [])
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for rec in records:
            w.writerow([_cell(rec[c]) for c in columns])


def write_rows(path, rows: list[BenchRow], timings: bool = False) -> None:
    cols = ROW_FIELDS if timings else [c for c in ROW_FIELDS if c != "runtime_seconds"]
    write_csv(path, [asdict(r) for r in rows], cols)


def read_rows(path) -> list[BenchRow]:
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        for rec in csv.DictReader(fh):
            out.append(BenchRow(
                int(rec["scenario_id"]), int(rec["n"]), int(rec["p"]), int(rec["s"]),
                rec["method"], int(rec["replication"]), int(rec["seed"]),
                float(rec["l2_error"]), int(rec["support_size"]),
                int(rec["true_positive_count"]), float(rec["lambda_used"]),
                float(rec["h_used"]), float(rec.get("runtime_seconds") or 0.0),
                rec["converged"] == "true", rec["error"]))
    return out


def run_plan(plan: ExperimentPlan, out_dir, threads: int = 1, timings: bool = False) -> dict:
    """Run every cell of ``plan`` and write its CSV files; returns the written paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = {}
    if plan.lambda_policy == "path-sweep":
        curves = []
        for template in plan.scenarios:
            for method in plan.methods:
                curves += path_sweep_curve(template, method, plan.replications, plan.base_seed,
                                           plan.h_policy, plan.kernel, plan.n_lambda,
                                           threads=threads)
        written["path_sweep"] = out_dir / "path_sweep.csv"
        write_csv(written["path_sweep"], curves)
    else:
        rows = []
        for template in plan.scenarios:
            for method in plan.methods:
                rows += run_cell(template, method, plan.replications, plan.base_seed,
                                 plan.lambda_policy, plan.h_policy, plan.kernel, plan.cv_policy,
                                 threads, plan.n_lambda)
        written["rows"] = out_dir / "rows.csv"
        written["aggregate"] = out_dir / "aggregate.csv"
        write_rows(written["rows"], rows, timings)
        write_csv(written["aggregate"], aggregate(rows))
    if plan.scaling_grid:
        g = dict(plan.scaling_grid)
        grid = scaling_grid(g["p_values"], g["n_values"], g.get("s", 10), g.get("scenario_id", 2),
                            g.get("replications", plan.replications), plan.base_seed,
                            plan.h_policy, plan.kernel, plan.cv_policy, threads)
        written["scaling_grid"] = out_dir / "scaling_grid.csv"
        write_csv(written["scaling_grid"], grid)
    return written
