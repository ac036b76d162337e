from __future__ import annotations

import json
import math

import numpy as np
import pytest

from pairdiff.bench import ExperimentPlan, aggregate, diagnostic_samples, \
    dominance_fraction, path_sweep_curve, perturbation_diagnostic, read_rows, replication_seed, \
    run_cell, run_plan, scaling_grid, write_rows
from pairdiff.core import Dataset, build_pairs, gradient
from pairdiff.errors import DataError
from pairdiff.simulate import ScenarioSpec, generate
from pairdiff.solver import FitConfig, pair_design, solve_design

SMALL = ScenarioSpec(1, 80, 30, 5)


@pytest.fixture(scope="module")
def rows():
    out = []
    for method in ("prd", "projection", "bspline"):
        out += run_cell(SMALL, method, 4, base_seed=3)
    return out


class TestSeeds:
    def test_replication_seed(self):
        assert replication_seed(0, 0) == replication_seed(0, 0)
        seeds = {replication_seed(b, r) for b in range(5) for r in range(50)}
        assert len(seeds) == 250


class TestRunCell:
    def test_rows(self, rows):
        assert len(rows) == 12
        assert {r.method for r in rows} == {"prd", "projection", "bspline"}
        for r in rows:
            assert not r.error and r.converged
            assert r.seed == replication_seed(3, r.replication)
            assert 0 <= r.true_positive_count <= min(r.support_size, 5)
            assert r.runtime_seconds > 0

    def test_same_data_across_methods(self, rows):
        by = {}
        for r in rows:
            by.setdefault(r.replication, set()).add(r.seed)
        assert all(len(s) == 1 for s in by.values())

    def test_deterministic(self):
        a = run_cell(SMALL, "prd", 1, base_seed=11)
        b = run_cell(SMALL, "prd", 1, base_seed=11)
        a[0].runtime_seconds = b[0].runtime_seconds = 0.0
        assert a == b

    def test_parallel_matches_serial(self):
        a = run_cell(SMALL, "prd", 3, base_seed=2, threads=1)
        b = run_cell(SMALL, "prd", 3, base_seed=2, threads=2)
        for x, y in zip(a, b):
            x.runtime_seconds = y.runtime_seconds = 0.0
        assert a == b

    def test_errors_recorded_not_raised(self):
        # bandwidth far too small for any pair
        out = run_cell(ScenarioSpec(1, 20, 10, 2), "prd", 2, h_policy=1e-9)
        assert all("no active pairs" in r.error for r in out)
        assert all(math.isnan(r.l2_error) for r in out)
        agg = aggregate(out)[0]
        assert agg["failures"] == 2 and math.isnan(agg["mean_l2_error"])

    def test_zero_truth_at_lambda_max(self):
        spec = ScenarioSpec(1, 60, 10, 0)
        rows = run_cell(spec, "prd", 2, lambda_policy="max")
        for r in rows:
            assert r.l2_error == 0.0 and r.support_size == 0

    def test_noiseless_zero_truth(self, rng):
        X = rng.standard_normal((50, 8))
        W = rng.uniform(-0.5, 0.5, 50)
        d = Dataset(X, np.exp(W), W, beta_star=np.zeros(8), g_values=np.exp(W))
        design = pair_design(d, build_pairs(d, 0.4))
        fit = solve_design(design, design.lambda_max(), FitConfig())
        assert np.linalg.norm(fit.beta_hat - d.beta_star) == 0.0

    def test_bad_policy(self):
        with pytest.raises(DataError):
            run_cell(SMALL, "prd", 1, lambda_policy="path-sweep")


class TestAggregate:
    def test_recompute(self, rows):
        agg = aggregate(rows)
        assert len(agg) == 3
        for a in agg:
            e = np.array([r.l2_error for r in rows if r.method == a["method"]])
            assert a["mean_l2_error"] == pytest.approx(e.mean(), rel=1e-12)
            assert a["se_l2_error"] == pytest.approx(e.std(ddof=1) / math.sqrt(e.size), rel=1e-12)
            assert a["nonconverged_rate"] == 0.0

    def test_csv_round_trip(self, rows, tmp_path):
        write_rows(tmp_path / "rows.csv", rows, timings=True)
        back = read_rows(tmp_path / "rows.csv")
        for a, b in zip(back, rows):
            for k, v in vars(b).items():
                assert getattr(a, k) == v or (math.isnan(v) and math.isnan(getattr(a, k)))
        assert aggregate(back) == aggregate(rows)

    def test_csv_without_timings(self, rows, tmp_path):
        write_rows(tmp_path / "rows.csv", rows)
        header = (tmp_path / "rows.csv").read_text().splitlines()[0]
        assert "runtime_seconds" not in header
        assert all(r.runtime_seconds == 0.0 for r in read_rows(tmp_path / "rows.csv"))


class TestPathSweep:
    def test_first_point_is_zero_fit(self):
        curve = path_sweep_curve(ScenarioSpec(2, 80, 30, 5), "prd", 3, n_lambda=15)
        assert len(curve) == 15
        assert curve[0]["mean_support_size"] == 0
        beta_norm = np.linalg.norm(generate(ScenarioSpec(2, 80, 30, 5)).beta_star)
        assert curve[0]["mean_l2_error"] == pytest.approx(beta_norm, rel=1e-12)
        assert curve[0]["lambda_ratio"] == 1.0

    def test_baselines_supported(self):
        for m in ("projection", "bspline"):
            curve = path_sweep_curve(ScenarioSpec(2, 80, 30, 5), m, 2, n_lambda=10)
            assert curve[0]["mean_support_size"] == 0

    def test_dominance_fraction(self):
        a = [{"mean_support_size": x, "mean_l2_error": 1.0} for x in (0, 1, 2, 3)]
        b = [{"mean_support_size": x, "mean_l2_error": 2.0 - x} for x in (0, 1, 2)]
        # a beats b at 0 (2.0) only; at 1 tie; at 2 loses; 3 is out of range
        assert dominance_fraction(a, b) == pytest.approx(1 / 3)


class TestScaling:
    def test_grid_shape(self):
        out = scaling_grid([20, 40], [50, 80], s=3, replications=2)
        assert [(r["p"], r["n"]) for r in out] == [(20, 50), (20, 80), (40, 50), (40, 80)]
        assert all(r["failures"] == 0 for r in out)


class TestDiagnostic:
    def test_columns(self):
        out = perturbation_diagnostic(ScenarioSpec(1, 60, 20, 5), 3, n_values=[60, 120])
        assert [r["n"] for r in out] == [60, 120]
        assert list(out[0]) == ["n", "p", "h", "grad_sup", "u_g_centered_sup", "u_noise_sup",
                                "rate", "grad_ratio"]
        r = out[0]
        assert r["rate"] == pytest.approx(r["h"] + math.sqrt(math.log(20) / 60))
        assert r["grad_ratio"] == pytest.approx(r["grad_sup"] / r["rate"])

    def test_samples_consistent(self):
        s = diagnostic_samples(ScenarioSpec(1, 60, 20, 5), 3)
        data = generate(ScenarioSpec(1, 60, 20, 5, seed=replication_seed(0, 0)))
        g = gradient(data, build_pairs(data, s.h), data.beta_star)
        assert s.grad_sup[0] == pytest.approx(np.abs(g).max(), rel=1e-12)
        assert s.U.shape == (3, 20)

    def test_noiseless_constant_g(self, rng):
        X = rng.standard_normal((40, 6))
        W = rng.uniform(-0.5, 0.5, 40)
        b = rng.standard_normal(6)
        d = Dataset(X, X @ b + 1.5, W, beta_star=b, g_values=np.full(40, 1.5))
        assert np.abs(gradient(d, build_pairs(d, 0.4), b)).max() < 1e-10


class TestPlan:
    def test_from_json(self, tmp_path):
        path = tmp_path / "plan.json"
        path.write_text(json.dumps({"scenarios": [{"scenario_id": 1, "n": 40, "p": 10, "s": 2}],
                                    "methods": ["prd", "bspline"], "replications": 2}))
        plan = ExperimentPlan.from_json(path)
        assert plan.scenarios[0] == ScenarioSpec(1, 40, 10, 2)
        out = run_plan(plan, tmp_path / "out")
        assert set(out) == {"rows", "aggregate"}
        assert len(read_rows(out["rows"])) == 4

    @pytest.mark.parametrize("raw", ['{"scenarios": []', '{"scenarios": [], "methods": ["x"]}',
                                     '{"scenarios": [], "replications": 0}',
                                     '{"scenarios": [], "lambda_policy": "bic"}'])
    def test_invalid(self, tmp_path, raw):
        path = tmp_path / "plan.json"
        path.write_text(raw)
        with pytest.raises(DataError):
            ExperimentPlan.from_json(path)

    def test_path_sweep_plan(self, tmp_path):
        plan = ExperimentPlan([ScenarioSpec(2, 60, 15, 3)], ["prd"], 2,
                              lambda_policy="path-sweep", n_lambda=8)
        out = run_plan(plan, tmp_path)
        lines = out["path_sweep"].read_text().splitlines()
        assert len(lines) == 9


@pytest.mark.slow
class TestPathSweepMonteCarlo:
    def test_prd_below_projection_scenario2(self):
        spec = ScenarioSpec(2, 200, 1024, 10)
        prd = path_sweep_curve(spec, "prd", 20, base_seed=5)
        proj = path_sweep_curve(spec, "projection", 20, base_seed=5)
        assert dominance_fraction(prd, proj) >= 0.8

    def test_doubling_replications_stable(self):
        spec = ScenarioSpec(1, 100, 60, 5)
        a = path_sweep_curve(spec, "prd", 10, base_seed=1, n_lambda=30)
        b = path_sweep_curve(spec, "prd", 20, base_seed=1, n_lambda=30)
        for x, y in zip(a[1:], b[1:]):
            assert abs(x["mean_l2_error"] - y["mean_l2_error"]) < 3 * y["se_l2_error"]
