from __future__ import annotations

import csv
import json

import numpy as np
import pytest

from pairdiff.cli import main, standardized_residuals
from pairdiff.core import Dataset, build_pairs, loss
from pairdiff.io import load_model, model_beta, read_data_csv, read_truth_csv, truth_path, \
    write_data_csv, write_truth_csv
from pairdiff.simulate import ScenarioSpec, generate


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    return code, capsys.readouterr()


@pytest.fixture
def sim_file(tmp_path, capsys):
    path = tmp_path / "data.csv"
    code, _ = run(capsys, "simulate", "--scenario", 1, "--n", 120, "--p", 30, "--s", 5,
                  "--seed", 4, "--out", path)
    assert code == 0
    return path


class TestSimulate:
    def test_shape(self, tmp_path, capsys):
        path = tmp_path / "d.csv"
        code, _ = run(capsys, "simulate", "--scenario", 3, "--n", 100, "--p", 20, "--s", 5,
                      "--seed", 1, "--out", path)
        assert code == 0
        rows = list(csv.reader(path.open()))
        assert len(rows) == 101 and all(len(r) == 22 for r in rows)
        assert rows[0][:3] == ["y", "w", "x1"]
        beta, g = read_truth_csv(truth_path(path))
        assert beta.shape == (20,) and g.shape == (100,)

    def test_round_trip_exact(self, tmp_path):
        d = generate(ScenarioSpec(4, 30, 6, 2, seed=8))
        write_data_csv(tmp_path / "d.csv", d)
        write_truth_csv(tmp_path / "d.truth.csv", d)
        back = read_data_csv(tmp_path / "d.csv")
        for f in ("X", "Y", "W"):
            assert np.array_equal(getattr(back, f), getattr(d, f))
        beta, g = read_truth_csv(tmp_path / "d.truth.csv")
        assert np.array_equal(beta, d.beta_star) and np.array_equal(g, d.g_values)

    def test_out_dir_default(self, tmp_path, capsys):
        code, _ = run(capsys, "--out-dir", tmp_path, "simulate", "--scenario", 2, "--n", 10,
                      "--p", 3, "--s", 1)
        assert code == 0 and (tmp_path / "data.csv").exists()


class TestFit:
    def test_summary_and_model(self, sim_file, tmp_path, capsys):
        out = tmp_path / "m.json"
        code, cap = run(capsys, "fit", sim_file, "--out", out, "--top-k", 3)
        assert code == 0
        for key in ("h ", "lambda", "support", "objective", "kkt"):
            assert key in cap.out
        model = load_model(out)
        assert {"method", "h", "lambda", "beta", "p", "n", "kernel", "timestamp",
                "config"} <= set(model)
        idx = [k for k, _ in model["beta"]]
        assert idx == sorted(idx) and idx[0] >= 1

    def test_huge_lambda(self, sim_file, tmp_path, capsys):
        code, cap = run(capsys, "fit", sim_file, "--lambda", "1e9", "--out", tmp_path / "m.json")
        assert code == 0
        assert load_model(tmp_path / "m.json")["beta"] == []
        assert "support     0" in cap.out

    def test_loss_round_trip(self, sim_file, tmp_path, capsys):
        out = tmp_path / "m.json"
        run(capsys, "fit", sim_file, "--h", 0.4, "--lambda", 0.2, "--out", out)
        model = load_model(out)
        d = read_data_csv(sim_file)
        ps = build_pairs(d, model["h"])
        beta = model_beta(model)
        obj = loss(d, ps, beta) + model["lambda"] * np.abs(beta).sum()
        assert obj == pytest.approx(model["objective"], rel=1e-12)

    @pytest.mark.parametrize("method", ["projection", "bspline"])
    def test_baseline_methods(self, sim_file, tmp_path, capsys, method):
        code, cap = run(capsys, "fit", sim_file, "--method", method, "--out", tmp_path / "m.json")
        assert code == 0
        assert load_model(tmp_path / "m.json")["method"] == method

    def test_log_y(self, tmp_path, capsys):
        d = generate(ScenarioSpec(1, 60, 5, 2, seed=1))
        pos = Dataset(d.X, np.exp(d.Y / 10), d.W)
        write_data_csv(tmp_path / "d.csv", pos)
        code, _ = run(capsys, "fit", tmp_path / "d.csv", "--log-y", "--out", tmp_path / "m.json")
        assert code == 0
        neg = Dataset(d.X, -np.ones(60), d.W)
        write_data_csv(tmp_path / "n.csv", neg)
        code, cap = run(capsys, "fit", tmp_path / "n.csv", "--log-y")
        assert code == 2 and "positive" in cap.err

    def test_identical_outputs(self, sim_file, tmp_path, capsys):
        for name in ("a.json", "b.json"):
            run(capsys, "--threads", 1, "fit", sim_file, "--out", tmp_path / name)
        assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()

    @pytest.mark.slow
    def test_screening_strong_signals(self, tmp_path, capsys):
        hits = 0
        for seed in range(50):
            path = tmp_path / "d.csv"
            run(capsys, "simulate", "--scenario", 1, "--n", 200, "--p", 100, "--s", 10,
                "--seed", seed, "--out", path)
            run(capsys, "fit", path, "--seed", seed, "--out", tmp_path / "m.json")
            beta_star, _ = read_truth_csv(truth_path(path))
            support = {k for k, _ in load_model(tmp_path / "m.json")["beta"]}
            strong = {k + 1 for k in np.flatnonzero(np.abs(beta_star) >= 1)}
            hits += strong <= support
        assert hits >= 48


class TestErrors:
    def test_usage(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["fit"])
        assert exc.value.code == 1
        with pytest.raises(SystemExit) as exc:
            main(["nosuchcommand"])
        assert exc.value.code == 1

    def test_missing_file(self, tmp_path, capsys):
        code, cap = run(capsys, "fit", tmp_path / "nope.csv")
        assert code == 2 and "cannot read" in cap.err

    @pytest.mark.parametrize("body,where", [
        ("y,w,x1\n1,0,1\n2,0.1,oops\n", "line 3, column 3"),
        ("y,w,x1\n1,0,1\n2,0.1\n", "line 3"),
        ("y,x1,w\n1,0,1\n", "line 1"),
        ("", "empty"),
    ])
    def test_malformed_csv(self, tmp_path, capsys, body, where):
        path = tmp_path / "bad.csv"
        path.write_text(body)
        code, cap = run(capsys, "fit", path)
        assert code == 2 and where in cap.err

    def test_no_active_pairs(self, sim_file, capsys):
        code, cap = run(capsys, "fit", sim_file, "--h", "1e-9")
        assert code == 3 and "increase the bandwidth" in cap.err

    def test_threads_env(self, tmp_path, capsys, monkeypatch):
        plan = tmp_path / "plan.json"
        plan.write_text(json.dumps({"scenarios": [{"scenario_id": 1, "n": 40, "p": 8, "s": 2}],
                                    "replications": 1}))
        monkeypatch.setenv("PAIRDIFF_THREADS", "zero")
        code, cap = run(capsys, "bench", "--plan", plan, "--out-dir", tmp_path)
        assert code == 1 and "PAIRDIFF_THREADS" in cap.err

    def test_model_dimension_mismatch(self, sim_file, tmp_path, capsys):
        model = tmp_path / "m.json"
        model.write_text(json.dumps({"p": 3, "beta": [[1, 1.0]]}))
        code, cap = run(capsys, "gcurve", sim_file, model)
        assert code == 2 and "dimension mismatch" in cap.err


class TestGCurve:
    def write_model(self, path, beta):
        nz = [[int(k) + 1, float(beta[k])] for k in np.flatnonzero(beta)]
        path.write_text(json.dumps({"p": len(beta), "beta": nz}))

    def curve(self, path):
        with open(path) as fh:
            rows = list(csv.DictReader(fh))
        return np.array([float(r["w"]) for r in rows]), np.array([float(r["residual"]) for r in rows])

    def test_zero_residuals(self, tmp_path, capsys):
        r = np.random.default_rng(0)
        X = r.standard_normal((80, 4))
        beta = np.array([1.0, 0, -2.0, 0.5])
        W = r.uniform(-0.5, 0.5, 80)
        write_data_csv(tmp_path / "d.csv", Dataset(X, X @ beta, W))
        self.write_model(tmp_path / "m.json", beta)
        code, _ = run(capsys, "gcurve", tmp_path / "d.csv", tmp_path / "m.json",
                      "--out", tmp_path / "g.csv")
        assert code == 0
        _, c = self.curve(tmp_path / "g.csv")
        assert np.nanmax(np.abs(c)) <= 1e-10

    def test_jump_in_scenario2(self, tmp_path, capsys):
        d = generate(ScenarioSpec(2, 400, 10, 5, seed=2))
        write_data_csv(tmp_path / "d.csv", d)
        self.write_model(tmp_path / "m.json", d.beta_star)
        run(capsys, "gcurve", tmp_path / "d.csv", tmp_path / "m.json", "--bandwidth", 0.05,
            "--out", tmp_path / "g.csv")
        w, c = self.curve(tmp_path / "g.csv")
        right = c[(w > 0) & (w <= 0.1)].mean()
        left = c[(w >= -0.1) & (w <= 0)].mean()
        assert right - left > 0

    def test_single_point(self, tmp_path, capsys):
        d = generate(ScenarioSpec(1, 100, 5, 2, seed=3))
        write_data_csv(tmp_path / "d.csv", d)
        self.write_model(tmp_path / "m.json", np.zeros(5))
        run(capsys, "gcurve", tmp_path / "d.csv", tmp_path / "m.json", "--grid-size", 1,
            "--bandwidth", 10.0, "--out", tmp_path / "g.csv")
        w, c = self.curve(tmp_path / "g.csv")
        assert w.shape == (1,)
        assert w[0] == pytest.approx(0.5 * (d.W.min() + d.W.max()))
        # a window covering every point gives the plain mean, which is 0
        assert c[0] == pytest.approx(standardized_residuals(d.Y).mean(), abs=1e-12)


class TestBenchDiagnose:
    def test_bench_byte_identical(self, tmp_path, capsys):
        plan = tmp_path / "plan.json"
        plan.write_text(json.dumps({"scenarios": [{"scenario_id": 1, "n": 60, "p": 20, "s": 3}],
                                    "methods": ["prd", "projection", "bspline"],
                                    "replications": 5}))
        for sub, threads in (("a", 1), ("b", 2)):
            code, _ = run(capsys, "bench", "--plan", plan, "--reps", 1, "--seed", 7,
                          "--threads", threads, "--out-dir", tmp_path / sub)
            assert code == 0
        for name in ("rows.csv", "aggregate.csv"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_diagnose_schema(self, tmp_path, capsys):
        code, _ = run(capsys, "diagnose", "--n", "60,120", "--p", 20, "--reps", 2,
                      "--out-dir", tmp_path)
        assert code == 0
        header = (tmp_path / "diagnostic.csv").read_text().splitlines()[0]
        assert header == "n,p,h,grad_sup,u_g_centered_sup,u_noise_sup,rate,grad_ratio"
