import json

import numpy as np
import pytest

from otlm.cli import (BENCH_HEADER, EXIT_INPUT, EXIT_NOT_CONVERGED, EXIT_OK, FitReport, bench_rows, main,
                      read_columns, strip_timing, write_columns)
from otlm.costs import CostSpec, build_cost, build_kernel
from otlm.synth import SynthSpec, gen_scaling_problem

W0_OF_1 = 0.5671432904097838729999686622103555497538


@pytest.fixture
def demo_dir(tmp_path):
    out = tmp_path / "demo"
    assert main(["gen", "demo", "--seed", "0", "--out", str(out)]) == EXIT_OK
    return out


def write_tiny_problem(root, cost_value=1.0):
    """Three-point problem whose custom cost is ``cost_value`` everywhere."""
    root.mkdir(parents=True, exist_ok=True)
    x = np.array([0.0, 1.0, 2.0])
    write_columns(root / "dictionary.csv", ["x", "a"], [x, np.array([0.2, 0.5, 0.3])])
    write_columns(root / "target.csv", ["x", "y"], [x, np.array([0.3, 0.4, 0.3])])
    i, j = np.meshgrid(np.arange(3), np.arange(3), indexing="ij")
    write_columns(root / "cost.csv", ["i", "j", "cost"], [i.ravel(), j.ravel(), np.full(9, cost_value)])
    config = {"dictionary": "dictionary.csv", "target": "target.csv", "cost": {"kind": "custom", "path": "cost.csv"},
              "solver": {"epsilon": 1.0, "datafit": "equality"}}
    (root / "config.json").write_text(json.dumps(config))
    return root / "config.json"


class TestGen:
    def test_demo_files(self, demo_dir):
        header, data = read_columns(demo_dir / "dictionary.csv")
        assert len(header) == 4
        np.testing.assert_allclose(data[:, 1:].sum(axis=0), 1.0, rtol=1e-14)
        truth = json.loads((demo_dir / "truth.json").read_text())
        assert len(truth["weights"]) == 3
        for name in ("target.csv", "grid.csv", "config.json"):
            assert (demo_dir / name).is_file()

    def test_scaling_is_deterministic(self, tmp_path):
        for d in ("a", "b"):
            assert main(["gen", "scaling", "--n", "1000", "--seed", "7", "--out", str(tmp_path / d)]) == EXIT_OK
        for name in ("dictionary.csv", "target.csv", "grid.csv", "truth.json"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_scaling_truth_matches_regeneration(self, tmp_path):
        assert main(["gen", "scaling", "--n", "300", "--seed", "5", "--out", str(tmp_path)]) == EXIT_OK
        truth = json.loads((tmp_path / "truth.json").read_text())
        problem = gen_scaling_problem(SynthSpec(300, seed=5))
        np.testing.assert_array_equal(truth["weights"], problem.w_true)
        _, target = read_columns(tmp_path / "target.csv")
        np.testing.assert_array_equal(target[:, 1], problem.y.values)

    def test_rejects_more_atoms_than_samples(self, tmp_path):
        assert main(["gen", "scaling", "--n", "20", "--m", "30", "--out", str(tmp_path)]) == EXIT_INPUT


class TestFit:
    def test_demo_config_converges(self, demo_dir, capsys):
        assert main(["fit", "--config", str(demo_dir / "config.json")]) == EXIT_OK
        report = FitReport.from_json((demo_dir / "report.json").read_text())
        assert report.converged and len(report.weights) == 3
        assert report.final["source_residual"] <= 1e-9
        assert "converged" in capsys.readouterr().out

    def test_report_round_trip(self, demo_dir):
        main(["fit", "--config", str(demo_dir / "config.json")])
        text = (demo_dir / "report.json").read_text()
        assert FitReport.from_json(text).to_json() == text

    def test_repeat_runs_identical(self, demo_dir, tmp_path):
        reports = []
        for d in ("r1", "r2"):
            main(["fit", "--config", str(demo_dir / "config.json"), "--out", str(tmp_path / d)])
            reports.append(json.loads((tmp_path / d / "report.json").read_text()))
        assert json.dumps(strip_timing(reports[0]), sort_keys=True) == json.dumps(strip_timing(reports[1]),
                                                                                   sort_keys=True)

    def test_not_converged_still_writes_report(self, demo_dir, tmp_path):
        rc = main(["fit", "--config", str(demo_dir / "config.json"), "--max-iters", "5", "--out", str(tmp_path)])
        assert rc == EXIT_NOT_CONVERGED
        report = json.loads((tmp_path / "report.json").read_text())
        assert report["converged"] is False and report["iterations"] == 5

    def test_overrides_are_echoed(self, demo_dir, tmp_path):
        main(["fit", "--config", str(demo_dir / "config.json"), "--epsilon", "0.002", "--lambda", "2",
              "--out", str(tmp_path)])
        solver = json.loads((tmp_path / "report.json").read_text())["config"]["solver"]
        assert solver["epsilon"] == 0.002 and solver["lambda"] == 2.0

    def test_emit_plan_top_k(self, demo_dir, tmp_path):
        main(["fit", "--config", str(demo_dir / "config.json"), "--emit-plan", "3", "--out", str(tmp_path)])
        report = json.loads((tmp_path / "report.json").read_text())
        assert all(len(r["values"]) <= 3 for r in report["plan"]["rows"])
        m = report["marginals"]
        assert np.abs(np.subtract(m["source"], m["model"])).sum() / np.sum(m["model"]) <= 1e-9

    def test_missing_dictionary(self, demo_dir, capsys):
        (demo_dir / "dictionary.csv").unlink()
        assert main(["fit", "--config", str(demo_dir / "config.json")]) == EXIT_INPUT
        assert "dictionary.csv" in capsys.readouterr().err

    def test_missing_config(self, tmp_path, capsys):
        assert main(["fit", "--config", str(tmp_path / "nope.json")]) == EXIT_INPUT
        assert "nope.json" in capsys.readouterr().err

    def test_malformed_json(self, tmp_path, capsys):
        (tmp_path / "config.json").write_text("{not json")
        assert main(["fit", "--config", str(tmp_path / "config.json")]) == EXIT_INPUT
        assert "malformed" in capsys.readouterr().err

    def test_row_count_mismatch(self, tmp_path, capsys):
        cfg = write_tiny_problem(tmp_path)
        write_columns(tmp_path / "target.csv", ["x", "y"], [np.arange(2.0), np.ones(2)])
        assert main(["fit", "--config", str(cfg)]) == EXIT_INPUT
        assert "rows" in capsys.readouterr().err

    def test_tiny_custom_problem(self, tmp_path):
        cfg = write_tiny_problem(tmp_path)
        assert main(["fit", "--config", str(cfg)]) == EXIT_OK
        report = json.loads((tmp_path / "report.json").read_text())
        assert report["weights"]["a"] == pytest.approx(1.0, rel=1e-9)

    def test_infeasible_kernel(self, tmp_path, capsys):
        cfg = write_tiny_problem(tmp_path)
        assert main(["fit", "--config", str(cfg), "--epsilon", "1e-9"]) == EXIT_INPUT
        assert "epsilon" in capsys.readouterr().err

    def test_invalid_solver_value(self, demo_dir, capsys):
        assert main(["fit", "--config", str(demo_dir / "config.json"), "--epsilon", "-1"]) == EXIT_INPUT
        assert "epsilon" in capsys.readouterr().err

    def test_thread_cap(self, demo_dir, tmp_path, monkeypatch):
        monkeypatch.setenv("OTLM_THREADS", "1")
        assert main(["fit", "--config", str(demo_dir / "config.json"), "--out", str(tmp_path)]) == EXIT_OK
        monkeypatch.setenv("OTLM_THREADS", "many")
        assert main(["fit", "--config", str(demo_dir / "config.json"), "--out", str(tmp_path)]) == EXIT_INPUT


class TestDemoAndBench:
    def test_demo_prints_comparison(self, capsys, tmp_path):
        assert main(["demo", "--seed", "1", "--out", str(tmp_path)]) == EXIT_OK
        out = capsys.readouterr().out
        assert "transport model" in out and "per-sample fit" in out
        assert (tmp_path / "report.json").is_file()

    def test_bench_rows(self, tmp_path, capsys):
        out = tmp_path / "bench.csv"
        assert main(["bench", "--sizes", "100,200", "--repeats", "2", "--max-iters", "20", "--out", str(out)]) == 0
        header, data = read_columns(out)
        assert tuple(header) == BENCH_HEADER
        assert data.shape == (2, 6)
        np.testing.assert_array_equal(data[:, 3], [20, 20])
        for n, nnz in zip(data[:, 0], data[:, 2]):
            grid = np.arange(float(n))
            K = build_kernel(build_cost(CostSpec(grid=grid, rho=0.01, dx_max=10.0)), 1e-3)
            assert nnz == K.nnz

    def test_bench_shape(self):
        rows = bench_rows([100, 200, 300, 400], repeats=1, iters=5)
        assert [r[0] for r in rows] == [100, 200, 300, 400]
        assert all(r[3] == 5 for r in rows)

    def test_bench_rejects_unsorted_sizes(self):
        assert main(["bench", "--sizes", "800,400"]) == EXIT_INPUT


class TestProx:
    def run(self, capsys, *argv):
        assert main(["prox", *argv]) == EXIT_OK
        lines = capsys.readouterr().out.strip().splitlines()
        assert lines[0] == "s,y,prox,oracle"
        return np.array([[float(v) for v in line.split(",")] for line in lines[1:]])

    def test_equality(self, capsys):
        rows = self.run(capsys, "equality", "--s", "3,4", "--y", "1.5,2")
        np.testing.assert_array_equal(rows[:, 2], [1.5, 2.0])

    def test_l2_omega_constant(self, capsys):
        rows = self.run(capsys, "l2", "--s", "1", "--y", "0", "--lambda", "1", "--epsilon", "1")
        assert rows[0, 2] == pytest.approx(W0_OF_1, rel=1e-15)
        assert rows[0, 3] == pytest.approx(W0_OF_1, rel=1e-14)

    def test_poisson_fixed_point(self, capsys):
        rows = self.run(capsys, "poisson", "--s", "2.5", "--y", "2.5", "--lambda", "3")
        assert rows[0, 2] == pytest.approx(2.5, rel=1e-14)

    def test_invalid_datafit(self, capsys):
        assert main(["prox", "huber", "--s", "1", "--y", "1"]) == EXIT_INPUT
        assert "huber" in capsys.readouterr().err

    def test_usage_error_exit_code(self):
        with pytest.raises(SystemExit) as exc:
            main(["prox"])
        assert exc.value.code == EXIT_INPUT
