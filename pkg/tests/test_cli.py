import os
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from wide.cli import (
    EXIT_CONFIG, EXIT_DIAGNOSTIC, EXIT_OK, ExperimentConfig, emit_table, load_table,
    load_trajectory, main,
)
from wide.errors import ConfigError

CONFIGS = Path(__file__).resolve().parents[1] / "scripts" / "configs"

LINEAR = """\
# u' + u = 0
mode = run
epsilon = 1e-3
problem.energy = quadratic
problem.energy.Lambda = 1
problem.dissipation = quadratic
problem.dissipation.nu = 1
problem.u0 = 1
problem.T = 1
problem.N = 1000
"""


def write_cfg(tmp_path, text, name="exp.cfg"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


class TestRun:
    def test_linear_run(self, tmp_path):
        out = tmp_path / "out"
        assert main(["--config", write_cfg(tmp_path, LINEAR), "--out", str(out)]) == EXIT_OK
        cols, rows = load_table(out / "trajectory.csv")
        assert cols == ["t", "u_1"] and len(rows) == 1001
        t, U = load_trajectory(out / "trajectory.csv")
        assert t[-1] == 1.0 and U[0, 0] == 1.0
        assert np.abs(U[:, 0] - np.exp(-t)).max() < 5e-3
        report = dict(load_table(out / "report.csv")[1])
        assert report["solver"] == "BandedDirect" and report["converged"] == "1"

    def test_inertia_without_velocity(self, tmp_path, capsys):
        cfg = write_cfg(tmp_path, LINEAR + "problem.rho = 1\n")
        assert main(["--config", cfg, "--out", str(tmp_path / "o")]) == EXIT_CONFIG
        assert "config error" in capsys.readouterr().err

    def test_check_mode(self, tmp_path):
        out = tmp_path / "out"
        assert main(["--config", write_cfg(tmp_path, LINEAR), "--mode", "check",
                     "--out", str(out)]) == EXIT_OK
        names = [r[0] for r in load_table(out / "diagnostics.csv")[1]]
        assert "final_condition_1" in names and "el_residual" in names

    def test_check_failure_exit_code(self, tmp_path):
        # a loose solver tolerance leaves a visible Euler-Lagrange residual
        text = LINEAR.replace("problem.energy = quadratic", "problem.energy = power") \
            .replace("problem.energy.Lambda = 1", "problem.energy.q = 4") + "solver.tol = 1e-2\n"
        rc = main(["--config", write_cfg(tmp_path, text), "--mode", "check",
                   "--out", str(tmp_path / "o")])
        assert rc == EXIT_DIAGNOSTIC

    def test_missing_file(self, tmp_path):
        assert main(["--config", str(tmp_path / "nope.cfg")]) == EXIT_CONFIG

    def test_unknown_key_exit(self, tmp_path):
        cfg = write_cfg(tmp_path, LINEAR + "solver.magic = 3\n")
        assert main(["--config", cfg, "--out", str(tmp_path / "o")]) == EXIT_CONFIG

    @pytest.mark.parametrize("name", sorted(p.name for p in CONFIGS.glob("*.cfg")))
    def test_shipped_configs(self, name, tmp_path):
        assert main(["--config", str(CONFIGS / name), "--out", str(tmp_path)]) == EXIT_OK
        assert (tmp_path / "report.csv").exists()

    def test_sweep_report(self, tmp_path):
        main(["--config", str(CONFIGS / "linear_sweep.cfg"), "--out", str(tmp_path)])
        report = dict(load_table(tmp_path / "report.csv")[1])
        assert float(report["fitted_exponent"]) == pytest.approx(1.0, abs=0.05)
        assert len(load_table(tmp_path / "sweep.csv")[1]) == 4

    def test_reruns_identical(self, tmp_path):
        cfg = write_cfg(tmp_path, LINEAR)
        for d in ("a", "b"):
            main(["--config", cfg, "--out", str(tmp_path / d)])
        for f in ("trajectory.csv", "report.csv"):
            assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()

    def test_module_entry_point(self, tmp_path):
        proc = subprocess.run([sys.executable, "-m", "wide.cli", "--config", write_cfg(tmp_path, LINEAR),
                               "--out", str(tmp_path / "o")], capture_output=True,
                              env={**os.environ, "WIDE_WORKERS": "1"})
        assert proc.returncode == 0


class TestConfig:
    def test_parse(self):
        cfg = ExperimentConfig.parse(LINEAR + "problem.energy.Lambda = 2, 0.5; 0.5, 1\n"
                                     "epsilons = 1e-1, 1e-2\n")
        assert cfg.get("epsilon") == 1e-3
        assert cfg.get("problem.N") == 1000
        assert cfg.get("problem.energy.Lambda") == [[2.0, 0.5], [0.5, 1.0]]
        assert cfg.get("epsilons") == [0.1, 0.01]
        assert cfg.params("problem.energy.") == {"Lambda": [[2.0, 0.5], [0.5, 1.0]]}

    @pytest.mark.parametrize("text", ["bogus = 1", "problem.N = ten", "just words"])
    def test_rejected(self, text):
        with pytest.raises(ConfigError):
            ExperimentConfig.parse(text)

    def test_require(self):
        with pytest.raises(ConfigError):
            ExperimentConfig.parse("mode = run").require("epsilon")


class TestTables:
    def test_two_by_two(self, tmp_path):
        p = tmp_path / "t.csv"
        emit_table([{"a": 1, "b": 0.5}, {"a": 2, "b": 0.25}], p)
        assert p.read_text().splitlines() == ["a,b", "1,0.5", "2,0.25"]

    def test_empty(self, tmp_path):
        p = tmp_path / "t.csv"
        emit_table([], p, ["x", "y"])
        assert p.read_text() == "x,y\n"
        with pytest.raises(ConfigError):
            emit_table([], p)

    def test_ragged(self, tmp_path):
        with pytest.raises(ConfigError):
            emit_table([[1, 2, 3]], tmp_path / "t.csv", ["a", "b"])

    def test_byte_identical(self, tmp_path):
        rows = [{"x": np.float64(1) / 3, "ok": True, "n": np.int64(7)}]
        emit_table(rows, tmp_path / "a.csv")
        emit_table(rows, tmp_path / "b.csv")
        assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
        assert (tmp_path / "a.csv").read_text().splitlines()[1] == "0.33333333333333331,1,7"

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.floats(allow_nan=False, allow_infinity=False), min_size=1, max_size=20))
    def test_float_round_trip(self, tmp_path_factory, xs):
        p = tmp_path_factory.mktemp("rt") / "t.csv"
        emit_table([[i, x] for i, x in enumerate(xs)], p, ["t", "u_1"])
        t, U = load_trajectory(p)
        assert U[:, 0].tolist() == xs
        np.testing.assert_array_equal(t, np.arange(len(xs)))
