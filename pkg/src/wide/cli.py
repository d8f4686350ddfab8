"""Command-line experiment runner.

Configs are flat ``key = value`` text files; ``#`` starts a comment and
nested settings use dotted keys::

    mode = run
    epsilon = 1e-3
    problem.energy = quadratic
    problem.energy.Lambda = 1
    problem.dissipation = quadratic
    problem.dissipation.nu = 1
    problem.u0 = 1
    problem.T = 1
    problem.N = 1000

Vectors are comma separated; matrices separate rows with ``;``. Exit codes:
0 success, 2 solver failure, 3 bad configuration, 4 failed diagnostics
(``check`` mode). The worker count for sweeps comes from ``WIDE_WORKERS``.
"""
from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import causal, diagnostics, oracles, pde
from .errors import ConfigError, ProblemError, SolveError, SolveFailed, WideError
from .minimizers import minimize
from .problem import DissipationModel, TimeGrid, WideProblem, builtin_energy, weights_for

log = logging.getLogger("wide")

MODES = ("run", "sweep", "pde", "check", "oracle")

EXIT_OK, EXIT_SOLVE, EXIT_CONFIG, EXIT_DIAGNOSTIC = 0, 2, 3, 4

# fixed keys and their parsers; parametrized families are listed in _PREFIXES
_KEYS = {
    "mode": str, "epsilon": float, "epsilons": "floats", "tau_rule": str, "norm": str,
    "reference": str, "seed": int, "output": str,
    "problem.energy": str, "problem.forcing_slope": float, "problem.rho": float,
    "problem.dissipation": str, "problem.dissipation.nu": float,
    "problem.dissipation.p": float, "problem.dissipation.coeff": float,
    "problem.dissipation.alpha": float, "problem.u0": "floats", "problem.u1": "floats",
    "problem.T": float, "problem.N": int, "problem.tau": float, "problem.mass": float,
    "pde.kind": str, "pde.L": float, "pde.M": int, "pde.nonlinearity": str, "pde.nu": float,
    "pde.zeta": float, "pde.profile": str, "pde.velocity_profile": str,
    "solver.tol": float, "solver.max_iter": int,
}
_PREFIXES = ("problem.energy.", "reference.", "pde.profile.")


def _parse_value(raw: str, kind):
    try:
        if kind == "floats":
            return [float(x) for x in raw.replace(" ", "").split(",") if x]
        return kind(raw)
    except ValueError as exc:
        raise ConfigError(f"cannot parse {raw!r}: {exc}") from exc


def _parse_param(raw: str):
    """Free-form parameter: number, vector, matrix (``;`` rows) or word."""
    if ";" in raw:
        try:
            return [[float(x) for x in row.split(",") if x.strip()] for row in raw.split(";")]
        except ValueError as exc:
            raise ConfigError(f"bad matrix {raw!r}") from exc
    parts = [p.strip() for p in raw.split(",")]
    try:
        vals = [float(p) for p in parts]
    except ValueError:
        return raw
    if len(vals) == 1:
        v = vals[0]
        return int(v) if v.is_integer() and "." not in raw and "e" not in raw.lower() else v
    return vals


@dataclass
class ExperimentConfig:
    values: dict = field(default_factory=dict)

    @classmethod
    def parse(cls, text: str) -> "ExperimentConfig":
        values = {}
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"line {lineno}: expected key = value")
            key, raw = (s.strip() for s in line.split("=", 1))
            values[key] = cls._convert(key, raw)
        return cls(values)

    @staticmethod
    def _convert(key, raw):
        if key in _KEYS:
            return _parse_value(raw, _KEYS[key])
        if key.startswith(_PREFIXES):
            return _parse_param(raw)
        raise ConfigError(f"unknown key {key!r}")

    @classmethod
    def load(cls, path: str) -> "ExperimentConfig":
        try:
            with open(path) as fh:
                return cls.parse(fh.read())
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}") from exc

    def get(self, key, default=None):
        return self.values.get(key, default)

    def require(self, key):
        if key not in self.values:
            raise ConfigError(f"missing key {key!r}")
        return self.values[key]

    def params(self, prefix: str) -> dict:
        return {k[len(prefix):]: v for k, v in self.values.items() if k.startswith(prefix)}


# ---------------------------------------------------------------- tables

def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return "%.17g" % float(v)
    return str(v)


def emit_table(rows, path: str, columns=None) -> None:
    """Write ``rows`` (dicts or sequences) as CSV with a header row.

    Floats use 17 significant digits so the file round-trips bitwise.
    """
    rows = list(rows)
    if columns is None:
        if not rows or not isinstance(rows[0], dict):
            raise ConfigError("columns are needed for empty or positional rows")
        columns = list(rows[0].keys())
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(columns)
        for r in rows:
            vals = [r[c] for c in columns] if isinstance(r, dict) else list(r)
            if len(vals) != len(columns):
                raise ConfigError("ragged table")
            wr.writerow([_fmt(v) for v in vals])


def load_table(path: str):
    """Read a table written by :func:`emit_table`; returns ``(columns, rows)``."""
    with open(path, newline="") as fh:
        rd = csv.reader(fh)
        columns = next(rd)
        rows = [r for r in rd]
    return columns, rows


def load_trajectory(path: str, grid: Optional[TimeGrid] = None):
    """Trajectory table back to ``(times, values)``."""
    columns, rows = load_table(path)
    A = np.array(rows, dtype=float).reshape(-1, len(columns))
    return A[:, 0], A[:, 1:]


def trajectory_rows(u):
    t = u.times
    return [[t[i], *u.values[i]] for i in range(len(t))], \
        ["t"] + [f"u_{j + 1}" for j in range(u.dim)]


# ---------------------------------------------------------------- building problems

def _vector(x, d=None):
    v = np.atleast_1d(np.asarray(x, dtype=float))
    if d is not None and v.size == 1 and d > 1:
        v = np.full(d, float(v[0]))
    return v


def build_grid(cfg: ExperimentConfig) -> TimeGrid:
    T = float(cfg.get("problem.T", 1.0))
    if cfg.get("problem.tau") is not None:
        return TimeGrid.covering(T, cfg.get("problem.tau"))
    return TimeGrid(T, int(cfg.get("problem.N", 100)))


def build_dissipation(cfg: ExperimentConfig, prefix="problem.dissipation"):
    kind = cfg.get(prefix, "quadratic")
    if kind == "none":
        return None
    if kind == "quadratic":
        return DissipationModel.quadratic(cfg.get(prefix + ".nu", 1.0))
    if kind == "power":
        return DissipationModel.power_law(cfg.require(prefix + ".p"), cfg.get(prefix + ".coeff", 1.0))
    if kind == "one_homogeneous":
        return DissipationModel.one_homogeneous(cfg.get(prefix + ".alpha", 1.0))
    raise ConfigError(f"unknown dissipation {kind!r}")


def build_problem(cfg: ExperimentConfig) -> WideProblem:
    name = cfg.get("problem.energy", "quadratic")
    params = cfg.params("problem.energy.")
    if name == "quadratic":
        L = params.get("Lambda", 1.0)
        params["Lambda"] = np.atleast_2d(np.asarray(L, dtype=float))
    E = builtin_energy(name, forcing_slope=cfg.get("problem.forcing_slope"), **params)
    rho = float(cfg.get("problem.rho", 0.0))
    u1 = cfg.get("problem.u1")
    return WideProblem(build_grid(cfg), E, build_dissipation(cfg), rho,
                       _vector(cfg.get("problem.u0", 1.0), E.dim),
                       None if u1 is None else _vector(u1, E.dim),
                       mass=float(cfg.get("problem.mass", 1.0)))


def build_pde(cfg: ExperimentConfig):
    mesh = pde.SpatialMesh(float(cfg.get("pde.L", 1.0)), int(cfg.get("pde.M", 32)))
    grid = build_grid(cfg)
    u0 = pde.initial_profile(mesh, cfg.get("pde.profile", "mode"), **cfg.params("pde.profile."))
    kind = cfg.get("pde.kind", "heat")
    nl = cfg.get("pde.nonlinearity")
    if kind == "heat":
        return mesh, pde.heat_problem(mesh, grid, u0, nl, nu=cfg.get("pde.nu", 1.0))
    if kind == "wave":
        fac = pde.discretize_wave(mesh, nl, nu=cfg.get("pde.nu", 0.0), zeta=cfg.get("pde.zeta"))
        v = cfg.get("pde.velocity_profile", "zero")
        return mesh, fac(grid, u0, pde.initial_profile(mesh, v))
    if kind == "doubly_nonlinear":
        return mesh, pde.doubly_nonlinear_problem(mesh, grid, u0, cfg.require("pde.zeta"),
                                                  nonlinearity=nl)
    raise ConfigError(f"unknown pde.kind {kind!r}")


_ORACLES = {"implicit_euler": oracles.implicit_euler,
            "incremental": oracles.incremental_minimization,
            "leapfrog": oracles.leapfrog_wave}


def build_reference(cfg: ExperimentConfig, problem: WideProblem, mesh=None):
    """A fixed reference, or a callable ``(problem_eps, eps)`` for eps-dependent ones."""
    name = cfg.get("reference", "implicit_euler")
    params = cfg.params("reference.")
    if name in _ORACLES:
        if params:
            raise ConfigError(f"reference {name} takes no parameters")
        fn = _ORACLES[name]
        if cfg.get("tau_rule", "fixed") != "fixed":
            return lambda p, e: fn(p)
        return fn(problem)
    if name == "quasistatic":
        return oracles.solve_quasistatic(problem.energy, problem.grid)
    if name == "wide_linear_bvp":
        base = dict(params)
        return lambda p, e: oracles.analytic_catalogue(name, eps=e, T=p.grid.T, **base)
    if name in ("heat_mode", "wave_mode"):
        if mesh is None:
            raise ConfigError(f"{name} needs a pde mesh")
        params.setdefault("mesh", mesh)
    return oracles.analytic_catalogue(name, **params)


def _solver_kw(cfg):
    kw = {}
    if cfg.get("solver.tol") is not None:
        kw["tol"] = cfg.get("solver.tol")
    if cfg.get("solver.max_iter") is not None:
        kw["max_iter"] = cfg.get("solver.max_iter")
    return kw


# ---------------------------------------------------------------- modes

def _report_rows(rep, problem, w):
    rows = [("solver", rep.solver), ("converged", int(rep.converged)),
            ("objective", rep.objective), ("iterations", rep.iterations),
            ("residual", rep.residual), ("tolerance", rep.tolerance),
            ("epsilon", w.epsilon), ("tau", w.tau), ("N", problem.grid.N),
            ("dropped_scale", w.dropped_scale)]
    for k in ("path", "phase"):
        if k in rep.extras:
            rows.append((k, rep.extras[k]))
    return rows


def _solve(problem, cfg):
    eps = float(cfg.require("epsilon"))
    w = weights_for(problem, eps)
    u, rep = minimize(problem, w, **_solver_kw(cfg))
    return u, rep, w


def run(cfg: ExperimentConfig, mode: str, out: str, seed: int = 0) -> int:
    """Execute one experiment; returns the process exit code."""
    os.makedirs(out, exist_ok=True)
    if mode not in MODES:
        raise ConfigError(f"unknown mode {mode!r}")
    mesh = None
    if mode == "pde":
        mesh, problem = build_pde(cfg)
    else:
        problem = build_problem(cfg)

    if mode == "oracle":
        ref = build_reference(cfg, problem)
        if callable(ref) and not isinstance(ref, oracles.ReferenceSolution):
            raise ConfigError("oracle mode needs an eps-independent reference")
        vals = ref.on_grid(problem.grid)
        t = problem.grid.nodes
        emit_table([[t[i], *vals[i]] for i in range(len(t))], os.path.join(out, "trajectory.csv"),
                   ["t"] + [f"u_{j + 1}" for j in range(vals.shape[1])])
        emit_table([("reference", ref.name), ("provenance", ref.provenance)],
                   os.path.join(out, "report.csv"), ["key", "value"])
        return EXIT_OK

    if mode == "sweep":
        ref = build_reference(cfg, problem)
        res = causal.sweep(problem, cfg.require("epsilons"), ref, norm=cfg.get("norm", "sup"),
                           tau_rule=cfg.get("tau_rule", "fixed"), **_solver_kw(cfg))
        emit_table(res.rows(), os.path.join(out, "sweep.csv"),
                   ["epsilon", "tau", "sup_error", "l2_error", "solver", "iterations"])
        emit_table([("reference", res.reference), ("norm", res.norm),
                    ("fitted_exponent", res.fitted_exponent), ("fit_residual", res.fit_residual),
                    ("degenerate", int(res.degenerate))],
                   os.path.join(out, "report.csv"), ["key", "value"])
        return EXIT_OK

    u, rep, w = _solve(problem, cfg)
    rows, cols = trajectory_rows(u)
    emit_table(rows, os.path.join(out, "trajectory.csv"), cols)
    report = _report_rows(rep, problem, w)
    if mode == "pde" and cfg.get("reference") is not None:
        ref = build_reference(cfg, problem, mesh)
        ref = ref(problem, w.epsilon) if not isinstance(ref, oracles.ReferenceSolution) else ref
        sup, l2 = causal.trajectory_errors(u, ref.on_grid(problem.grid), mesh.l2)
        report += [("reference", ref.name), ("sup_l2_distance", sup), ("l2_l2_distance", l2)]
    emit_table(report, os.path.join(out, "report.csv"), ["key", "value"])
    if mode == "check":
        diag = diagnostics.run_checks(u, problem, w, seed=seed)
        emit_table(diag.rows(), os.path.join(out, "diagnostics.csv"),
                   ["check", "value", "threshold", "passed", "epsilon", "tau"])
        for c in diag.checks:
            print(f"{c.name}: {c.value:.3e} <= {c.threshold:.3e} {'PASS' if c.passed else 'FAIL'}")
        return EXIT_OK if diag.passed else EXIT_DIAGNOSTIC
    return EXIT_OK


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="wide", description="Weighted inertia-dissipation-energy "
                                 "minimization experiments.")
    ap.add_argument("--config", required=True, help="key = value config file")
    ap.add_argument("--mode", choices=MODES, help="overrides the config's mode")
    ap.add_argument("--out", help="output directory (default: config 'output' or ./out)")
    ap.add_argument("--seed", type=int, help="seed for sampling and multi-start")
    ap.add_argument("-v", "--verbose", action="store_true")
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = ExperimentConfig.load(args.config)
        mode = args.mode or cfg.get("mode", "run")
        out = args.out or cfg.get("output", "out")
        seed = args.seed if args.seed is not None else cfg.get("seed", 0)
        return run(cfg, mode, out, seed)
    except (ConfigError, ProblemError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SolveError, SolveFailed) as exc:
        print(f"solve failed: {exc}", file=sys.stderr)
        return EXIT_SOLVE
    except WideError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SOLVE


if __name__ == "__main__":
    sys.exit(main())
