"""The causal limit eps -> 0: sweeps over eps, error tables and rate fits."""
from __future__ import annotations

import dataclasses
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np

from .errors import DegenerateFit, InsufficientSweep, InvalidParams, SolveFailed, WideError
from .minimizers import minimize
from .oracles import ReferenceSolution
from .problem import (
    DiscreteTrajectory,
    DissipationModel,
    TimeGrid,
    WideProblem,
    builtin_energy,
    weights_for,
)

FIT_FLOOR = 1e-13


def default_workers() -> int:
    try:
        return max(1, int(os.environ.get("WIDE_WORKERS", "1")))
    except ValueError:
        return 1


def fit_exponent(x, y):
    """Least-squares slope of ``log y`` against ``log x``; returns ``(slope, rms residual)``."""
    lx, ly = np.log(np.asarray(x, float)), np.log(np.asarray(y, float))
    A = np.column_stack([lx, np.ones_like(lx)])
    coef, *_ = np.linalg.lstsq(A, ly, rcond=None)
    resid = ly - A @ coef
    return float(coef[0]), float(np.sqrt(np.mean(resid ** 2)))


def _euclid(D):
    return np.sqrt((D * D).sum(axis=1))


@dataclass
class SweepResult:
    epsilons: np.ndarray
    sup_errors: np.ndarray
    l2_errors: np.ndarray
    norm: str
    reference: str
    fitted_exponent: float = float("nan")
    fit_residual: float = float("nan")
    degenerate: bool = False
    trajectories: list = field(default_factory=list)
    reports: list = field(default_factory=list)

    @property
    def errors(self) -> np.ndarray:
        return self.sup_errors if self.norm == "sup" else self.l2_errors

    def rows(self):
        return [{"epsilon": float(e), "tau": r.extras.get("tau", float("nan")), "sup_error": s,
                 "l2_error": l, "solver": r.solver, "iterations": r.iterations}
                for e, s, l, r in zip(self.epsilons, self.sup_errors, self.l2_errors, self.reports)]


def _tau_for(rule, eps: float) -> Optional[float]:
    if rule is None or rule == "fixed":
        return None
    if callable(rule):
        return float(rule(eps))
    if rule in ("square", "eps^2"):
        return eps * eps
    raise InvalidParams(f"unknown tau rule {rule!r}")


def trajectory_errors(u: DiscreteTrajectory, ref: np.ndarray, state_norm=None):
    """Sup and discrete ``L^2(0,T)`` distances between ``u`` and nodal ``ref``."""
    norm = state_norm or _euclid
    pointwise = norm(u.values - ref)
    tau = u.grid.tau
    w = np.full(pointwise.size, tau)
    w[0] = w[-1] = 0.5 * tau
    return float(pointwise.max()), float(math.sqrt(np.dot(w, pointwise ** 2)))


def sweep(problem: WideProblem, epsilons: Sequence[float],
          reference: Union[ReferenceSolution, Callable], norm: str = "sup",
          tau_rule=None, workers: Optional[int] = None, state_norm=None,
          keep: bool = False, raise_degenerate: bool = False, **solver_kw) -> SweepResult:
    """Solve for each ``eps`` and measure the distance to a reference.

    Parameters
    ----------
    reference : ReferenceSolution or callable
        Either a fixed reference or ``reference(problem_eps, eps)`` returning
        one (for references that depend on ``eps`` or on the time step).
    tau_rule : None, "square" or callable
        ``None`` keeps the problem grid; otherwise ``tau = rule(eps)`` on the
        same horizon.
    state_norm : callable, optional
        Norm of a batch of state differences ``(n, d) -> (n,)``; Euclidean by
        default (pass ``mesh.l2`` for discretized PDEs).
    """
    eps = np.asarray(epsilons, dtype=float)
    if eps.size < 3:
        raise InsufficientSweep("a sweep needs at least 3 values of eps")
    if np.any(eps <= 0) or np.any(np.diff(eps) >= 0):
        raise InvalidParams("epsilons must be positive and strictly decreasing")
    if norm not in ("sup", "l2"):
        raise InvalidParams("norm must be 'sup' or 'l2'")

    def one(e):
        tau = _tau_for(tau_rule, e)
        prob = problem if tau is None else problem.with_step(tau)
        try:
            u, rep = minimize(prob, weights_for(prob, e), **solver_kw)
        except WideError as exc:
            raise SolveFailed(e, exc) from exc
        rep.extras["tau"] = prob.grid.tau
        ref = reference if isinstance(reference, ReferenceSolution) else reference(prob, e)
        errs = trajectory_errors(u, ref.on_grid(prob.grid), state_norm)
        return u, rep, errs, ref.name

    nw = workers or default_workers()
    if nw > 1:
        with ThreadPoolExecutor(nw) as pool:
            out = list(pool.map(one, eps))
    else:
        out = [one(e) for e in eps]
    res = SweepResult(eps, np.array([o[2][0] for o in out]), np.array([o[2][1] for o in out]),
                      norm, out[0][3], reports=[o[1] for o in out],
                      trajectories=[o[0] for o in out] if keep else [])
    err = res.errors
    if np.all(err < FIT_FLOOR):
        res.degenerate = True
        if raise_degenerate:
            raise DegenerateFit("all errors below 1e-13; nothing to fit")
    else:
        mask = err >= FIT_FLOOR
        if mask.sum() >= 2:
            res.fitted_exponent, res.fit_residual = fit_exponent(eps[mask], err[mask])
    return res


@dataclass
class RateReport:
    rows: list
    rate: Optional[float]
    exact: bool
    min_rate: float

    @property
    def passed(self) -> bool:
        return self.exact or (self.rate is not None and self.rate >= self.min_rate)


def _exp_sup_error(u: DiscreteTrajectory, rate: float, u0: float) -> float:
    N = u.grid.N
    if N > 1_000_000:
        from ._fast import kernels
        return float(kernels()[1](u.values[:, 0], u.grid.tau, rate, u0))
    return float(np.abs(u.values[:, 0] - u0 * np.exp(-rate * u.grid.nodes)).max())


def rate_report(lam: float = 1.0, nu: float = 1.0, u0: float = 1.0, T: float = 1.0,
                epsilons: Sequence[float] = (1e-2, 1e-3, 1e-4), tau_power: float = 2.0,
                min_rate: float = 0.4) -> RateReport:
    """Sup-norm rate of the linear scalar family against ``u0 exp(-lam t/nu)``.

    The step is refined with ``tau = eps^tau_power`` (default ``eps^2``) so the
    time discretization error stays below the ``eps`` gap. The largest case
    (``N = 1e8``) goes through the compiled tridiagonal path.
    """
    rows = []
    E = builtin_energy("quadratic", Lambda=[[lam]])
    rate_c = lam / nu
    for e in epsilons:
        tau = e ** tau_power
        grid = TimeGrid.covering(T, tau)
        prob = WideProblem(grid, E, DissipationModel.quadratic(nu), 0.0, [u0])
        try:
            u, rep = minimize(prob, weights_for(prob, e))
        except WideError as exc:
            raise SolveFailed(e, exc) from exc
        err = _exp_sup_error(u, rate_c, u0)
        rows.append({"epsilon": e, "tau": grid.tau, "N": grid.N, "sup_error": err,
                     "solver": rep.extras.get("path", rep.solver)})
        del u
    errs = np.array([r["sup_error"] for r in rows])
    if np.all(errs < FIT_FLOOR):
        return RateReport(rows, None, True, min_rate)
    rate, _ = fit_exponent(epsilons, np.maximum(errs, FIT_FLOOR))
    return RateReport(rows, rate, False, min_rate)


def noncausal_sensitivity(problem: WideProblem, epsilon: float, amplitude: float = 1.0,
                          split: float = 0.5) -> float:
    """``|u^eps(t_s) - u~^eps(t_s)| / amplitude`` for a load change on ``(t_s, T]``.

    ``t_s = split * T``; the perturbed problem adds ``amplitude`` to the load
    at every node after ``t_s``. Causal evolutions give exactly zero.
    """
    E = problem.energy
    grid = problem.grid
    ts = split * grid.T
    base = E.forcing

    def perturbed(t):
        t = np.asarray(t, dtype=float)
        f = E.load(t) if base is not None else np.zeros((t.size, E.dim))
        return f + amplitude * (t > ts + 1e-12 * grid.T)[:, None]

    P2 = problem.replace(energy=dataclasses.replace(E, forcing=perturbed))
    w = weights_for(problem, epsilon)
    u1, _ = minimize(problem, w)
    u2, _ = minimize(P2, w)
    i = int(round(ts / grid.tau))
    return float(np.abs(u1.values[i] - u2.values[i]).max() / abs(amplitude))

