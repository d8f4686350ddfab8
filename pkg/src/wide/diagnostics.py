"""Runtime checks of identities, natural conditions and a priori estimates.

All time derivatives are backward differences on the same stencils as the
discrete functional, so stationarity of a computed minimizer is an algebraic
statement here (up to solver tolerance), not an O(tau) one.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import GridTooShort, InsufficientSweep, SolveFailed, WideError, WrongRegime
from .functional import _values, normalized_residual
from .minimizers import minimize
from .problem import DiscreteTrajectory, WeightScheme, WideProblem, weights_for


@dataclass
class Check:
    name: str
    value: float
    threshold: float
    passed: bool


@dataclass
class DiagnosticReport:
    checks: list = field(default_factory=list)
    epsilon: float = float("nan")
    tau: float = float("nan")

    def add(self, name, value, threshold, passed=None):
        ok = bool(value <= threshold) if passed is None else bool(passed)
        self.checks.append(Check(name, float(value), float(threshold), ok))
        return self

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def __getitem__(self, name) -> Check:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def rows(self):
        return [{"check": c.name, "value": c.value, "threshold": c.threshold,
                 "passed": int(c.passed), "epsilon": self.epsilon, "tau": self.tau}
                for c in self.checks]


def _nu(problem: WideProblem) -> float:
    d = problem.dissipation
    if d is None:
        return 0.0
    if d.kind != "quadratic":
        raise WrongRegime(f"needs quadratic dissipation, got {d.kind}")
    return d.nu


def _traj(problem, u) -> np.ndarray:
    return _values(problem, u)


# ---------------------------------------------------------------- Euler-Lagrange

def el_residual(u, problem: WideProblem, w: WeightScheme) -> np.ndarray:
    """Per-node Euclidean norm of the discrete Euler-Lagrange residual.

    The residual at node ``k`` is the stationarity row of the functional
    divided by ``tau e_k c``; it discretizes
    ``eps^2 rho u'''' - 2 eps rho u''' + rho u'' - eps nu u'' + nu u' + grad E - f``
    (up to the eps-dependent factors of the weights). Only interior nodes
    are returned: ``k = 1..N-1`` for ``rho = 0`` and ``k = 2..N-2`` otherwise;
    the remaining rows are the natural conditions (:func:`final_conditions`).
    """
    U = _traj(problem, u)
    N = problem.grid.N
    last = N - 2 if problem.rho > 0 else N - 1
    if last < problem.first_free:
        raise GridTooShort(f"N = {N} leaves no interior node")
    R = normalized_residual(problem, w, U)
    return np.sqrt((R[: last - problem.first_free + 1] ** 2).sum(axis=1))


def residual_scale(problem: WideProblem, u) -> float:
    """Size of the data entering the residual, for relative thresholds."""
    U = _traj(problem, u)
    return 1.0 + float(np.abs(problem.energy.gradient(U)).max() + np.abs(problem.load()).max())


@dataclass
class FinalConditions:
    values: tuple
    thresholds: tuple

    @property
    def passed(self) -> bool:
        return all(v <= t for v, t in zip(self.values, self.thresholds))


def final_conditions(u, problem: WideProblem, w: WeightScheme) -> FinalConditions:
    """Discrete natural conditions at ``t = T``.

    ``rho = 0``: ``|u_N - u_{N-1}|``, threshold ``1e-12 max(1, |u|_inf)``.

    ``rho > 0``: ``c1 = rho |d2u_N|`` and ``c2 = |eps^2 rho d3u_N - eps nu du_N|``
    with backward differences. At a minimizer both are ``O(tau)``: ``c1`` is
    measured in units of ``1 + nu/(rho eps)`` (the last row balances
    ``eps^2 rho d2u_N`` against ``eps r tau nu du_N``) and ``c2`` in units of the
    force scale ``1 + |grad E| + |f| + nu|du|``; both thresholds are
    ``10 tau`` in those units.
    """
    U = _traj(problem, u)
    tau = w.tau
    if problem.rho == 0:
        gap = float(np.abs(U[-1] - U[-2]).max())
        return FinalConditions((gap,), (1e-12 * max(1.0, float(np.abs(U).max())),))
    if problem.grid.N < 3:
        raise GridTooShort("need N >= 3 for the third difference")
    rho, eps = problem.rho, w.epsilon
    nu = problem.dissipation.nu if problem.dissipation is not None and \
        problem.dissipation.kind == "quadratic" else 0.0
    V = np.diff(U, axis=0) / tau
    P = np.diff(V, axis=0) / tau
    Q = (P[-1] - P[-2]) / tau
    c1 = rho * float(np.linalg.norm(P[-1])) / (1.0 + nu / (rho * eps))
    c2 = float(np.linalg.norm(eps * eps * rho * Q - eps * nu * V[-1]))
    force = 1.0 + float(np.abs(problem.energy.gradient(U)).max() + np.abs(problem.load()).max()
                        + nu * np.abs(V).max())
    return FinalConditions((c1, c2 / force), (10 * tau, 10 * tau))


# ---------------------------------------------------------------- inner variation

@dataclass
class InnerVariation:
    defect: float
    local: float
    terms: dict


def inner_variation_identity(u, problem: WideProblem, w: WeightScheme) -> InnerVariation:
    """Energy identity obtained by testing the Euler-Lagrange equation with ``u'``.

    For ``rho = 0`` and quadratic dissipation the continuous minimizer satisfies
    ``(eps nu/2)|u'(0)|^2 + nu int |u'|^2 + E(u(T)) - E(u(0)) - int f.u' = 0``.
    ``defect`` is the absolute value of the discrete left-hand side; ``local``
    is the sup over interior nodes of the pointwise form
    ``nu |u'|^2 + d/dt(-(eps nu/2)|u'|^2 + E(u)) - f.u'`` with centred
    differences.
    """
    if problem.rho > 0:
        raise WrongRegime("inner variation identity is stated for rho = 0")
    U = _traj(problem, u)
    nu = _nu(problem) * problem.mass
    tau, eps = w.tau, w.epsilon
    E = problem.energy
    f = problem.load()
    V = np.diff(U, axis=0) / tau
    s = (V * V).sum(axis=1)
    EU = E.value(U)
    work = float(np.sum(0.5 * (f[1:] + f[:-1]) * (U[1:] - U[:-1])))
    terms = {"boundary": 0.5 * eps * nu * s[0], "dissipation": nu * tau * s.sum(),
             "energy": EU[-1] - EU[0], "work": work}
    defect = abs(terms["boundary"] + terms["dissipation"] + terms["energy"] - work)
    # pointwise form at nodes 1..N-1
    fmid = f[1:-1]
    vel = 0.5 * (V[1:] + V[:-1])
    loc = nu * 0.5 * (s[1:] + s[:-1]) - 0.5 * eps * nu * (s[1:] - s[:-1]) / tau \
        + (EU[2:] - EU[:-2]) / (2 * tau) - (fmid * vel).sum(axis=1)
    local = float(np.abs(loc).max()) if loc.size else 0.0
    return InnerVariation(float(defect), local, terms)


# ---------------------------------------------------------------- monitors

MONITORS = ("nested", "maxreg", "serra_tilli", "windowed_energy")


@dataclass
class MonitorTable:
    epsilons: np.ndarray
    values: dict
    bound_factor: float = 2.0

    @property
    def ratios(self) -> dict:
        """Each monitor divided by its value at the largest eps."""
        i = int(np.argmax(self.epsilons))
        out = {}
        for k, v in self.values.items():
            ref = v[i]
            out[k] = v / ref if ref > 0 else np.where(v > 0, np.inf, 0.0)
        return out

    def bounded(self, noise: float = 1e-12) -> dict:
        i = int(np.argmax(self.epsilons))
        return {k: bool(np.all(v <= self.bound_factor * v[i] + noise))
                for k, v in self.values.items()}

    @property
    def passed(self) -> bool:
        return all(self.bounded().values())

    def rows(self):
        return [{"epsilon": float(e), **{k: float(self.values[k][j]) for k in MONITORS}}
                for j, e in enumerate(self.epsilons)]


def _monitors_one(U: np.ndarray, problem: WideProblem, tau: float, eps: float) -> dict:
    m = problem.mass
    rho, nu = problem.rho * m, _nu(problem) * m
    E = problem.energy
    V = np.diff(U, axis=0) / tau
    P = np.diff(V, axis=0) / tau
    sv = (V * V).sum(axis=1)
    sp_ = (P * P).sum(axis=1)
    EU = E.value(U)
    G = E.gradient(U)
    nested = rho * tau * sp_.sum() + nu * tau * sv.sum() + tau * EU[1:].sum()
    maxreg = (eps * nu) ** 2 * tau * sp_.sum() + 0.5 * nu ** 2 * tau * sv.sum() \
        + tau * (G[1:] * G[1:]).sum()
    st = rho * sv + nu * tau * np.cumsum(sv)
    # windowed energy (1/eps) int_t^{t+eps} E, windows clipped at T
    cum = np.concatenate([[0.0], np.cumsum(0.5 * tau * (EU[1:] + EU[:-1]))])
    t = problem.grid.nodes
    end = np.minimum(t + eps, t[-1])
    window = (np.interp(end, t, cum) - cum) / eps
    return {"nested": float(nested), "maxreg": float(maxreg),
            "serra_tilli": float(st.max()), "windowed_energy": float(window.max())}


def estimate_monitors(family, problem: WideProblem, epsilons: Optional[Sequence] = None,
                      bound_factor: float = 2.0) -> MonitorTable:
    """A priori estimate quantities across an eps-sweep.

    ``family`` is a sequence of ``(eps, trajectory)`` pairs, or of
    trajectories with ``epsilons`` given separately. For each eps:

    * nested: ``rho sum tau|d2u|^2 + nu sum tau|du|^2 + sum tau E(u)``
    * maxreg: ``eps^2 nu^2 sum tau|d2u|^2 + nu^2/2 sum tau|du|^2 + sum tau|grad E|^2``
    * serra_tilli: ``max_t rho|du(t)|^2 + nu sum_{s<=t} tau|du|^2``
    * windowed_energy: ``max_t (1/eps) int_t^{t+eps} E(u)`` (clipped at ``T``)

    ``nu`` and ``rho`` include the mass. Loads are not included.
    """
    if epsilons is not None:
        family = list(zip(epsilons, family))
    family = list(family)
    if len(family) < 3:
        raise InsufficientSweep("monitors need at least 3 values of eps")
    eps = np.array([float(e) for e, _ in family])
    rows = []
    for e, u in family:
        tr = u if isinstance(u, DiscreteTrajectory) else DiscreteTrajectory(u, problem.grid)
        rows.append(_monitors_one(np.asarray(tr.values), problem, tr.grid.tau, e))
    values = {k: np.array([r[k] for r in rows]) for k in MONITORS}
    return MonitorTable(eps, values, bound_factor)


# ---------------------------------------------------------------- value function

def value_function(problem: WideProblem, v, epsilon: float, **solver_kw) -> float:
    """``V^eps(v) = W_min / eps`` over trajectories starting at ``v``.

    With the weights used here the constant trajectory gives
    ``W / eps = r (1 - r^{N-1}) E(v) <= E(v)``, so ``0 <= V^eps(v) <= E(v)``
    whenever ``E >= 0``.
    """
    if problem.rho > 0:
        raise WrongRegime("value function is defined here for rho = 0")
    P = problem.replace(u0=np.atleast_1d(np.asarray(v, dtype=float)))
    try:
        _, rep = minimize(P, weights_for(P, epsilon), **solver_kw)
    except WideError as exc:
        raise SolveFailed(epsilon, exc) from exc
    return rep.objective / epsilon


@dataclass
class DPPReport:
    times: np.ndarray
    values: np.ndarray
    integrated_defect: float
    local_defect: float


def dpp_check(problem: WideProblem, epsilon: float, samples: int = 20,
              margin: float = 10.0) -> DPPReport:
    """Dynamic programming along the minimizer from ``u0``.

    Integrated form: ``V(u(t)) + (nu/2) int_0^t |u'|^2 <= E(u0)``; the
    reported defect is the largest violation (0 if it holds). Local form:
    ``d/dt V(u) + (nu/2)|u'|^2 + (E(u) - V(u))/eps``, with ``d/dt`` from
    consecutive nodes, reported relative to ``1 + E(u0)/eps``. Sample times
    stay below ``T - margin*eps``, away from the terminal layer of the finite
    horizon.
    """
    nu = _nu(problem) * problem.mass
    grid = problem.grid
    w = weights_for(problem, epsilon)
    u, _ = minimize(problem, w)
    U = np.asarray(u.values)
    tau = grid.tau
    tmax = grid.T - margin * epsilon
    if tmax <= tau:
        raise GridTooShort("horizon too short for the DPP margin")
    idx = np.unique(np.linspace(0, int(tmax / tau) - 1, samples).astype(int))
    diss = np.concatenate([[0.0], np.cumsum(0.5 * nu * tau * ((np.diff(U, axis=0) / tau) ** 2)
                                              .sum(axis=1))])
    E0 = problem.energy.value(problem.u0)
    Vs = np.array([value_function(problem, U[i], epsilon) for i in idx])
    integ = float(np.max(np.maximum(Vs + diss[idx] - E0, 0.0)))
    Vn = np.array([value_function(problem, U[i + 1], epsilon) for i in idx])
    vel = (U[idx + 1] - U[idx]) / tau
    Em = 0.5 * (problem.energy.value(U[idx]) + problem.energy.value(U[idx + 1]))
    loc = (Vn - Vs) / tau + 0.5 * nu * (vel * vel).sum(axis=1) + (Em - 0.5 * (Vs + Vn)) / epsilon
    local = float(np.abs(loc).max() / (1.0 + E0 / epsilon))
    return DPPReport(grid.nodes[idx], Vs, integ, local)


# ---------------------------------------------------------------- EDP

def edp_residual(u, problem: WideProblem) -> float:
    """Discrete De Giorgi functional of a trajectory.

    ``E(u_N) - E(u_0) + (nu/2) sum tau|du_i|^2 + 1/(2 nu) sum tau|grad E(u_{i-1})|^2``
    (``nu`` includes the mass). The gradient is taken at the left node, which
    makes the value nonnegative for convex ``E``; it vanishes to first order
    on gradient-flow solutions.
    """
    if problem.rho > 0:
        raise WrongRegime("the EDP functional is for first-order flows")
    nu = _nu(problem) * problem.mass
    if nu <= 0:
        raise WrongRegime("needs nu > 0")
    U = _traj(problem, u)
    tau = problem.grid.tau
    E = problem.energy
    V = np.diff(U, axis=0) / tau
    G = E.gradient(U[:-1]) - problem.load()[:-1]
    return float(E.value(U[-1]) - E.value(U[0]) + 0.5 * nu * tau * (V * V).sum()
                 + 0.5 / nu * tau * (G * G).sum())


# ---------------------------------------------------------------- energetic

def energetic_checks(u, problem: WideProblem, samples: int = 64, seed: int = 0,
                     slack: float = 1e-2, balance_tol: Optional[float] = None,
                     radius_factor: float = 3.0) -> DiagnosticReport:
    """Global stability (by sampling) and energy balance of a rate-independent path.

    Stability at node ``i``: ``E(t_i,u_i) <= E(t_i,w) + m alpha |w - u_i|_1``
    for ``samples`` random competitors ``w`` in a box of half-width
    ``radius_factor`` times the trajectory diameter. The balance defect is
    ``|E(t_N,u_N) + m alpha sum|u_i - u_{i-1}|_1 - E(0,u_0) + sum (f_i - f_{i-1}).u_{i-1}|``
    (the last sum is the work of the load rate, summed by parts exactly).
    ``balance_tol`` defaults to ``5 tau``.
    """
    diss = problem.dissipation
    if problem.rho > 0 or diss is None or diss.kind != "one_homogeneous":
        raise WrongRegime("energetic checks need rho = 0 and one-homogeneous dissipation")
    U = _traj(problem, u)
    E, f = problem.energy, problem.load()
    ma = problem.mass * diss.alpha
    tau = problem.grid.tau
    rng = np.random.default_rng(seed)
    diam = float(np.abs(U.max(axis=0) - U.min(axis=0)).max())
    radius = radius_factor * (diam if diam > 0 else 1.0)
    Et = E.value(U) - (f * U).sum(axis=1)
    worst = -np.inf
    n, d = U.shape
    for i in range(n):
        Wc = U[i] + radius * rng.uniform(-1.0, 1.0, size=(samples, d))
        Ec = E.value(Wc) - Wc @ f[i] + ma * np.abs(Wc - U[i]).sum(axis=1)
        worst = max(worst, float(np.max(Et[i] - Ec)))
    dissipated = ma * np.abs(np.diff(U, axis=0)).sum()
    work = float(((f[1:] - f[:-1]) * U[:-1]).sum())
    balance = abs(Et[-1] + dissipated - Et[0] + work)
    rep = DiagnosticReport(tau=tau)
    rep.add("stability", max(worst, 0.0), slack)
    rep.add("energy_balance", balance, 5 * tau if balance_tol is None else balance_tol)
    return rep


# ---------------------------------------------------------------- bundle

def run_checks(u, problem: WideProblem, w: WeightScheme, tol: float = 1e-7,
               seed: int = 0) -> DiagnosticReport:
    """The checks that apply to a computed minimizer, for the command line."""
    rep = DiagnosticReport(epsilon=w.epsilon, tau=w.tau)
    diss = problem.dissipation
    smooth = diss is None or diss.kind != "one_homogeneous"
    if smooth:
        try:
            res = el_residual(u, problem, w)
            rep.add("el_residual", float(res.max()), tol * residual_scale(problem, u))
        except GridTooShort:
            pass
    fc = final_conditions(u, problem, w)
    for j, (v, t) in enumerate(zip(fc.values, fc.thresholds)):
        rep.add(f"final_condition_{j + 1}", v, t)
    if problem.rho == 0 and diss is not None and diss.kind == "quadratic":
        iv = inner_variation_identity(u, problem, w)
        scale = 1.0 + abs(iv.terms["energy"]) + iv.terms["dissipation"]
        rep.add("inner_variation", iv.defect, max(10 * w.tau, 1e-9) * scale)
    if not smooth:
        for c in energetic_checks(u, problem, seed=seed).checks:
            rep.checks.append(c)
    return rep

