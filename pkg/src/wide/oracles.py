"""Causal reference solvers and closed-form solutions.

Everything here marches forward in time (or is analytic), so it is
independent of the space-time minimizers and can be used to check them.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.optimize import brentq

from .errors import (
    InvalidParams,
    NodeMinimizationFailure,
    StabilityViolation,
    StepMinimizationFailure,
    StepNewtonFailure,
    UnknownEntry,
    WrongRegime,
)
from .problem import DiscreteTrajectory, EnergyModel, TimeGrid, WideProblem

PROVENANCES = ("Analytic", "ImplicitEuler", "Incremental", "Leapfrog", "Quasistatic")


@dataclass(frozen=True)
class ReferenceSolution:
    """A reference trajectory, either nodal or a closed-form evaluator.

    ``evaluator`` maps an array of times ``(n,)`` to states ``(n, d)``.
    Nodal references are linearly interpolated between grid nodes.
    """

    provenance: str
    trajectory: Optional[DiscreteTrajectory] = None
    evaluator: Optional[Callable] = None
    derivative: Optional[Callable] = None
    name: str = ""
    step_residuals: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.provenance not in PROVENANCES:
            raise InvalidParams(f"unknown provenance {self.provenance!r}")
        if (self.trajectory is None) == (self.evaluator is None):
            raise InvalidParams("give exactly one of trajectory and evaluator")

    def __call__(self, t) -> np.ndarray:
        t = np.atleast_1d(np.asarray(t, dtype=float))
        if self.evaluator is not None:
            out = np.asarray(self.evaluator(t), dtype=float)
            return out.reshape(t.size, -1)
        tr = self.trajectory
        return np.column_stack([np.interp(t, tr.times, tr.values[:, j])
                                for j in range(tr.dim)])

    def on_grid(self, grid: TimeGrid) -> np.ndarray:
        tr = self.trajectory
        if tr is not None and tr.grid.N == grid.N and tr.grid.tau == grid.tau:
            return np.array(tr.values)
        return self(grid.nodes)


# ---------------------------------------------------------------- helpers

def _solve_linear(J, rhs):
    if sp.issparse(J):
        return spla.spsolve(J.tocsc(), rhs)
    return np.linalg.solve(np.atleast_2d(J), rhs)


def _newton(F, J, x0, tol, err, max_iter=60):
    """Newton with backtracking on ``|F|``; returns ``(x, |F|_inf)``."""
    x = np.array(x0, dtype=float)
    Fx = F(x)
    nrm = float(np.linalg.norm(Fx))
    for _ in range(max_iter):
        if np.abs(Fx).max() <= tol:
            return x, float(np.abs(Fx).max())
        Jx = J(x)
        dx = None
        mu = 0.0
        # singular Jacobians (e.g. |u|^q at 0) get a growing Levenberg shift
        for _ in range(30):
            try:
                with np.errstate(all="ignore"):
                    dx = _solve_linear(Jx if mu == 0 else _add_diag(Jx, mu), -Fx)
            except (np.linalg.LinAlgError, RuntimeError):
                dx = None
            if dx is not None and np.all(np.isfinite(dx)):
                break
            mu = 1e-8 * (1.0 + nrm) if mu == 0 else 10.0 * mu
        else:
            raise err("singular step Jacobian")
        a = 1.0
        for _ in range(50):
            xn = x + a * dx
            Fn = F(xn)
            nn = float(np.linalg.norm(Fn))
            if np.all(np.isfinite(Fn)) and nn <= (1 - 1e-4 * a) * nrm:
                break
            a *= 0.5
        else:
            if np.abs(Fx).max() <= 1e3 * tol:
                return x, float(np.abs(Fx).max())
            raise err(f"line search failed at residual {np.abs(Fx).max():.3e}")
        x, Fx, nrm = xn, Fn, nn
    if np.abs(Fx).max() <= tol:
        return x, float(np.abs(Fx).max())
    raise err(f"no convergence, residual {np.abs(Fx).max():.3e}")


def _hess(energy: EnergyModel, u):
    H = energy.hessian_blocks(np.asarray(u, dtype=float)[None, :])
    return H.tocsr() if sp.issparse(H) else np.asarray(H)[0]


def _add_diag(H, diag):
    if sp.issparse(H):
        return H + sp.diags(np.broadcast_to(diag, (H.shape[0],)).astype(float))
    return H + np.diag(np.broadcast_to(diag, (H.shape[0],)))


def _scalar_root(g, a, direction, scale, err):
    """Root of ``g`` on the side ``direction`` (+1/-1) of ``a``; ``g(a)`` has sign ``-direction``."""
    h = scale
    lo = a
    for _ in range(200):
        b = a + direction * h
        gb = g(b)
        if np.sign(gb) != np.sign(g(lo)) or gb == 0:
            x0, x1 = (lo, b) if lo < b else (b, lo)
            return brentq(g, x0, x1, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=500)
        lo = b
        h *= 2.0
    raise err("could not bracket the step equation")


# ---------------------------------------------------------------- implicit Euler

def implicit_euler(problem: WideProblem, tau: Optional[float] = None,
                   tol: float = 1e-12) -> ReferenceSolution:
    """``nu m (u_i - u_{i-1})/tau + grad E(u_i) = f_i``, one Newton solve per step."""
    if tau is not None:
        problem = problem.with_step(tau)
    diss = problem.dissipation
    if problem.rho != 0 or diss is None or diss.kind != "quadratic" or diss.nu <= 0:
        raise WrongRegime("implicit_euler needs rho = 0 and quadratic dissipation")
    E, grid = problem.energy, problem.grid
    tau = grid.tau
    c = diss.nu * problem.mass / tau
    f = problem.load()
    U = np.empty((grid.N + 1, problem.dim))
    U[0] = problem.u0
    res = np.zeros(grid.N + 1)
    for i in range(1, grid.N + 1):
        prev, fi = U[i - 1], f[i]

        def F(u):
            return c * (u - prev) + E.gradient(u) - fi

        scale = 1.0 + np.abs(c * prev).max() + np.abs(fi).max()
        U[i], res[i] = _newton(F, lambda u: _add_diag(_hess(E, u), c), prev,
                               tol * scale, StepNewtonFailure)
    return ReferenceSolution("ImplicitEuler", DiscreteTrajectory(U, grid),
                             name="implicit_euler", step_residuals=res)


# ---------------------------------------------------------------- incremental

def _step_prox(smooth_grad, L0, a, prox, x0, tol, max_iter=200_000):
    """FISTA with backtracking for one incremental step in ``d > 1``."""
    x, y, t, L = x0.copy(), x0.copy(), 1.0, L0
    for _ in range(max_iter):
        g = smooth_grad(y)
        xn = prox(y - g / L, 1.0 / L)
        if np.vdot(y - xn, xn - x) > 0:
            t, y = 1.0, x.copy()
            xn = prox(x - smooth_grad(x) / L, 1.0 / L)
        tn = 0.5 * (1 + math.sqrt(1 + 4 * t * t))
        y = xn + ((t - 1) / tn) * (xn - x)
        step = np.abs(xn - x).max()
        x, t = xn, tn
        if step <= tol * (1.0 + np.abs(x).max()):
            fp = np.abs(prox(x - smooth_grad(x) / L, 1.0 / L) - x).max()
            if fp <= tol * (1.0 + np.abs(x).max()):
                return x
    raise StepMinimizationFailure("proximal step iteration did not converge")


def incremental_minimization(problem: WideProblem, tau: Optional[float] = None,
                             tol: float = 1e-12) -> ReferenceSolution:
    """Sequential minimization of the one-step incremental functional.

    Step ``n`` minimizes::

        rho m/(2 tau^2) |u - 2u_{n-1} + u_{n-2}|^2 + m tau D((u - u_{n-1})/tau)
            + E(u) - f_n.u

    whose stationarity is the implicit multistep scheme. Scalar steps are
    exact root solves (closed-form threshold test for the one-homogeneous
    case); vector steps use Newton for smooth ``D`` and FISTA otherwise.
    For nonconvex ``E`` the branch reached from ``u_{n-1}`` is reported.
    """
    if tau is not None:
        problem = problem.with_step(tau)
    grid, E, m = problem.grid, problem.energy, problem.mass
    tau, d = grid.tau, problem.dim
    diss = problem.dissipation
    rho = problem.rho
    f = problem.load()
    U = np.empty((grid.N + 1, d))
    fixed = problem.initial_nodes()
    U[: len(fixed)] = fixed
    res = np.zeros(grid.N + 1)
    ci = rho * m / tau ** 2
    one_hom = diss is not None and diss.kind == "one_homogeneous"
    has_d = diss is not None and not diss.trivial

    for n in range(len(fixed), grid.N + 1):
        a = U[n - 1]
        b = U[n - 2] if n >= 2 else a
        fn = f[n]

        def smooth(u):
            # inertia + energy part of the step gradient
            return ci * (u - 2 * a + b) + E.gradient(u) - fn

        def full(u):
            out = smooth(u)
            if has_d and not one_hom:
                out = out + m * diss.derivative((u - a) / tau)
            return out

        scale = 1.0 + np.abs(ci * (2 * a - b)).max() + np.abs(fn).max() + \
            np.abs(E.gradient(a)).max()
        if d == 1:
            g0 = float(smooth(a)[0])
            if one_hom:
                thr = m * diss.alpha
                if abs(g0) <= thr:
                    U[n] = a
                else:
                    sgn = -np.sign(g0)
                    U[n] = _scalar_root(lambda x: float(smooth(np.array([x]))[0]) + sgn * thr,
                                        float(a[0]), sgn, tau * (1 + abs(a[0])),
                                        StepMinimizationFailure)
                    res[n] = abs(float(smooth(U[n])[0]) + sgn * thr)
            else:
                g = lambda x: float(full(np.array([x]))[0])      # noqa: E731
                ga = g(float(a[0]))
                if ga == 0:
                    U[n] = a
                else:
                    U[n] = _scalar_root(g, float(a[0]), -np.sign(ga), tau * (1 + abs(a[0])),
                                        StepMinimizationFailure)
                    res[n] = abs(g(float(U[n, 0])))
            continue
        if not has_d or diss.smooth:
            def J(u):
                diag = ci
                if has_d:
                    diag = diag + m / tau * diss.second_derivative((u - a) / tau)
                return _add_diag(_hess(E, u), diag)

            U[n], res[n] = _newton(full, J, a, tol * scale, StepMinimizationFailure)
            continue
        H = _hess(E, a)
        lam = spla.eigsh(H, k=1, which="LA", return_eigenvectors=False)[0] \
            if sp.issparse(H) and H.shape[0] > 2 else np.linalg.eigvalsh(
                H.toarray() if sp.issparse(H) else H).max()
        L0 = ci + max(float(lam), 0.0) + 1e-12

        def prox(z, s, a=a):
            return a + tau * diss.prox((z - a) / tau, s * m / tau)

        U[n] = _step_prox(smooth, 1.01 * L0, a, prox, a, tol)
        res[n] = float(np.abs(prox(U[n] - smooth(U[n]) / L0, 1.0 / L0) - U[n]).max())
    return ReferenceSolution("Incremental", DiscreteTrajectory(U, grid),
                             name="incremental_minimization", step_residuals=res)


# ---------------------------------------------------------------- leapfrog

def max_curvature(energy: EnergyModel, u) -> float:
    """Largest eigenvalue of ``D^2E(u)`` (Gershgorin bound for sparse Hessians)."""
    if energy.quadratic_matrix is not None:
        return float(np.linalg.eigvalsh(energy.quadratic_matrix).max())
    H = _hess(energy, u)
    if sp.issparse(H):
        return float(abs(H).sum(axis=1).max())
    return float(np.linalg.eigvalsh(H).max())


def leapfrog_wave(problem: WideProblem, tau: Optional[float] = None) -> ReferenceSolution:
    """Central differences for ``rho m u'' + nu m u' + grad E(u) = f``.

    The first step uses the Taylor start ``u_1 = u0 + tau u1 + tau^2/2 a_0``.
    Raises :class:`StabilityViolation` unless ``tau^2 max eig(D^2E) <= rho m``,
    i.e. ``omega tau <= 1`` (``tau <= h/2`` for the discretized wave).
    """
    if tau is not None:
        problem = problem.with_step(tau)
    diss = problem.dissipation
    if problem.rho <= 0:
        raise WrongRegime("leapfrog needs rho > 0")
    if diss is not None and diss.kind != "quadratic":
        raise WrongRegime("leapfrog supports no or quadratic dissipation only")
    grid, E, m = problem.grid, problem.energy, problem.mass
    tau = grid.tau
    rm = problem.rho * m
    lam = max_curvature(E, problem.u0)
    if tau * tau * lam > rm * (1 + 1e-12):
        raise StabilityViolation(f"tau = {tau:g} above the stability limit "
                                 f"{math.sqrt(rm / lam):g}")
    nm = m * (diss.nu if diss is not None else 0.0)
    f = problem.load()
    U = np.empty((grid.N + 1, problem.dim))
    U[0] = problem.u0
    acc0 = (f[0] - E.gradient(problem.u0) - nm * problem.u1) / rm
    U[1] = problem.u0 + tau * problem.u1 + 0.5 * tau * tau * acc0
    lhs = rm / tau ** 2 + nm / (2 * tau)
    for n in range(1, grid.N):
        rhs = rm * (2 * U[n] - U[n - 1]) / tau ** 2 + nm * U[n - 1] / (2 * tau) \
            - E.gradient(U[n]) + f[n]
        U[n + 1] = rhs / lhs
    if not np.all(np.isfinite(U)):
        raise StabilityViolation("leapfrog produced non-finite values")
    return ReferenceSolution("Leapfrog", DiscreteTrajectory(U, grid), name="leapfrog")


# ---------------------------------------------------------------- quasistatic

def solve_quasistatic(energy: EnergyModel, grid: TimeGrid, tol: float = 1e-11,
                      init=None) -> ReferenceSolution:
    """Nodewise minimizers of ``E(u) - f_i.u`` (each node independent)."""
    f = energy.load(grid.nodes)
    d = energy.dim
    U = np.empty((grid.N + 1, d))
    res = np.zeros(grid.N + 1)
    x = np.zeros(d) if init is None else np.atleast_1d(np.asarray(init, dtype=float))
    for i, fi in enumerate(f):
        def F(u, fi=fi):
            return energy.gradient(u) - fi

        scale = 1.0 + np.abs(fi).max()
        if d == 1:
            g = lambda s: float(F(np.array([s]))[0])      # noqa: E731
            g0 = g(float(x[0]))
            if g0 != 0:
                x = np.array([_scalar_root(g, float(x[0]), -np.sign(g0), 1.0,
                                           NodeMinimizationFailure)])
            res[i] = abs(g(float(x[0])))
        else:
            x, res[i] = _newton(F, lambda u: _hess(energy, u), x, tol * scale,
                                NodeMinimizationFailure)
        U[i] = x
    return ReferenceSolution("Quasistatic", DiscreteTrajectory(U, grid),
                             name="quasistatic", step_residuals=res)


# ---------------------------------------------------------------- closed forms

def _column(fn):
    return lambda t: np.asarray(fn(np.asarray(t, dtype=float)), dtype=float).reshape(-1, 1)


def _wide_linear_bvp(lam=1.0, nu=1.0, eps=0.01, T=1.0, u0=1.0):
    """``-eps nu u'' + nu u' + lam u = 0``, ``u(0) = u0``, ``u'(T) = 0``."""
    disc = math.sqrt(1.0 + 4.0 * eps * lam / nu)
    rp = (1.0 + disc) / (2.0 * eps)
    rm = (1.0 - disc) / (2.0 * eps)
    # u = A exp(rm t) + B exp(rp (t - T)); exp(-rp T) underflows harmlessly
    q = (rm / rp) * math.exp(rm * T)
    A = u0 / (1.0 - q * math.exp(-rp * T))
    B = -A * q

    def u(t):
        return A * np.exp(rm * t) + B * np.exp(rp * (t - T))

    def du(t):
        return A * rm * np.exp(rm * t) + B * rp * np.exp(rp * (t - T))

    return u, du


def analytic_catalogue(name: str, **params) -> ReferenceSolution:
    """Closed-form solutions.

    ``exp_decay`` (lam, nu, u0), ``harmonic`` (rho, lam, u0, u1),
    ``heat_mode`` / ``wave_mode`` (mesh, k, amplitude, discrete),
    ``selection_t2``, ``play`` (alpha, slope, u0) and ``wide_linear_bvp``
    (lam, nu, eps, T, u0).
    """
    p = dict(params)

    def take(key, default):
        return p.pop(key, default)

    if name == "exp_decay":
        lam, nu, u0 = float(take("lam", 1.0)), float(take("nu", 1.0)), float(take("u0", 1.0))
        ev = _column(lambda t: u0 * np.exp(-lam / nu * t))
        der = _column(lambda t: -lam / nu * u0 * np.exp(-lam / nu * t))
    elif name == "harmonic":
        rho, lam = float(take("rho", 1.0)), float(take("lam", 1.0))
        u0, u1 = float(take("u0", 1.0)), float(take("u1", 0.0))
        if rho <= 0 or lam <= 0:
            raise InvalidParams("harmonic needs rho > 0 and lam > 0")
        w = math.sqrt(lam / rho)
        ev = _column(lambda t: u0 * np.cos(w * t) + u1 / w * np.sin(w * t))
        der = _column(lambda t: -u0 * w * np.sin(w * t) + u1 * np.cos(w * t))
    elif name in ("heat_mode", "wave_mode"):
        mesh = take("mesh", None)
        if mesh is None:
            raise InvalidParams(f"{name} needs a mesh")
        k = int(take("k", 1))
        amp = float(take("amplitude", 1.0))
        mu = mesh.eigenvalue(k) if take("discrete", True) else (k * math.pi / mesh.L) ** 2
        shape = amp * mesh.mode(k)
        if name == "heat_mode":
            ev = lambda t: np.exp(-mu * np.asarray(t))[:, None] * shape      # noqa: E731
            der = lambda t: -mu * np.exp(-mu * np.asarray(t))[:, None] * shape    # noqa: E731
        else:
            w = math.sqrt(mu)
            ev = lambda t: np.cos(w * np.asarray(t))[:, None] * shape      # noqa: E731
            der = lambda t: -w * np.sin(w * np.asarray(t))[:, None] * shape    # noqa: E731
    elif name == "selection_t2":
        ev = _column(lambda t: t * t)
        der = _column(lambda t: 2 * t)
    elif name == "play":
        alpha, slope = float(take("alpha", 1.0)), float(take("slope", 1.0))
        u0 = float(np.clip(take("u0", 0.0), -alpha, alpha))
        if slope >= 0:
            ev = _column(lambda t: np.maximum(u0, slope * t - alpha))
            der = _column(lambda t: np.where(slope * t - alpha > u0, slope, 0.0))
        else:
            ev = _column(lambda t: np.minimum(u0, slope * t + alpha))
            der = _column(lambda t: np.where(slope * t + alpha < u0, slope, 0.0))
    elif name == "wide_linear_bvp":
        kw = {k: float(take(k, v)) for k, v in
              (("lam", 1.0), ("nu", 1.0), ("eps", 0.01), ("T", 1.0), ("u0", 1.0))}
        if kw["eps"] <= 0 or kw["nu"] <= 0 or 1 + 4 * kw["eps"] * kw["lam"] / kw["nu"] < 0:
            raise InvalidParams("wide_linear_bvp needs eps, nu > 0 and 1 + 4 eps lam/nu >= 0")
        u, du = _wide_linear_bvp(**kw)
        ev, der = _column(u), _column(du)
    else:
        raise UnknownEntry(f"no analytic solution named {name!r}")
    if p:
        raise InvalidParams(f"unexpected parameters for {name}: {sorted(p)}")
    return ReferenceSolution("Analytic", evaluator=ev, derivative=der, name=name)
