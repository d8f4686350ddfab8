"""Minimizers of the discrete functional.

* :func:`solve_quadratic` -- one linear solve (tridiagonal fast path in the
  scalar first-order case, sparse LU otherwise).
* :func:`solve_newton` -- damped Newton on the normalized residual with a
  Levenberg shift for indefinite Jacobians.
* :func:`solve_prox` -- accelerated proximal gradient in velocity variables,
  for one-homogeneous or sub-quadratic power dissipation.
* :func:`brute_force` -- derivative-free multi-start search, only meant as an
  independent test oracle on tiny problems.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.linalg as sla
import scipy.optimize as so
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.signal import lfilter

from .errors import (
    DimensionTooLarge,
    InvalidParams,
    LineSearchFailure,
    MaxIterations,
    NonFiniteValue,
    NonSmoothDissipation,
    SingularSystem,
    SolveError,
    StepTooSmall,
)
from .functional import (
    _coefficients,
    _values,
    assemble_full,
    assemble_linear_system,
    check_constraints,
    eval_functional,
    initial_guess,
    jacobian,
    linear_coefficients,
    normalized_residual,
)
from .problem import DiscreteTrajectory, TimeGrid, WeightScheme, WideProblem, weights_for

log = logging.getLogger(__name__)

EPS = np.finfo(float).eps
HUGE_N = 2_000_000
DEFAULT_STARTS = 8
MULTISTART_MAX_FREE = 200
COARSE_N = 500


@dataclass
class MinimizeReport:
    objective: float
    iterations: int
    residual: float
    tolerance: float
    solver: str
    converged: bool
    extras: dict = field(default_factory=dict)


def _is_quadratic(problem: WideProblem) -> bool:
    d = problem.dissipation
    return problem.energy.quadratic_matrix is not None and (d is None or d.kind == "quadratic")


def residual_floor(problem: WideProblem, w: WeightScheme, U: np.ndarray) -> float:
    """Rough size of the roundoff in the normalized residual at ``U``."""
    tau, r = w.tau, w.ratio
    alpha_i, alpha_d = _coefficients(problem, w)
    umax = 1.0 + np.abs(U).max()
    total = 0.0
    if problem.rho > 0:
        total += alpha_i * (1 + r) ** 2 * 4 * umax / tau ** 2
    diss = problem.dissipation
    if diss is not None and not diss.trivial:
        V = np.diff(U, axis=0) / tau
        s = diss.second_derivative(V)
        smax = float(np.max(s[np.isfinite(s)], initial=0.0))
        total += alpha_d * (1 + r) * (np.abs(diss.derivative(V)).max() + smax * 2 * umax / tau)
    total += np.abs(problem.energy.gradient(U)).max() + np.abs(problem.load()).max()
    return 1e3 * EPS * total


# ---------------------------------------------------------------- quadratic

def _difference_residual(problem, w, system, x):
    """``b - A x`` with ``A x`` evaluated as ``sub (u_{k-1} - u_k) + sup (u_{k+1} - u_k)
    + c0 u_k``; the differences are nearly exact, so the residual keeps the
    small ``c0 = lam tau^2`` part that the plain product loses to cancellation."""
    sub, diag, sup, last_sub, _, efac = linear_coefficients(problem, w)
    c0 = efac * float(problem.energy.quadratic_matrix[0, 0]) * w.tau ** 2
    u0 = float(problem.u0[0])
    U = np.concatenate([[u0], x])
    f = system.rhs.copy()
    f[0] += sub * u0                       # forcing part only
    dl = U[:-2] - U[1:-1]
    dr = U[2:] - U[1:-1]
    r = np.empty_like(x)
    r[:-1] = f[:-1] - (sub * dl + sup * dr + c0 * U[1:-1])
    r[-1] = f[-1] - last_sub * (U[-2] - U[-1])
    return r


def _refine_linear(problem, w, system, x, steps: int = 2):
    """Iterative refinement of the tridiagonal solve (one factorization per step)."""
    for _ in range(steps):
        r = _difference_residual(problem, w, system, x)
        dx = sla.solve_banded((1, 1), system.ab, r)
        x = x + dx
        if np.abs(dx).max() <= EPS * (1 + np.abs(x).max()):
            break
    return x


def solve_quadratic(problem: WideProblem, w: WeightScheme):
    """Exact minimizer of a problem with quadratic energy and dissipation."""
    if not _is_quadratic(problem):
        raise InvalidParams("solve_quadratic needs quadratic energy and dissipation")
    N = problem.grid.N
    scalar_first_order = (problem.rho == 0 and problem.dim == 1 and not problem.quasistatic)
    if scalar_first_order:
        system = None
        if N > HUGE_N and problem.energy.forcing is None:
            from ._fast import kernels, solve_constant_tridiagonal
            sub, diag, sup, lsub, ldiag, _ = linear_coefficients(problem, w)
            u0 = float(problem.u0[0])
            if w.default_factors:
                rhs0 = problem.dissipation.nu * problem.mass * (w.epsilon * u0 + w.tau * u0)
            else:
                rhs0 = -sub * u0
            U = solve_constant_tridiagonal(sub, diag, sup, lsub, ldiag, rhs0, N, u0)
            res = kernels()[2](U, sub, diag, sup, lsub, ldiag, rhs0)
            scale = abs(rhs0) + abs(diag) * np.abs(U).max()
            U.setflags(write=False)
            traj = DiscreteTrajectory(U[:, None], problem.grid)
            rep = MinimizeReport(float("nan"), 1, float(res), 1e-10 * scale, "BandedDirect",
                                 bool(res <= 1e-10 * scale), {"path": "constant-tridiagonal"})
            return traj, rep
        system = assemble_linear_system(problem, w)
        try:
            x = sla.solve_banded((1, 1), system.ab, system.rhs, check_finite=True)
            x = _refine_linear(problem, w, system, x)
        except np.linalg.LinAlgError as exc:
            raise SingularSystem(str(exc)) from exc
        U = np.concatenate([problem.u0, x])[:, None]
        res = np.abs(system.matvec(x) - system.rhs).max()
        scale = np.abs(system.rhs).max() + np.abs(system.ab).max() * np.abs(x).max()
        path = "tridiagonal"
    else:
        U0 = initial_guess(problem)
        R0 = normalized_residual(problem, w, U0)
        J = jacobian(problem, w, U0)
        try:
            dx = spla.splu(J.tocsc(), permc_spec="NATURAL").solve(-R0.ravel())
        except RuntimeError as exc:
            raise SingularSystem(str(exc)) from exc
        U = U0.copy()
        U[problem.first_free:] += dx.reshape(-1, problem.dim)
        res = np.abs(normalized_residual(problem, w, U)).max()
        scale = np.abs(R0).max() + residual_floor(problem, w, U) / (1e3 * EPS)
        path = "sparse-lu"
    if not np.all(np.isfinite(U)):
        raise SingularSystem("non-finite solution")
    tol = 1e-10 * (1.0 + scale)
    traj = DiscreteTrajectory(U, problem.grid)
    rep = MinimizeReport(eval_functional(problem, w, U), 1, float(res), tol,
                         "BandedDirect", bool(res <= tol), {"path": path})
    return traj, rep


# ---------------------------------------------------------------- Newton

def _relative_scale(problem: WideProblem, w: WeightScheme) -> np.ndarray:
    """``e_k / e_{i0}`` for the free nodes."""
    n = problem.grid.N + 1 - problem.first_free
    return np.exp(np.arange(n) * math.log(w.ratio))


def _shift_estimate(problem: WideProblem, U: np.ndarray) -> float:
    E = problem.energy
    last = problem.last_energy_node
    i0 = problem.first_free
    if last < i0:
        return 1e-8
    H = E.hessian_blocks(U[i0:last + 1])
    if sp.issparse(H):
        lam = E.lambda_convexity if np.isfinite(E.lambda_convexity) else \
            float((H.diagonal() - abs(H - sp.diags(H.diagonal())).sum(axis=1).A1).min())
    else:
        lam = float(np.linalg.eigvalsh(np.asarray(H)).min())
    return max(0.0, -lam) + 1e-8


def solve_newton(problem: WideProblem, w: WeightScheme, init=None, tol: Optional[float] = None,
                 max_iter: int = 200):
    """Damped Newton iteration on the stationarity system.

    Each step solves ``J dx = -R`` with a sparse LU of the banded Jacobian of
    the normalized residual. When ``dx`` is not a descent direction for ``W``,
    or is far larger than the iterate, the Jacobian is shifted, ``J + mu I``,
    with ``mu`` growing tenfold until it is acceptable. Steps are accepted by
    an Armijo test on ``W`` (with a roundoff allowance) or, when ``W`` cannot
    resolve the change, by a decrease of the residual.
    """
    diss = problem.dissipation
    if diss is not None and not diss.smooth:
        raise NonSmoothDissipation("Newton needs a smooth dissipation; use solve_prox")
    U = initial_guess(problem) if init is None else np.array(_values(problem, init))
    check_constraints(problem, U)
    i0, d = problem.first_free, problem.dim
    scale0 = w.tau * w.energy_factor * w.ratio ** i0

    def objective(V):
        return eval_functional(problem, w, V, check=False) / scale0

    rel = np.repeat(_relative_scale(problem, w), d)
    R = normalized_residual(problem, w, U)
    res = float(np.abs(R).max())
    if tol is None:
        tol = 1e-8 * (1.0 + res)
    F = objective(U)
    history = [F]
    shifts = 0
    it = 0
    radius = 10.0
    converged = False
    while True:
        floor = residual_floor(problem, w, U)
        if res <= max(tol, floor):
            converged = True
            break
        if it >= max_iter:
            raise MaxIterations(f"Newton: residual {res:.3e} after {it} iterations")
        it += 1
        J = jacobian(problem, w, U).tocsc()
        g = rel * R.ravel()
        mu = 0.0
        step = None
        for _ in range(40):
            A = J if mu == 0 else (J + mu * sp.identity(J.shape[0], format="csc"))
            try:
                cand = spla.splu(A, permc_spec="NATURAL").solve(-R.ravel())
            except RuntimeError:
                cand = None
            # trust bound: a step far beyond the current scale is cut back by
            # a larger shift (nodes with negligible weight cannot veto it in W)
            if cand is not None and np.all(np.isfinite(cand)) and g @ cand < 0 and \
                    np.abs(cand).max() <= radius * (1.0 + np.abs(U).max()):
                step = cand
                break
            mu = _shift_estimate(problem, U) if mu == 0 else 10 * mu
            shifts += 1
        if step is None:
            raise SingularSystem("no descent direction after Hessian shifts")
        slope = float(g @ step)
        alpha = 1.0
        accepted = False
        for _ in range(60):
            Un = U.copy()
            Un[i0:] += alpha * step.reshape(-1, d)
            try:
                Fn = objective(Un)
                Rn = normalized_residual(problem, w, Un)
            except Exception:
                Fn, Rn = np.inf, None
            if np.isfinite(Fn):
                slack = 64 * EPS * (1.0 + abs(F))
                resn = float(np.abs(Rn).max())
                if Fn <= F + 1e-4 * alpha * slope + slack and (Fn < F - slack or resn < res):
                    accepted = True
                    break
            alpha *= 0.5
        if not accepted:
            if res <= 100 * max(tol, floor):
                converged = True
                break
            raise LineSearchFailure(f"no acceptable step (residual {res:.3e})")
        U, F, R, res = Un, Fn, Rn, resn
        history.append(F)
    traj = DiscreteTrajectory(U, problem.grid)
    rep = MinimizeReport(F * scale0, it, res, max(tol, residual_floor(problem, w, U)), "Newton",
                         converged, {"shifts": shifts, "history": np.array(history) * scale0})
    return traj, rep


# ---------------------------------------------------------------- proximal

class _VelocityModel:
    """The functional written in velocities ``v_i = du_i``, ``i = i0..N``.

    All gradients are normalized by ``n_i = tau^2 e_i c`` so the tail of a
    long horizon stays visible.
    """

    def __init__(self, problem: WideProblem, w: WeightScheme):
        self.p, self.w = problem, w
        self.i0 = problem.first_free
        self.N = problem.grid.N
        self.d = problem.dim
        self.tau = w.tau
        self.r = w.ratio
        c, m = w.energy_factor, problem.mass
        self.beta = w.inertia_factor * problem.rho * m / (c * self.tau ** 3)
        self.h_scale = w.dissipation_factor * m / (self.tau * c)
        self.base = problem.initial_nodes()[-1]
        self.v_fixed = problem.u1 if problem.rho > 0 else None
        self.load = problem.load()
        self.last = problem.last_energy_node
        self.scale0 = w.tau * w.energy_factor * w.ratio ** self.i0

    def to_u(self, V):
        free = self.base + self.tau * np.cumsum(V, axis=0)
        return np.vstack([self.p.initial_nodes(), free])

    def to_v(self, U):
        return np.diff(U, axis=0)[self.i0 - 1:] / self.tau

    def _backsum(self, G, fac):
        # y_i = G_i + fac*y_{i+1}
        return lfilter([1.0], [1.0, -fac], G[::-1], axis=0)[::-1]

    def grad(self, V):
        U = self.to_u(V)
        G = np.zeros_like(V)
        i0, last = self.i0, self.last
        m_e = last + 1 - i0
        if m_e > 0:
            G[:m_e] = self.p.energy.gradient(U[i0:last + 1]) - self.load[i0:last + 1]
        Ghat = self._backsum(G, self.r)
        if self.beta > 0:
            dv = np.diff(np.vstack([self.v_fixed[None, :], V]), axis=0)   # v_i - v_{i-1}
            Ghat = Ghat + self.beta * dv
            Ghat[:-1] -= self.beta * self.r * dv[1:]
        return Ghat

    def objective(self, V):
        try:
            return eval_functional(self.p, self.w, self.to_u(V), check=False) / self.scale0
        except NonFiniteValue:
            return math.inf

    def sym_matvec(self, V, X):
        """Symmetrized normalized Hessian of the smooth part applied to ``X``."""
        U = self.to_u(V)
        i0, last = self.i0, self.last
        m_e = last + 1 - i0
        sr = math.sqrt(self.r)
        Z = self.tau * lfilter([1.0], [1.0, -sr], X, axis=0)
        Q = np.zeros_like(X)
        if m_e > 0:
            H = self.p.energy.hessian_blocks(U[i0:last + 1])
            if sp.issparse(H):
                Q[:m_e] = (H @ Z[:m_e].ravel()).reshape(m_e, self.d)
            else:
                Q[:m_e] = np.einsum("nij,nj->ni", np.asarray(H), Z[:m_e])
        Y = self._backsum(Q, sr)
        if self.beta > 0:
            diag = np.full(len(X), 1.0 + self.r)
            diag[-1] = 1.0
            Y = Y + self.beta * diag[:, None] * X
            Y[:-1] -= self.beta * sr * X[1:]
            Y[1:] -= self.beta * sr * X[:-1]
        return Y

    def lipschitz(self, V, iters: int = 60, seed: int = 0) -> float:
        rng = np.random.default_rng(seed)
        X = rng.standard_normal(V.shape)
        X /= np.linalg.norm(X)
        lam = 0.0
        for _ in range(iters):
            Y = self.sym_matvec(V, X)
            lam_new = float(np.vdot(X, Y))
            nrm = np.linalg.norm(Y)
            if nrm == 0:
                return 0.0
            X = Y / nrm
            if abs(lam_new - lam) <= 1e-6 * abs(lam_new):
                lam = lam_new
                break
            lam = lam_new
        return max(abs(lam), nrm)

    def prox_step(self, Y, G, L):
        diss = self.p.dissipation
        Z = Y - G / L
        if diss is None or diss.trivial:
            return Z
        return diss.prox(Z, self.h_scale / L)


def _fista(model: _VelocityModel, X, L, tol, max_iter, quadratic_E, history):
    """FISTA with gradient-based restart; returns ``(X, L, iterations, residual)``.

    The restart test uses the plain inner product: the weighted one underflows
    on long horizons. Steps that raise the objective are replaced by plain
    proximal-gradient steps, which keeps the recorded objective monotone.
    """
    F = history[-1]
    Y, t = X.copy(), 1.0
    res = np.inf
    last_refresh = 0
    it = 0
    while it < max_iter:
        it += 1
        Xn = model.prox_step(Y, model.grad(Y), L)
        if np.vdot(Y - Xn, Xn - X) > 0:
            t, Y = 1.0, X.copy()
            Xn = model.prox_step(X, model.grad(X), L)
        Fn = model.objective(Xn)
        slack = 64 * EPS * (1.0 + abs(F))
        if Fn > F + slack:
            t, Y = 1.0, X.copy()
            for _ in range(30):
                Xn = model.prox_step(X, model.grad(X), L)
                Fn = model.objective(Xn)
                if Fn <= F + slack:
                    break
                L *= 2.0
            else:
                raise StepTooSmall("proximal step cannot decrease the objective")
        tn = 0.5 * (1 + math.sqrt(1 + 4 * t * t))
        Y = Xn + ((t - 1) / tn) * (Xn - X)
        X, F, t = Xn, min(Fn, F), tn
        history.append(F)
        if it % 10 == 0:
            res = float(np.abs(model.prox_step(X, model.grad(X), L) - X).max())
            if res <= tol * (1.0 + np.abs(X).max()):
                break
        if not quadratic_E and it - last_refresh >= 200:
            L = max(L, 1.05 * model.lipschitz(X))
            last_refresh = it
    return X, L, it, res


def _semismooth_newton(problem: WideProblem, w: WeightScheme, U, tol, max_iter=60):
    """Semismooth Newton on the optimality system in ``(u, xi)``.

    Unknowns are the free nodes and a dual variable ``xi_k`` in the
    subdifferential of ``D`` at ``du_k``. Equations::

        R_k^smooth(u) + alpha_D (xi_k - r xi_{k+1}) = 0
        du_k - prox_{sD}(du_k + s xi_k)            = 0

    The Jacobian is sparse and banded; the generalized derivative of the
    proximal map is used where it is not differentiable. Globalized by a
    backtracking search on the residual norm. Returns ``(U, iterations)``,
    with ``U = None`` on failure.
    """
    diss = problem.dissipation
    i0, d, N, tau, r = problem.first_free, problem.dim, problem.grid.N, w.tau, w.ratio
    _, alpha_d = _coefficients(problem, w)
    n = N + 1 - i0
    nd = n * d
    sigma = 1.0 / alpha_d
    I = sp.identity(nd, format="csr")
    up = sp.diags([np.ones(nd - d)], [d], shape=(nd, nd), format="csr") if n > 1 else \
        sp.csr_matrix((nd, nd))
    A_ux = alpha_d * (I - r * up)
    Ddu = (I - sp.diags([np.ones(nd - d)], [-d], shape=(nd, nd), format="csr")) / tau \
        if n > 1 else I / tau

    def velocities(V):
        return (np.diff(V, axis=0)[i0 - 1:] / tau).ravel()

    def dual_from(V):
        # solve the first block for xi by backward recursion
        S = normalized_residual(problem, w, V, include_dissipation=False)
        return (-lfilter([1.0], [1.0, -r], S[::-1], axis=0)[::-1] / alpha_d).ravel()

    def system(V, xi):
        S = normalized_residual(problem, w, V, include_dissipation=False).ravel()
        a = S + A_ux @ xi
        du = velocities(V)
        b = du - diss.prox(du + sigma * xi, sigma)
        return np.concatenate([a, b]), du

    xi = dual_from(U)
    F, du = system(U, xi)
    theta = float(F @ F)
    it = 0
    for it in range(max_iter):
        if np.abs(F).max() <= tol:
            return U, it
        P = sp.diags(diss.prox_derivative(du + sigma * xi, sigma))
        A_uu = jacobian(problem, w, U, include_dissipation=False)
        K = sp.bmat([[A_uu, A_ux], [(I - P) @ Ddu, -sigma * P]], format="csc")
        try:
            step = spla.splu(K).solve(-F)
        except RuntimeError:
            log.debug("semismooth Newton: singular system")
            return None, it
        if not np.all(np.isfinite(step)):
            log.debug("semismooth Newton: non-finite step")
            return None, it
        alpha = 1.0
        for _ in range(40):
            Un = U.copy()
            Un[i0:] += alpha * step[:nd].reshape(n, d)
            xin = xi + alpha * step[nd:]
            Fn, dun = system(Un, xin)
            thn = float(Fn @ Fn)
            if thn <= (1 - 1e-4 * alpha) * theta or thn <= tol ** 2:
                break
            alpha *= 0.5
        else:
            log.debug("semismooth Newton: line search failed at |F| = %.3e", math.sqrt(theta))
            return None, it
        U, xi, F, du, theta = Un, xin, Fn, dun, thn
    return (U if np.abs(F).max() <= 10 * tol else None), max_iter


def solve_prox(problem: WideProblem, w: WeightScheme, init=None, tol: float = 1e-7,
               max_iter: int = 100_000, warm_iter: int = 300, ssn_iter: int = 100):
    """Proximal splitting for nonsmooth or sub-quadratic dissipation.

    Works in velocity variables where the dissipation is separable, so its
    proximal map is exact. A semismooth Newton solve of the optimality system
    in ``(u, xi)`` is tried first from the initial guess; for small ``eps``
    the system is nearly triangular and this converges, whereas gradient steps
    in the weighted metric let tail velocities grow transiently to overflow.
    Otherwise FISTA (curvature bound ``L`` from power iteration on the
    symmetrized normalized Hessian) runs in chunks of doubling length, each
    followed by a Newton polish that succeeds once the active set is found. Convergence is declared when the
    fixed-point residual ``|T(v) - v|_inf`` of the proximal-gradient map
    ``T`` drops below ``tol * (1 + |v|_inf)``.
    """
    diss = problem.dissipation
    model = _VelocityModel(problem, w)
    U = initial_guess(problem) if init is None else np.array(_values(problem, init))
    check_constraints(problem, U)
    X = model.to_v(U)
    L = 1.05 * model.lipschitz(X) + 1e-300
    quadratic_E = problem.energy.quadratic_matrix is not None
    history = [model.objective(X)]

    def fp_residual(V):
        return float(np.abs(model.prox_step(V, model.grad(V), L) - V).max())

    smooth_diss = diss is None or diss.trivial
    phase = "fista"
    if not smooth_diss:
        # for small eps the system is nearly triangular and Newton converges
        # from the constant start; FISTA is only needed when it does not
        Us, it = _semismooth_newton(problem, w, U, 1e-3 * tol, max_iter=ssn_iter)
        Xs = None if Us is None else model.to_v(Us)
        if Xs is not None and fp_residual(Xs) <= tol * (1.0 + np.abs(Xs).max()):
            X = Xs
            history.append(model.objective(X))
            phase = "semismooth"
    else:
        it = 0
    res = fp_residual(X)
    tol_abs = tol * (1.0 + np.abs(X).max())
    chunk = warm_iter
    while phase == "fista" and res > tol_abs:
        if it >= max_iter:
            raise MaxIterations(f"prox: residual {res:.3e} after {it} iterations")
        X, L, more, _ = _fista(model, X, L, tol, min(chunk, max_iter - it), quadratic_E,
                               history)
        it += more
        res = fp_residual(X)
        tol_abs = tol * (1.0 + np.abs(X).max())
        if res <= tol_abs or smooth_diss:
            continue
        # Newton polish; it converges once FISTA has found the active set
        Us, more = _semismooth_newton(problem, w, model.to_u(X), 1e-3 * tol, max_iter=ssn_iter)
        it += more
        if Us is not None:
            Xs = model.to_v(Us)
            Fs = model.objective(Xs)
            if Fs <= history[-1] + 64 * EPS * (1 + abs(history[-1])) and \
                    fp_residual(Xs) <= tol * (1.0 + np.abs(Xs).max()):
                X = Xs
                history.append(Fs)
                phase = "fista+semismooth"
        chunk *= 2
    res = fp_residual(X)
    tol_abs = tol * (1.0 + np.abs(X).max())
    Uf = model.to_u(X)
    traj = DiscreteTrajectory(Uf, problem.grid)
    rep = MinimizeReport(eval_functional(problem, w, Uf), it, res, tol_abs, "ProxSplit", True,
                         {"L": L, "phase": phase,
                          "history": np.array(history) * model.scale0,
                          "subgradient_violation": _subgradient_violation(model, X, tol_abs)})
    return traj, rep


def _subgradient_violation(model: _VelocityModel, V, vtol: float = 0.0) -> float:
    """Distance of ``-Ghat * tau c / (kappa m)`` to ``dD(v)``, maximized over nodes.

    Velocities with ``|v| <= vtol`` are treated as sitting on the kink.
    """
    diss = model.p.dissipation
    G = model.grad(V)
    if diss is None or diss.trivial:
        return float(np.abs(G).max())
    xi = -G / model.h_scale
    V = np.where(np.abs(V) <= vtol, 0.0, V)
    lo, hi = diss.subgradient(V)
    gap = np.maximum(lo - xi, 0) + np.maximum(xi - hi, 0)
    ref = 1.0 + np.maximum(np.abs(lo), np.abs(hi))
    return float((gap / ref).max())


# ---------------------------------------------------------------- brute force

def brute_force(problem: WideProblem, w: WeightScheme, tol: float = 1e-10,
                starts: int = 20, seed: int = 0):
    """Multi-start derivative-free minimization (Powell, then Nelder-Mead).

    The search runs in velocity variables, where a one-homogeneous dissipation
    has coordinate-aligned kinks. Lowest objective wins; near-ties (< 1e-12)
    go to the lexicographically smallest trajectory.
    """
    n_free = (problem.grid.N + 1 - problem.first_free) * problem.dim
    if n_free > 12:
        raise DimensionTooLarge(f"{n_free} free unknowns (max 12)")
    model = _VelocityModel(problem, w)
    shape = (problem.grid.N + 1 - problem.first_free, problem.dim)

    def f(x):
        try:
            return model.objective(x.reshape(shape))
        except Exception:
            return np.inf

    rng = np.random.default_rng(seed)
    x_init = model.to_v(initial_guess(problem)).ravel()
    vscale = 1.0 + np.abs(problem.u0).max() / problem.grid.T
    candidates = [x_init] + [x_init + vscale * rng.standard_normal(n_free) for _ in range(starts)]
    best = None
    nfev = 0
    for x0 in candidates:
        r1 = so.minimize(f, x0, method="Powell",
                         options={"xtol": tol, "ftol": 1e-15, "maxfev": 200_000})
        r2 = so.minimize(f, r1.x, method="Nelder-Mead",
                         options={"xatol": tol, "fatol": 1e-15, "maxfev": 200_000,
                                  "adaptive": True})
        x, fx = (r2.x, r2.fun) if r2.fun <= r1.fun else (r1.x, r1.fun)
        r3 = so.minimize(f, x, method="Powell", options={"xtol": tol, "ftol": 1e-15})
        if r3.fun < fx:
            x, fx = r3.x, r3.fun
        nfev += r1.nfev + r2.nfev + r3.nfev
        if best is None or fx < best[1] - 1e-12 or (
                abs(fx - best[1]) <= 1e-12 and tuple(x) < tuple(best[0])):
            best = (x, fx)
    U = model.to_u(best[0].reshape(shape))
    traj = DiscreteTrajectory(U, problem.grid)
    rep = MinimizeReport(eval_functional(problem, w, U), nfev, float("nan"), tol, "BruteForce",
                         True, {"starts": len(candidates)})
    return traj, rep


# ---------------------------------------------------------------- dispatcher

def selection_ramp(problem: WideProblem, delta: float = 1e-3) -> np.ndarray:
    t = problem.grid.nodes
    U = np.tile(problem.u0, (len(t), 1)) + delta * (t ** 2)[:, None]
    U[: problem.first_free] = problem.initial_nodes()
    return U


def _minimize_once(problem: WideProblem, w: WeightScheme, init=None, **kw):
    diss = problem.dissipation
    if _is_quadratic(problem) and init is None:
        return solve_quadratic(problem, w)
    if diss is not None and not diss.smooth:
        return solve_prox(problem, w, init, **kw)
    if init is None and problem.energy.name == "sqrt_selection":
        init = selection_ramp(problem)
    try:
        return solve_newton(problem, w, init, **kw)
    except (LineSearchFailure, MaxIterations, SingularSystem) as exc:
        if not (w.default_factors and problem.energy.lambda_convexity < 0):
            raise
        log.debug("Newton failed at eps=%g (%s); continuing from larger eps", w.epsilon, exc)
    try:
        return solve_continuation(problem, w.epsilon, init, **kw)
    except (LineSearchFailure, MaxIterations, SingularSystem) as exc:
        if problem.grid.N < 2 * COARSE_N:
            raise
        log.debug("eps continuation failed (%s); continuing from coarser grids", exc)
    return solve_grid_continuation(problem, w, init, **kw)


def minimize(problem: WideProblem, w: WeightScheme, init=None, starts: Optional[int] = None,
             seed: int = 0, **kw):
    """Pick the solver matching the problem structure.

    For nonconvex energies the local solvers can stop at a stationary
    trajectory that is not the global minimizer (e.g. a component held by a
    dissipation threshold in the wrong well). ``starts`` extra solves from
    seeded random trajectories are then run and the lowest objective is kept;
    the default is ``DEFAULT_STARTS`` when the free dimension is at most
    ``MULTISTART_MAX_FREE`` and 0 otherwise. Failed restarts are skipped.
    """
    u, rep = _minimize_once(problem, w, init, **kw)
    n_free = (problem.grid.N + 1 - problem.first_free) * problem.dim
    if starts is None:
        nonconvex = problem.energy.lambda_convexity < 0
        starts = DEFAULT_STARTS if nonconvex and n_free <= MULTISTART_MAX_FREE else 0
    if starts <= 0:
        return u, rep
    rng = np.random.default_rng(seed)
    U0 = np.asarray(u.values)
    scale = 1.0 + float(np.abs(U0).max())
    best = (u, rep)
    for _ in range(starts):
        guess = problem.u0 + scale * rng.uniform(-1.0, 1.0, U0.shape)
        guess[: problem.first_free] = U0[: problem.first_free]
        try:
            cand = _minimize_once(problem, w, guess, **kw)
        except SolveError as exc:
            log.debug("restart failed: %s", exc)
            continue
        if cand[1].converged and cand[1].objective < best[1].objective - \
                1e-12 * (1.0 + abs(best[1].objective)):
            best = cand
    best[1].extras["starts"] = starts + 1
    return best


def solve_continuation(problem: WideProblem, epsilon: float, init=None, start: float = 0.03,
                       factor: float = 3.0, **kw):
    """Newton along a decreasing sequence of ``eps``, each stage warm-started.

    For nonconvex energies and small ``eps`` the weights on late nodes are far
    below roundoff relative to early ones, so ``W`` gives no guidance there and
    Newton from a crude guess can stall. The sequence starts at
    ``start * T`` and shrinks by ``factor`` down to ``epsilon``.
    """
    hi = max(epsilon, start * problem.grid.T)
    n = max(0, int(math.floor(math.log(hi / epsilon) / math.log(factor) + 1e-9)))
    eps_seq = [epsilon * factor ** k for k in range(n, 0, -1)] + [epsilon]
    U = init
    for e in eps_seq:
        u, rep = solve_newton(problem, weights_for(problem, e), U, **kw)
        U = u.values
    rep.extras["continuation"] = np.array(eps_seq)
    return u, rep


def _resample(problem: WideProblem, U: np.ndarray, grid: TimeGrid) -> np.ndarray:
    t = problem.grid.nodes
    return np.column_stack([np.interp(grid.nodes, t, U[:, j]) for j in range(U.shape[1])])


def solve_grid_continuation(problem: WideProblem, w: WeightScheme, init=None,
                            coarse_n: int = COARSE_N, factor: int = 4, **kw):
    """Newton on a chain of coarser time grids, each solution interpolated to the next.

    On fine grids a crude guess (e.g. a tiny ramp near a singular point of
    ``E``) can need many damped steps; the coarse solves are cheap and put the
    fine iteration close to its basin.
    """
    grids = [problem.grid]
    while grids[-1].N // factor >= coarse_n:
        grids.append(TimeGrid(problem.grid.T, grids[-1].N // factor))
    U = None if init is None else np.array(_values(problem, init))
    src = problem
    for g in reversed(grids):
        P = problem.replace(grid=g)
        guess = None
        if U is not None:
            guess = _resample(src, U, g)
            fixed = P.initial_nodes()
            guess[: len(fixed)] = fixed
        elif P.energy.name == "sqrt_selection":
            guess = selection_ramp(P)
        try:
            u, rep = solve_newton(P, weights_for(P, w.epsilon), guess, **kw)
        except (LineSearchFailure, MaxIterations, SingularSystem):
            u, rep = solve_continuation(P, w.epsilon, guess, **kw)
        U, src = u.values, P
    rep.extras["grids"] = np.array([g.N for g in reversed(grids)])
    return u, rep
