"""Discrete weighted inertia-dissipation-energy functional.

With ``r = eps/(eps+tau)``, ``e_i = r^i``, factors ``kappa`` (dissipation),
``c`` (energy) and mass ``m`` the functional of a trajectory ``u_0..u_N`` is::

    W(u) = sum_{i=i0}^{N}   tau e_i [ eps^2 rho m/2 |d2u_i|^2 + kappa m D(du_i) ]
         + sum_{i=i0}^{N-1} tau e_i c [ E(u_i) - f_i.u_i ]

with ``i0 = 2`` when ``rho > 0`` (``u_0``, ``u_1`` fixed) and ``i0 = 1``
otherwise. The energy of the last node is left out: its stationarity row is
then the natural condition ``u_N = u_{N-1}`` in the first-order case.

Solvers work with the *normalized residual* ``R_k = dW/du_k / (tau e_k c)``
because the raw weights underflow for long horizons.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import (
    ConstraintViolated,
    NonFiniteValue,
    NonSmoothDissipation,
    ShapeMismatch,
    SingularityRisk,
)
from .problem import DiscreteTrajectory, WeightScheme, WideProblem


def _values(problem: WideProblem, u) -> np.ndarray:
    U = u.values if isinstance(u, DiscreteTrajectory) else np.asarray(u, dtype=float)
    if U.ndim == 1:
        U = U[:, None]
    if U.shape != (problem.grid.N + 1, problem.dim):
        raise ShapeMismatch(f"trajectory shape {U.shape}, expected "
                            f"{(problem.grid.N + 1, problem.dim)}")
    return U


def check_constraints(problem: WideProblem, U: np.ndarray) -> None:
    fixed = problem.initial_nodes()
    scale = 1.0 + np.abs(fixed).max()
    if np.abs(U[: len(fixed)] - fixed).max() > 1e-12 * scale:
        raise ConstraintViolated("trajectory does not match the initial data")


def assemble_full(problem: WideProblem, free: np.ndarray) -> np.ndarray:
    """Stack fixed initial nodes on top of the free block ``(n_free, d)``."""
    free = np.asarray(free, dtype=float).reshape(-1, problem.dim)
    return np.vstack([problem.initial_nodes(), free])


def initial_guess(problem: WideProblem) -> np.ndarray:
    """Constant continuation of the last fixed node."""
    fixed = problem.initial_nodes()
    n_free = problem.grid.N + 1 - len(fixed)
    return np.vstack([fixed, np.tile(fixed[-1], (n_free, 1))])


def _coefficients(problem: WideProblem, w: WeightScheme):
    tau, c, m = w.tau, w.energy_factor, problem.mass
    alpha_i = w.inertia_factor * problem.rho * m / (c * tau ** 2)
    alpha_d = w.dissipation_factor * m / (c * tau)
    return alpha_i, alpha_d


def eval_functional(problem: WideProblem, w: WeightScheme, u, check: bool = True) -> float:
    """Value of the discrete functional (including the fixed-node-free terms only)."""
    U = _values(problem, u)
    if check:
        check_constraints(problem, U)
    N, tau, i0 = problem.grid.N, w.tau, problem.first_free
    e = w.weights
    total = 0.0
    diss = problem.dissipation
    if diss is not None and not diss.trivial:
        V = np.diff(U, axis=0) / tau                      # V[i-1] = du_i
        terms = diss.value(V[i0 - 1:])
        total += tau * w.dissipation_factor * problem.mass * np.dot(e[i0:], terms)
    if problem.rho > 0:
        P = np.diff(U, n=2, axis=0) / tau ** 2            # P[i-2] = d2u_i
        terms = 0.5 * (P * P).sum(axis=1)
        total += tau * w.inertia_factor * problem.rho * problem.mass * np.dot(e[2:], terms)
    last = problem.last_energy_node
    nodes = slice(i0, last + 1)
    f = problem.load()[nodes]
    terms = problem.energy.value(U[nodes]) - (f * U[nodes]).sum(axis=1)
    total += tau * w.energy_factor * np.dot(e[nodes], terms)
    total = float(total)
    if not np.isfinite(total):
        raise NonFiniteValue("functional is not finite")
    return total


def normalized_residual(problem: WideProblem, w: WeightScheme, u,
                        include_dissipation: bool = True) -> np.ndarray:
    """``R_k`` for the free nodes ``k = i0..N``, shape ``(n_free, d)``."""
    U = _values(problem, u)
    N, tau, i0, r = problem.grid.N, w.tau, problem.first_free, w.ratio
    alpha_i, alpha_d = _coefficients(problem, w)
    R = np.zeros((N + 1, problem.dim))
    diss = problem.dissipation
    if include_dissipation and diss is not None and not diss.trivial:
        if not diss.smooth and diss.kind == "one_homogeneous":
            raise NonSmoothDissipation("one-homogeneous dissipation has no gradient")
        Dp = diss.derivative(np.diff(U, axis=0) / tau)    # Dp[i-1] = D'(du_i)
        R[1:] += alpha_d * Dp
        R[1:N] -= alpha_d * r * Dp[1:]
    if problem.rho > 0:
        P = np.diff(U, n=2, axis=0) / tau ** 2
        R[2:] += alpha_i * P
        R[2:N] -= 2 * r * alpha_i * P[1:]
        R[2:N - 1] += r * r * alpha_i * P[2:]
        # rows 0 and 1 are fixed; their stencil contributions are irrelevant
    last = problem.last_energy_node
    f = problem.load()
    R[i0:last + 1] += problem.energy.gradient(U[i0:last + 1]) - f[i0:last + 1]
    out = R[i0:]
    if not np.all(np.isfinite(out)):
        raise NonFiniteValue("residual is not finite")
    return out


def row_scale(problem: WideProblem, w: WeightScheme) -> np.ndarray:
    """``tau e_k c`` for the free nodes (may underflow to zero)."""
    return w.tau * w.energy_factor * w.weights[problem.first_free:]


def eval_gradient(problem: WideProblem, w: WeightScheme, u) -> np.ndarray:
    """Gradient with respect to the free nodes, flattened node-major."""
    diss = problem.dissipation
    if diss is not None and not diss.smooth:
        raise NonSmoothDissipation(f"{diss.kind} dissipation (p={diss.p}) is not "
                                   "differentiable; use the proximal solver")
    U = _values(problem, u)
    check_constraints(problem, U)
    R = normalized_residual(problem, w, U)
    return (row_scale(problem, w)[:, None] * R).ravel()


def _offset_diag(rowcoef: np.ndarray, offset: int) -> np.ndarray:
    """Entries of the diagonal ``offset`` given per-row coefficients."""
    if offset >= 0:
        return rowcoef[: rowcoef.size - offset]
    return rowcoef[-offset:]


@dataclass(frozen=True)
class HessianOperator:
    """Jacobian of the normalized residual, with the row scaling back to ``W``.

    ``matrix`` is ``J = dR/du_free``; the Hessian of ``W`` is ``diag(scale) J``.
    ``symmetric()`` returns the similar symmetric matrix
    ``S^{1/2} J S^{-1/2}`` whose spectrum equals that of ``J``.
    """

    matrix: sp.csr_matrix
    scale: np.ndarray
    log_ratio: float
    block: int
    bandwidth: int

    def matvec(self, x: np.ndarray) -> np.ndarray:
        """Action of the Hessian of ``W``."""
        return np.repeat(self.scale, self.block) * (self.matrix @ x)

    def normalized_matvec(self, x: np.ndarray) -> np.ndarray:
        return self.matrix @ x

    def symmetric(self) -> sp.csr_matrix:
        J = self.matrix.tocoo()
        node_r = J.row // self.block
        node_c = J.col // self.block
        fac = np.exp(0.5 * self.log_ratio * (node_r - node_c))
        return sp.csr_matrix((J.data * fac, (J.row, J.col)), shape=J.shape)


def jacobian(problem: WideProblem, w: WeightScheme, u,
             include_dissipation: bool = True) -> sp.csr_matrix:
    """Sparse Jacobian of :func:`normalized_residual` w.r.t. the free nodes."""
    U = _values(problem, u)
    N, tau, i0, r, d = problem.grid.N, w.tau, problem.first_free, w.ratio, problem.dim
    alpha_i, alpha_d = _coefficients(problem, w)
    n = N + 1 - i0
    nd = n * d
    k = np.arange(i0, N + 1)                 # node of each free row
    has1 = (k + 1 <= N).astype(float)
    has2 = (k + 2 <= N).astype(float)
    diags: dict[int, np.ndarray] = {}

    def add(offset_nodes, coef_rows):
        o = offset_nodes * d
        if abs(o) >= nd:
            return
        vals = _offset_diag(coef_rows.reshape(-1), o)
        diags[o] = diags.get(o, 0.0) + vals

    diss = problem.dissipation
    if include_dissipation and diss is not None and not diss.trivial:
        if not diss.smooth:
            raise NonSmoothDissipation("Hessian needs a smooth dissipation")
        S = diss.second_derivative(np.diff(U, axis=0) / tau)  # S[i-1] at du_i
        g = alpha_d / tau
        s_k = S[k - 1]
        s_k1 = np.vstack([S[k[:-1]], np.zeros((1, d))])
        add(0, g * (s_k + r * s_k1))
        add(-1, -g * s_k)
        add(1, -g * r * s_k1)
    if problem.rho > 0:
        b = alpha_i / tau ** 2
        ones = np.ones((n, d))
        add(0, b * (1 + 4 * r * has1 + r * r * has2)[:, None] * ones)
        add(-1, b * (-2 - 2 * r * has1)[:, None] * ones)
        add(-2, b * ones)
        add(1, b * (-2 * r * has1 - 2 * r * r * has2)[:, None] * ones)
        add(2, b * (r * r * has2)[:, None] * ones)
    offsets = sorted(diags)
    J = sp.diags([diags[o] for o in offsets], offsets, shape=(nd, nd), format="csr") \
        if offsets else sp.csr_matrix((nd, nd))
    last = problem.last_energy_node
    m_e = last + 1 - i0
    if m_e > 0:
        H = problem.energy.hessian_blocks(U[i0:last + 1])
        H = blocks_to_sparse(H)
        if m_e < n:
            H = sp.block_diag([H, sp.csr_matrix(((n - m_e) * d, (n - m_e) * d))], format="csr")
        J = J + H
    return J.tocsr()


def blocks_to_sparse(H) -> sp.csr_matrix:
    """Dense ``(n, d, d)`` stack (or sparse matrix) as block-diagonal CSR."""
    if sp.issparse(H):
        return sp.csr_matrix(H)
    H = np.asarray(H, dtype=float)
    n, d, _ = H.shape
    base = np.arange(n)[:, None, None] * d
    rows = np.broadcast_to(base + np.arange(d)[None, :, None], H.shape)
    cols = np.broadcast_to(base + np.arange(d)[None, None, :], H.shape)
    return sp.csr_matrix((H.ravel(), (rows.ravel(), cols.ravel())), shape=(n * d, n * d))


def hessian_operator(problem: WideProblem, w: WeightScheme, u) -> HessianOperator:
    bw = 2 if problem.rho > 0 else 1
    return HessianOperator(jacobian(problem, w, u), row_scale(problem, w),
                           float(np.log(w.ratio)), problem.dim, bw)


@dataclass(frozen=True)
class BandedSystem:
    """Tridiagonal system in LAPACK banded storage (``ab`` has 3 rows)."""

    ab: np.ndarray
    rhs: np.ndarray
    lower: int = 1
    upper: int = 1

    @property
    def size(self) -> int:
        return self.ab.shape[1]

    def dense(self) -> np.ndarray:
        n = self.size
        A = np.zeros((n, n))
        A[np.arange(n), np.arange(n)] = self.ab[1]
        A[np.arange(n - 1), np.arange(1, n)] = self.ab[0, 1:]
        A[np.arange(1, n), np.arange(n - 1)] = self.ab[2, :-1]
        return A

    def matvec(self, x: np.ndarray) -> np.ndarray:
        y = self.ab[1] * x
        y[:-1] += self.ab[0, 1:] * x[1:]
        y[1:] += self.ab[2, :-1] * x[:-1]
        return y


def linear_coefficients(problem: WideProblem, w: WeightScheme):
    """Row coefficients ``(sub, diag, sup, last_sub, last_diag)`` and the
    energy/forcing multiplier of the scalar linear first-order system."""
    diss = problem.dissipation
    Q = problem.energy.quadratic_matrix
    if problem.rho != 0 or problem.dim != 1 or Q is None or diss is None \
            or diss.kind != "quadratic" or problem.quasistatic:
        raise ShapeMismatch("linear system needs rho = 0, d = 1, quadratic E and D")
    lam = float(Q[0, 0])
    eps, tau, nu, m = w.epsilon, w.tau, diss.nu, problem.mass
    if lam < 0 and tau >= -1.0 / lam:
        raise SingularityRisk(f"tau={tau} >= -1/lambda={-1.0 / lam}")
    if w.default_factors:
        lead = nu * m * (eps + tau)
        diag = nu * m * (2 * eps + tau) + lam * tau ** 2
        sup = -eps * nu * m
        efac = 1.0
    else:
        r = w.ratio
        k = w.dissipation_factor
        lead = k * nu * m / r
        sup = -k * nu * m
        efac = w.energy_factor / r
        diag = lead - sup + efac * lam * tau ** 2
    return -lead, diag, sup, sup, -sup, efac


def assemble_linear_system(problem: WideProblem, w: WeightScheme) -> BandedSystem:
    """Tridiagonal system ``A (u_1..u_N) = b`` of the scalar linear problem.

    Rows ``k < N`` are ``tau^2 R_k``, the last row is ``tau^2 r R_N``; for unit
    ``nu`` and mass the entries are ``(-eps-tau, 2eps+tau+lam tau^2, -eps)`` and
    the last row reads ``(-eps, eps)``.
    """
    sub, diag, sup, last_sub, last_diag, efac = linear_coefficients(problem, w)
    N = problem.grid.N
    tau = w.tau
    ab = np.zeros((3, N))
    ab[0, 1:] = sup
    ab[1, :] = diag
    ab[2, :-1] = sub
    ab[1, -1] = last_diag
    ab[2, -2] = last_sub
    u0 = float(problem.u0[0])
    b = np.zeros(N)
    if w.default_factors:
        nu_m = problem.dissipation.nu * problem.mass
        b[0] = nu_m * (w.epsilon * u0 + tau * u0)
    else:
        b[0] = -sub * u0
    if problem.energy.forcing is not None:
        f = problem.load()[1:N, 0]
        b[:N - 1] += efac * tau ** 2 * f
    return BandedSystem(ab, b)
