"""Problem data model: time grid, energies, dissipations, weights, trajectories.

Energies work on batches of states. A batch is an array of shape ``(n, d)``;
``fun`` maps it to ``(n,)``, ``grad`` to ``(n, d)`` and ``hess`` either to a
dense ``(n, d, d)`` stack or to a sparse block-diagonal ``(n*d, n*d)`` matrix.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp

from .errors import (
    InvalidParams,
    InvalidProblem,
    NonPositiveEpsilon,
    UnknownEnergy,
)


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid ``t_i = i * tau`` on ``[0, T]`` with ``N`` steps.

    ``step`` pins ``tau`` exactly when ``T/N`` would round differently
    (``0.1*3/3 != 0.1``); it must agree with ``T/N`` to a few ulps.
    """

    T: float
    N: int
    step: Optional[float] = None

    def __post_init__(self):
        if not (np.isfinite(self.T) and self.T > 0):
            raise InvalidProblem(f"horizon must be positive, got {self.T!r}")
        if int(self.N) != self.N or self.N < 2:
            raise InvalidProblem(f"need an integer N >= 2, got {self.N!r}")
        object.__setattr__(self, "N", int(self.N))
        object.__setattr__(self, "T", float(self.T))
        if self.step is not None:
            step = float(self.step)
            if abs(step * self.N - self.T) > 4 * np.spacing(self.T):
                raise InvalidProblem(f"step {step} inconsistent with T/N = {self.T / self.N}")
            object.__setattr__(self, "step", step)

    @classmethod
    def from_step(cls, tau: float, N: int) -> "TimeGrid":
        """Grid with exactly ``tau`` and ``N`` steps (``T = N*tau``)."""
        return cls(tau * N, N, step=tau)

    @classmethod
    def covering(cls, T: float, tau: float) -> "TimeGrid":
        """Grid of step ``tau`` on ``[0, T]`` (``T/tau`` rounded to an integer)."""
        N = int(round(T / tau))
        return cls.from_step(tau, N)

    @property
    def tau(self) -> float:
        return self.step if self.step is not None else self.T / self.N

    @property
    def nodes(self) -> np.ndarray:
        # i*tau rather than linspace so that nodes[i] == i*tau bitwise
        return np.arange(self.N + 1) * self.tau


def _as_batch(u, d: int) -> tuple[np.ndarray, bool]:
    u = np.asarray(u, dtype=float)
    if u.ndim == 0:
        u = u.reshape(1)
    single = u.ndim == 1
    if single:
        u = u.reshape(1, -1)
    if u.shape[1] != d:
        raise InvalidParams(f"state dimension {u.shape[1]} != {d}")
    return u, single


def _fd_hessian(grad: Callable, U: np.ndarray, step: float = 1e-6) -> np.ndarray:
    """Central differences of a batched gradient, one component at a time."""
    n, d = U.shape
    H = np.empty((n, d, d))
    h = step * (1.0 + np.abs(U))
    for j in range(d):
        Up = U.copy()
        Um = U.copy()
        Up[:, j] += h[:, j]
        Um[:, j] -= h[:, j]
        H[:, :, j] = (grad(Up) - grad(Um)) / (2 * h[:, j])[:, None]
    return 0.5 * (H + H.transpose(0, 2, 1))


@dataclass(frozen=True)
class EnergyModel:
    """Potential energy ``E`` on ``R^d`` with an optional time-dependent load.

    The load enters as ``E(t, u) = E(u) - f(t).u``. ``forcing`` is a callable
    mapping an array of times ``(n,)`` to ``(n, d)`` (a scalar result is
    broadcast).
    """

    dim: int
    fun: Callable[[np.ndarray], np.ndarray]
    grad: Callable[[np.ndarray], np.ndarray]
    hess: Optional[Callable] = None
    quadratic_matrix: Optional[np.ndarray] = None
    lambda_convexity: float = 0.0
    forcing: Optional[Callable] = None
    name: str = "custom"

    def __post_init__(self):
        if self.quadratic_matrix is not None:
            Q = _frozen(np.atleast_2d(self.quadratic_matrix))
            if Q.shape != (self.dim, self.dim) or not np.allclose(Q, Q.T, rtol=0, atol=0):
                raise InvalidParams("quadratic_matrix must be symmetric d x d")
            object.__setattr__(self, "quadratic_matrix", Q)

    # single-state or batched evaluation
    def value(self, u):
        U, single = _as_batch(u, self.dim)
        v = np.asarray(self.fun(U), dtype=float)
        return float(v[0]) if single else v

    def gradient(self, u):
        U, single = _as_batch(u, self.dim)
        g = np.asarray(self.grad(U), dtype=float)
        return g[0] if single else g

    def hessian(self, u):
        """Dense Hessians, ``(d, d)`` for one state or ``(n, d, d)``."""
        U, single = _as_batch(u, self.dim)
        H = self.hessian_blocks(U)
        if sp.issparse(H):
            n, d = U.shape
            H = H.tocsr()
            H = np.stack([H[i * d:(i + 1) * d, i * d:(i + 1) * d].toarray() for i in range(n)])
        return H[0] if single else H

    def hessian_blocks(self, U: np.ndarray):
        """Hessians of a batch, dense ``(n, d, d)`` or sparse block diagonal."""
        if self.hess is None:
            return _fd_hessian(self.grad, U)
        return self.hess(U)

    @property
    def has_hessian(self) -> bool:
        return self.hess is not None

    def load(self, times) -> np.ndarray:
        times = np.atleast_1d(np.asarray(times, dtype=float))
        if self.forcing is None:
            return np.zeros((times.size, self.dim))
        f = np.asarray(self.forcing(times), dtype=float)
        # a 1-d series with one value per time is a scalar load on every component
        if f.ndim == 1 and f.size == times.size:
            f = f[:, None]
        return np.array(np.broadcast_to(f, (times.size, self.dim)))

    def check_consistency(self, rng=None, npts: int = 10, scale: float = 1.0,
                          rtol: float = 1e-6) -> None:
        """Compare gradient with central differences of ``value``.

        Also cross-checks ``quadratic_matrix`` against value/gradient/Hessian
        when it is present. Raises :class:`InvalidParams` on mismatch.
        """
        rng = np.random.default_rng(rng)
        U = scale * rng.standard_normal((npts, self.dim))
        G = self.gradient(U)
        for j in range(self.dim):
            h = 1e-5 * (1.0 + np.abs(U[:, j]))
            Up, Um = U.copy(), U.copy()
            Up[:, j] += h
            Um[:, j] -= h
            fd = (self.value(Up) - self.value(Um)) / (2 * h)
            err = np.abs(fd - G[:, j])
            if np.any(err > rtol * (1.0 + np.abs(G).max(axis=1))):
                raise InvalidParams(f"gradient of {self.name} inconsistent (component {j})")
        Q = self.quadratic_matrix
        if Q is not None:
            for u in U[:3]:
                ref = 1.0 + abs(0.5 * u @ Q @ u)
                if abs(self.value(u) - 0.5 * u @ Q @ u) > 1e-12 * ref:
                    raise InvalidParams("value disagrees with quadratic_matrix")
                if np.abs(self.gradient(u) - Q @ u).max() > 1e-12 * (1 + np.abs(Q @ u).max()):
                    raise InvalidParams("gradient disagrees with quadratic_matrix")
                if self.has_hessian and np.abs(self.hessian(u) - Q).max() > 1e-12 * (1 + np.abs(Q).max()):
                    raise InvalidParams("hessian disagrees with quadratic_matrix")


_DISSIPATION_KINDS = ("quadratic", "power", "one_homogeneous")


@dataclass(frozen=True)
class DissipationModel:
    """Componentwise convex dissipation potential ``D(v) = sum_j phi(v_j)``.

    * ``quadratic``: ``phi(v) = nu v^2 / 2``
    * ``power``: ``phi(v) = coeff |v|^p / p`` with ``p > 1``
    * ``one_homogeneous``: ``phi(v) = alpha |v|``
    """

    kind: str
    nu: float = 0.0
    p: float = 2.0
    coeff: float = 1.0
    alpha: float = 0.0

    def __post_init__(self):
        if self.kind not in _DISSIPATION_KINDS:
            raise InvalidParams(f"unknown dissipation kind {self.kind!r}")
        if self.kind == "quadratic" and not self.nu >= 0:
            raise InvalidParams("nu must be >= 0")
        if self.kind == "power" and not (self.p > 1 and self.coeff > 0):
            raise InvalidParams("power dissipation needs p > 1 and coeff > 0")
        if self.kind == "one_homogeneous" and not self.alpha > 0:
            raise InvalidParams("alpha must be > 0")

    @classmethod
    def quadratic(cls, nu: float = 1.0):
        return cls("quadratic", nu=float(nu), p=2.0)

    @classmethod
    def power_law(cls, p: float, coeff: float = 1.0):
        return cls("power", p=float(p), coeff=float(coeff))

    @classmethod
    def one_homogeneous(cls, alpha: float):
        return cls("one_homogeneous", alpha=float(alpha), p=1.0)

    @property
    def trivial(self) -> bool:
        return self.kind == "quadratic" and self.nu == 0

    @property
    def smooth(self) -> bool:
        """Twice differentiable with bounded second derivative near 0."""
        return self.kind == "quadratic" or (self.kind == "power" and self.p >= 2)

    def density(self, v):
        v = np.asarray(v, dtype=float)
        if self.kind == "quadratic":
            return 0.5 * self.nu * v * v
        if self.kind == "power":
            return self.coeff * np.abs(v) ** self.p / self.p
        return self.alpha * np.abs(v)

    def value(self, v):
        """``D`` summed over the last axis."""
        v = np.asarray(v, dtype=float)
        if v.ndim == 0:
            return float(self.density(v))
        return self.density(v).sum(axis=-1)

    def derivative(self, v):
        v = np.asarray(v, dtype=float)
        if self.kind == "quadratic":
            return self.nu * v
        if self.kind == "power":
            return self.coeff * np.abs(v) ** (self.p - 1) * np.sign(v)
        # a selection of the subdifferential; 0 at the kink
        return self.alpha * np.sign(v)

    def second_derivative(self, v):
        v = np.asarray(v, dtype=float)
        if self.kind == "quadratic":
            return np.full_like(v, self.nu)
        if self.kind == "power":
            with np.errstate(divide="ignore"):
                return self.coeff * (self.p - 1) * np.abs(v) ** (self.p - 2)
        return np.zeros_like(v)

    def subgradient(self, v):
        """Componentwise interval ``[lo, hi]`` describing the subdifferential."""
        v = np.asarray(v, dtype=float)
        if self.kind == "one_homogeneous":
            lo = np.where(v > 0, self.alpha, -self.alpha)
            hi = np.where(v < 0, -self.alpha, self.alpha)
            return lo, hi
        g = self.derivative(v)
        return g, g.copy()

    def prox(self, v, scale):
        """Proximal map ``argmin_w scale*D(w) + |w - v|^2 / 2`` (componentwise).

        ``scale`` may be an array broadcastable against ``v``.
        """
        v = np.asarray(v, dtype=float)
        s = np.asarray(scale, dtype=float)
        if self.kind == "quadratic":
            return v / (1.0 + s * self.nu)
        if self.kind == "one_homogeneous":
            return np.sign(v) * np.maximum(np.abs(v) - s * self.alpha, 0.0)
        # power law: w = sign(v) t with t + s c t^(p-1) = |v|, monotone in t
        a = np.abs(v)
        sc = np.broadcast_to(s * self.coeff, a.shape)
        lo = np.zeros_like(a)
        hi = a.copy()
        t = 0.5 * (lo + hi)
        for _ in range(200):
            t = 0.5 * (lo + hi)
            too_big = t + sc * t ** (self.p - 1) > a
            hi = np.where(too_big, t, hi)
            lo = np.where(too_big, lo, t)
            if np.all(hi - lo <= 4e-16 * (1 + a)):
                break
        return np.sign(v) * 0.5 * (lo + hi)

    def prox_derivative(self, v, scale):
        """Componentwise (generalized) derivative of :meth:`prox` in ``v``."""
        v = np.asarray(v, dtype=float)
        s = np.asarray(scale, dtype=float)
        if self.kind == "quadratic":
            return np.broadcast_to(1.0 / (1.0 + s * self.nu), v.shape).copy()
        if self.kind == "one_homogeneous":
            return (np.abs(v) > s * self.alpha).astype(float)
        t = np.abs(self.prox(v, s))
        with np.errstate(divide="ignore", invalid="ignore"):
            curv = s * self.coeff * (self.p - 1) * t ** (self.p - 2)
        out = 1.0 / (1.0 + curv)
        return np.where(np.isfinite(out), out, 0.0)


@dataclass(frozen=True)
class WideProblem:
    """Evolution ``rho*m*u'' + m*dD(u') + grad E(u) = f`` with initial data.

    ``mass`` multiplies inertia and dissipation; lumped finite-difference
    discretizations set it to the mesh width. ``dissipation=None`` means no
    dissipation, which together with ``rho == 0`` is allowed only when
    ``quasistatic`` is set.
    """

    grid: TimeGrid
    energy: EnergyModel
    dissipation: Optional[DissipationModel]
    rho: float
    u0: np.ndarray
    u1: Optional[np.ndarray] = None
    mass: float = 1.0
    quasistatic: bool = False

    def __post_init__(self):
        d = self.energy.dim
        u0 = _frozen(np.atleast_1d(self.u0))
        if u0.shape != (d,):
            raise InvalidProblem(f"u0 has shape {u0.shape}, expected ({d},)")
        object.__setattr__(self, "u0", u0)
        if not (self.rho >= 0 and np.isfinite(self.rho)):
            raise InvalidProblem("rho must be finite and >= 0")
        if not self.mass > 0:
            raise InvalidProblem("mass must be > 0")
        if self.rho > 0:
            if self.u1 is None:
                raise InvalidProblem("u1 is required when rho > 0")
            u1 = _frozen(np.atleast_1d(self.u1))
            if u1.shape != (d,):
                raise InvalidProblem(f"u1 has shape {u1.shape}, expected ({d},)")
            object.__setattr__(self, "u1", u1)
        elif self.u1 is not None:
            raise InvalidProblem("u1 must be omitted when rho == 0")
        has_diss = self.dissipation is not None and not self.dissipation.trivial
        if self.quasistatic:
            if self.rho > 0 or has_diss:
                raise InvalidProblem("quasistatic mode needs rho = 0 and no dissipation")
        elif self.rho == 0 and not has_diss:
            raise InvalidProblem("rho = 0 with trivial dissipation is degenerate; "
                                 "request quasistatic mode explicitly")
        if not (np.all(np.isfinite(u0))):
            raise InvalidProblem("non-finite initial data")

    @property
    def dim(self) -> int:
        return self.energy.dim

    @property
    def first_free(self) -> int:
        """Index of the first unconstrained node."""
        return 2 if self.rho > 0 else 1

    @property
    def last_energy_node(self) -> int:
        return self.grid.N if self.quasistatic else self.grid.N - 1

    def initial_nodes(self) -> np.ndarray:
        if self.rho > 0:
            return np.stack([self.u0, self.u0 + self.grid.tau * self.u1])
        return self.u0[None, :]

    def load(self) -> np.ndarray:
        return self.energy.load(self.grid.nodes)

    def replace(self, **changes) -> "WideProblem":
        kw = {f: getattr(self, f) for f in self.__dataclass_fields__}
        kw.update(changes)
        return WideProblem(**kw)

    def with_grid(self, T: Optional[float] = None, N: Optional[int] = None) -> "WideProblem":
        return self.replace(grid=TimeGrid(T or self.grid.T, N or self.grid.N))

    def with_step(self, tau: float) -> "WideProblem":
        return self.replace(grid=TimeGrid.covering(self.grid.T, tau))


@dataclass(frozen=True)
class WeightScheme:
    """Geometric weights ``e_i = r^i``, ``r = eps / (eps + tau)``.

    The functional is
    ``sum_i tau e_i [inertia_factor*rho*m/2 |d2u_i|^2 + dissipation_factor*m*D(du_i)]
    + sum_i tau e_i energy_factor [E(u_i) - f_i.u_i]``.
    The common prefactor ``dropped_scale = eps^2`` does not change minimizers
    and is left out.
    """

    epsilon: float
    tau: float
    N: int
    energy_factor: float
    dissipation_factor: float
    default_factors: bool = True

    @property
    def ratio(self) -> float:
        return self.epsilon / (self.epsilon + self.tau)

    @property
    def inertia_factor(self) -> float:
        return self.epsilon ** 2

    @property
    def dropped_scale(self) -> float:
        return self.epsilon ** 2

    @property
    def weights(self) -> np.ndarray:
        return self.ratio ** np.arange(self.N + 1, dtype=float)

    @property
    def log_weights(self) -> np.ndarray:
        return np.arange(self.N + 1) * math.log(self.ratio)


def make_weights(epsilon: float, grid: TimeGrid, *, inertial: bool = False,
                 energy_factor: Optional[float] = None,
                 dissipation_factor: Optional[float] = None) -> WeightScheme:
    """Weight scheme for a given ``epsilon`` on ``grid``.

    Without inertia the energy carries ``r`` and the dissipation ``eps``, which
    reproduces the classical tridiagonal system exactly. With inertia the pair
    ``(r^2, eps*r)`` is used so that ``eps -> 0`` at fixed ``tau`` recovers the
    implicit two-step scheme.
    """
    if not (np.isfinite(epsilon) and epsilon > 0):
        raise NonPositiveEpsilon(f"epsilon must be > 0, got {epsilon!r}")
    tau = grid.tau
    r = epsilon / (epsilon + tau)
    default = energy_factor is None and dissipation_factor is None
    if energy_factor is None:
        energy_factor = r * r if inertial else r
    if dissipation_factor is None:
        dissipation_factor = epsilon * r if inertial else epsilon
    if not (0 < energy_factor <= 1) or not dissipation_factor > 0:
        raise InvalidParams("energy factor must lie in (0, 1], dissipation factor > 0")
    return WeightScheme(float(epsilon), tau, grid.N, float(energy_factor),
                        float(dissipation_factor), default)


def weights_for(problem: WideProblem, epsilon: float) -> WeightScheme:
    return make_weights(epsilon, problem.grid, inertial=problem.rho > 0)


@dataclass(frozen=True)
class DiscreteTrajectory:
    """Nodal values ``u_0..u_N`` on a :class:`TimeGrid`."""

    values: np.ndarray
    grid: TimeGrid

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.flags.writeable:
            v = v.copy()          # read-only arrays (huge solves) are shared, not copied
        if v.ndim == 1:
            v = v[:, None]
        if v.shape[0] != self.grid.N + 1:
            raise InvalidParams(f"{v.shape[0]} nodes for a grid with N={self.grid.N}")
        if not np.all(np.isfinite(v)):
            raise InvalidParams("trajectory has non-finite entries")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    @property
    def times(self) -> np.ndarray:
        return self.grid.nodes

    @property
    def velocities(self) -> np.ndarray:
        """Backward differences ``du_i``, i = 1..N."""
        return np.diff(self.values, axis=0) / self.grid.tau

    @property
    def accelerations(self) -> np.ndarray:
        """Second differences ``d2u_i``, i = 2..N."""
        return np.diff(self.values, n=2, axis=0) / self.grid.tau ** 2

    def scalar(self) -> np.ndarray:
        return self.values[:, 0]

    @classmethod
    def constant(cls, value, grid: TimeGrid) -> "DiscreteTrajectory":
        value = np.atleast_1d(np.asarray(value, dtype=float))
        return cls(np.tile(value, (grid.N + 1, 1)), grid)


# ---------------------------------------------------------------- catalogue

def _ramp(slope: float):
    return lambda t: slope * np.asarray(t, dtype=float)


def _resolve_forcing(forcing, forcing_slope):
    if forcing is not None and forcing_slope is not None:
        raise InvalidParams("give either forcing or forcing_slope")
    if forcing_slope is not None:
        return _ramp(float(forcing_slope))
    if forcing is not None and not callable(forcing):
        c = np.atleast_1d(np.asarray(forcing, dtype=float))
        return lambda t: np.tile(c, (np.size(t), 1))
    return forcing


def quadratic_energy(Lambda, forcing=None, name="quadratic") -> EnergyModel:
    Q = np.atleast_2d(np.asarray(Lambda, dtype=float))
    if Q.shape[0] != Q.shape[1]:
        raise InvalidParams("Lambda must be square")
    if not np.allclose(Q, Q.T):
        raise InvalidParams("Lambda must be symmetric")
    Q = 0.5 * (Q + Q.T)
    d = Q.shape[0]
    return EnergyModel(
        dim=d,
        fun=lambda U: 0.5 * np.einsum("ni,ij,nj->n", U, Q, U),
        grad=lambda U: U @ Q,
        hess=lambda U: np.broadcast_to(Q, (U.shape[0], d, d)),
        quadratic_matrix=Q,
        lambda_convexity=float(np.linalg.eigvalsh(Q).min()),
        forcing=forcing,
        name=name,
    )


def builtin_energy(name: str, forcing=None, forcing_slope=None, **params) -> EnergyModel:
    """Catalogue of energies used throughout the experiments.

    Parameters
    ----------
    name : str
        ``quadratic`` (``Lambda``), ``sqrt_selection``, ``power`` (``q``, ``dim``),
        ``double_well`` (``dim``) or ``discretized_pde`` (``mesh``,
        ``nonlinearity``).
    forcing : callable or array, optional
        Load ``f(t)``; ``E(t, u) = E(u) - f(t).u``.
    forcing_slope : float, optional
        Shorthand for the ramp ``f(t) = slope * t``.
    """
    forcing = _resolve_forcing(forcing, forcing_slope)
    if name == "quadratic":
        if "Lambda" not in params:
            raise InvalidParams("quadratic energy needs Lambda")
        return quadratic_energy(params["Lambda"], forcing)
    if name == "sqrt_selection":
        _no_extra(params, name)
        return EnergyModel(
            dim=1,
            fun=lambda U: -(4.0 / 3.0) * np.maximum(U[:, 0], 0.0) ** 1.5,
            grad=lambda U: -2.0 * np.sqrt(np.maximum(U, 0.0)),
            # the curvature blows up at 0+; clip so Newton sees a large finite value
            hess=lambda U: np.where(U > 0, -1.0 / np.sqrt(np.maximum(U, 1e-8)), 0.0)[:, :, None],
            lambda_convexity=-np.inf,
            forcing=forcing,
            name=name,
        )
    if name == "power":
        q = float(params.pop("q", 2.0))
        d = int(params.pop("dim", 1))
        _no_extra(params, name)
        if not q > 1:
            raise InvalidParams("power energy needs q > 1")

        def hess(U):
            with np.errstate(divide="ignore"):
                diag = (q - 1) * np.abs(U) ** (q - 2)
            diag = np.minimum(diag, 1e12)
            return diag[:, :, None] * np.eye(d)[None]

        return EnergyModel(
            dim=d,
            fun=lambda U: (np.abs(U) ** q).sum(axis=1) / q,
            grad=lambda U: np.abs(U) ** (q - 1) * np.sign(U),
            hess=hess,
            quadratic_matrix=np.eye(d) if q == 2 else None,
            lambda_convexity=1.0 if q == 2 else 0.0,
            forcing=forcing,
            name=f"power{q:g}",
        )
    if name == "double_well":
        d = int(params.pop("dim", 1))
        _no_extra(params, name)
        return EnergyModel(
            dim=d,
            fun=lambda U: 0.25 * ((U * U - 1.0) ** 2).sum(axis=1),
            grad=lambda U: U ** 3 - U,
            hess=lambda U: (3 * U * U - 1.0)[:, :, None] * np.eye(d)[None],
            lambda_convexity=-1.0,
            forcing=forcing,
            name=name,
        )
    if name == "discretized_pde":
        from .pde import discretize_gradient_flow
        mesh = params.pop("mesh", None)
        if mesh is None:
            raise InvalidParams("discretized_pde needs a mesh")
        nl = params.pop("nonlinearity", None)
        _no_extra(params, name)
        return discretize_gradient_flow(mesh, nl, forcing=forcing)
    raise UnknownEnergy(f"unknown energy {name!r}")


def _no_extra(params, name):
    if params:
        raise InvalidParams(f"unexpected parameters for {name}: {sorted(params)}")
