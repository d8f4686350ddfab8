"""One-dimensional finite-difference discretizations.

Homogeneous Dirichlet conditions on ``(0, L)`` with ``M`` interior points and
a lumped mass ``h``. The energy of a semilinear problem is::

    E(u) = h/2 u.K u + h sum_j G(u_j),    K = tridiag(-1, 2, -1) / h^2

and ``h`` also multiplies inertia and dissipation (``WideProblem.mass``).
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Union

import numpy as np
import scipy.sparse as sp

from .errors import InvalidGrowth, InvalidParams, ModeOutOfRange
from .problem import DissipationModel, EnergyModel, TimeGrid, WideProblem


@dataclass(frozen=True)
class SpatialMesh:
    L: float
    M: int

    def __post_init__(self):
        if not self.L > 0 or int(self.M) != self.M or self.M < 1:
            raise InvalidParams("mesh needs L > 0 and M >= 1 interior points")
        object.__setattr__(self, "M", int(self.M))

    @property
    def h(self) -> float:
        return self.L / (self.M + 1)

    @property
    def x(self) -> np.ndarray:
        return self.h * np.arange(1, self.M + 1)

    @property
    def stiffness(self) -> sp.csr_matrix:
        M, h = self.M, self.h
        return sp.diags([-np.ones(M - 1), 2 * np.ones(M), -np.ones(M - 1)], [-1, 0, 1],
                        format="csr") / h ** 2

    def eigenvalue(self, k: int) -> float:
        """``k``-th eigenvalue of the stiffness matrix, ``(4/h^2) sin^2(k pi h / 2L)``."""
        self._check_mode(k)
        return 4.0 / self.h ** 2 * math.sin(k * math.pi * self.h / (2 * self.L)) ** 2

    def mode(self, k: int) -> np.ndarray:
        self._check_mode(k)
        return np.sin(k * math.pi * self.x / self.L)

    def l2(self, U) -> np.ndarray:
        """Discrete ``L^2(0, L)`` norm of each row of ``U``."""
        U = np.atleast_2d(U)
        return np.sqrt(self.h * (U * U).sum(axis=-1))

    def _check_mode(self, k):
        if int(k) != k or not 1 <= k <= self.M:
            raise ModeOutOfRange(f"mode {k} outside 1..{self.M}")


def mode_initializer(mesh: SpatialMesh, k: int) -> np.ndarray:
    """Samples ``sin(k pi x_j / L)`` of the ``k``-th Dirichlet mode."""
    return mesh.mode(k)


@dataclass(frozen=True)
class Nonlinearity:
    """Pointwise reaction ``gamma = G'`` with primitive ``G``."""

    G: Callable
    gamma: Callable
    dgamma: Callable
    lambda_convexity: float = 0.0
    linear_coeff: Optional[float] = None
    name: str = "custom"

    @classmethod
    def zero(cls):
        z = np.zeros_like
        return cls(z, z, z, 0.0, 0.0, "zero")

    @classmethod
    def linear(cls, c: float):
        c = float(c)
        return cls(lambda u: 0.5 * c * u * u, lambda u: c * u, lambda u: np.full_like(u, c),
                   c, c, f"linear{c:g}")

    @classmethod
    def power(cls, q: float):
        """``G(u) = |u|^q / q``; ``q = 2k`` gives the ``(1/2k)|u|^{2k}`` family."""
        q = float(q)
        if not q > 1:
            raise InvalidGrowth("power nonlinearity needs q > 1")
        return cls(lambda u: np.abs(u) ** q / q,
                   lambda u: np.abs(u) ** (q - 1) * np.sign(u),
                   lambda u: (q - 1) * np.abs(u) ** (q - 2) if q >= 2 else
                   np.minimum((q - 1) * np.abs(u) ** (q - 2), 1e12),
                   0.0, 1.0 if q == 2 else None, f"power{q:g}")

    @classmethod
    def cubic(cls):
        return cls.power(4.0)

    @classmethod
    def double_well(cls):
        return cls(lambda u: 0.25 * (u * u - 1) ** 2, lambda u: u ** 3 - u,
                   lambda u: 3 * u * u - 1, -1.0, None, "double_well")


_NAMED = {"zero": Nonlinearity.zero, "cubic": Nonlinearity.cubic,
          "double_well": Nonlinearity.double_well}


def as_nonlinearity(spec: Union[None, str, Nonlinearity]) -> Nonlinearity:
    if spec is None:
        return Nonlinearity.zero()
    if isinstance(spec, Nonlinearity):
        return spec
    if isinstance(spec, str):
        if spec in _NAMED:
            return _NAMED[spec]()
        if spec.startswith("linear"):
            return Nonlinearity.linear(float(spec[6:] or 1.0))
        if spec.startswith("power"):
            return Nonlinearity.power(float(spec[5:]))
    raise InvalidParams(f"unknown nonlinearity {spec!r}")


def discretize_gradient_flow(mesh: SpatialMesh, nonlinearity=None, forcing=None) -> EnergyModel:
    """Energy ``h/2 u.Ku + h sum G(u_j)`` with a sparse Hessian."""
    nl = as_nonlinearity(nonlinearity)
    K, h, M = mesh.stiffness, mesh.h, mesh.M

    def fun(U):
        KU = (K @ U.T).T
        return h * (0.5 * (U * KU).sum(axis=1) + nl.G(U).sum(axis=1))

    def grad(U):
        return h * ((K @ U.T).T + nl.gamma(U))

    def hess(U):
        blocks = [h * (K + sp.diags(nl.dgamma(u))) for u in U]
        return sp.block_diag(blocks, format="csr")

    Q = None
    if nl.linear_coeff is not None:
        Q = h * (K.toarray() + nl.linear_coeff * np.eye(M))
    lam = h * (mesh.eigenvalue(1) + nl.lambda_convexity)
    return EnergyModel(dim=M, fun=fun, grad=grad, hess=hess, quadratic_matrix=Q,
                       lambda_convexity=lam, forcing=forcing, name=f"pde-{nl.name}")


def _as_dissipation(nu, zeta) -> Optional[DissipationModel]:
    if zeta is not None and nu:
        raise InvalidParams("give either linear damping nu or a nonlinear damping zeta")
    if zeta is None:
        return DissipationModel.quadratic(nu) if nu else None
    if isinstance(zeta, DissipationModel):
        return zeta
    p, coeff = zeta if isinstance(zeta, tuple) else (zeta, 1.0)
    if not float(p) > 1:
        raise InvalidGrowth(f"damping exponent p = {p} must lie in (1, inf)")
    return DissipationModel.power_law(float(p), float(coeff))


@dataclass(frozen=True)
class WaveFactory:
    """Builds ``rho=1`` problems ``h(u'' + zeta(u')) + h(Ku + gamma(u)) = 0`` on a grid."""

    mesh: SpatialMesh
    energy: EnergyModel
    dissipation: Optional[DissipationModel]

    def __call__(self, grid: TimeGrid, u0, u1=None) -> WideProblem:
        u1 = np.zeros(self.mesh.M) if u1 is None else u1
        return WideProblem(grid, self.energy, self.dissipation, 1.0, u0, u1, mass=self.mesh.h)


def discretize_wave(mesh: SpatialMesh, nonlinearity=None, nu: float = 0.0, zeta=None,
                    forcing=None) -> WaveFactory:
    """Semilinear wave with optional linear (``nu``) or power-law (``zeta``) damping.

    ``zeta`` is an exponent ``p`` (``D(v) = |v|^p/p``), a pair ``(p, coeff)``
    or a :class:`DissipationModel`.
    """
    if nu < 0:
        raise InvalidParams("damping nu must be >= 0")
    diss = _as_dissipation(nu, zeta)
    return WaveFactory(mesh, discretize_gradient_flow(mesh, nonlinearity, forcing), diss)


def heat_problem(mesh: SpatialMesh, grid: TimeGrid, u0, nonlinearity=None, nu: float = 1.0,
                 forcing=None) -> WideProblem:
    """``h nu u' + h(Ku + gamma(u)) = f`` as a first-order problem."""
    E = discretize_gradient_flow(mesh, nonlinearity, forcing)
    return WideProblem(grid, E, DissipationModel.quadratic(nu), 0.0, u0, mass=mesh.h)


def doubly_nonlinear_problem(mesh: SpatialMesh, grid: TimeGrid, u0, p: float,
                             coeff: float = 1.0, nonlinearity=None) -> WideProblem:
    """``h |u'|^{p-2}u' + h(Ku + gamma(u)) = 0`` (nodewise p-growth dissipation)."""
    E = discretize_gradient_flow(mesh, nonlinearity)
    return WideProblem(grid, E, _as_dissipation(0.0, (p, coeff)), 0.0, u0, mass=mesh.h)


def initial_profile(mesh: SpatialMesh, name: str, **params) -> np.ndarray:
    """Named initial profiles: ``mode`` (k, amplitude), ``bump`` (center, width, amplitude), ``zero``."""
    if name == "mode":
        return float(params.get("amplitude", 1.0)) * mesh.mode(int(params.get("k", 1)))
    if name == "bump":
        c = float(params.get("center", mesh.L / 2))
        wdt = float(params.get("width", mesh.L / 10))
        return float(params.get("amplitude", 1.0)) * np.exp(-((mesh.x - c) / wdt) ** 2)
    if name == "zero":
        return np.zeros(mesh.M)
    raise InvalidParams(f"unknown profile {name!r}")
