import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from wide.causal import fit_exponent
from wide.errors import InvalidGrowth, InvalidParams, ModeOutOfRange
from wide.minimizers import minimize
from wide.pde import (
    Nonlinearity, SpatialMesh, discretize_gradient_flow, discretize_wave, doubly_nonlinear_problem,
    heat_problem, initial_profile, mode_initializer,
)
from wide.problem import TimeGrid, weights_for


class TestMesh:
    def test_mode_values(self):
        mesh = SpatialMesh(1.0, 3)
        np.testing.assert_allclose(mode_initializer(mesh, 1), [math.sqrt(2) / 2, 1.0, math.sqrt(2) / 2],
                                   atol=1e-15)

    @pytest.mark.parametrize("k", [0, 4, 1.5])
    def test_mode_out_of_range(self, k):
        with pytest.raises(ModeOutOfRange):
            mode_initializer(SpatialMesh(1.0, 3), k)

    def test_modes_orthogonal(self):
        mesh = SpatialMesh(2.0, 20)
        V = np.array([mesh.mode(k) for k in range(1, 21)])
        G = mesh.h * V @ V.T
        np.testing.assert_allclose(G, np.eye(20) * mesh.L / 2, atol=1e-12)

    def test_modes_are_eigenvectors(self):
        mesh = SpatialMesh(1.0, 15)
        for k in (1, 7, 15):
            v = mesh.mode(k)
            np.testing.assert_allclose(mesh.stiffness @ v, mesh.eigenvalue(k) * v, atol=1e-9)

    @pytest.mark.parametrize("L,M", [(0.0, 3), (1.0, 0), (1.0, 2.5)])
    def test_bad_mesh(self, L, M):
        with pytest.raises(InvalidParams):
            SpatialMesh(L, M)


class TestEnergy:
    def test_zero_state(self):
        mesh = SpatialMesh(1.0, 31)
        for nl in ("zero", "cubic", Nonlinearity.linear(1.0)):
            E = discretize_gradient_flow(mesh, nl)
            assert E.value(np.zeros(31)) == 0.0
            assert not E.gradient(np.zeros(31)).any()

    def test_sine_mode_energy(self):
        # int_0^1 (pi cos(pi x))^2 / 2 dx = pi^2 / 4
        mesh = SpatialMesh(1.0, 199)
        E = discretize_gradient_flow(mesh)
        assert E.value(mesh.mode(1)) == pytest.approx(math.pi ** 2 / 4, rel=1e-4)

    def test_linear_reaction_eigenvalue(self):
        mesh = SpatialMesh(1.0, 199)
        E = discretize_gradient_flow(mesh, Nonlinearity.linear(1.0))
        lam_min = np.linalg.eigvalsh(E.quadratic_matrix / mesh.h)[0]
        assert lam_min == pytest.approx(math.pi ** 2 + 1, rel=1e-4)

    def test_cubic_density(self, rng):
        mesh = SpatialMesh(1.0, 9)
        u = rng.normal(size=9)
        E = discretize_gradient_flow(mesh, "cubic")
        Ekin = discretize_gradient_flow(mesh).value(u)
        assert E.value(u) - Ekin == pytest.approx(mesh.h * np.sum(u ** 4 / 4), rel=1e-13)
        assert Nonlinearity.cubic().G(np.array([2.0]))[0] == 4.0

    def test_gradient_and_hessian(self, rng):
        mesh = SpatialMesh(1.0, 8)
        E = discretize_gradient_flow(mesh, "double_well")
        u, v = rng.normal(size=8), rng.normal(size=8)
        d = 1e-6
        fd = (E.value(u + d * v) - E.value(u - d * v)) / (2 * d)
        assert fd == pytest.approx(E.gradient(u) @ v, rel=1e-7)
        hv = (E.gradient(u + d * v) - E.gradient(u - d * v)) / (2 * d)
        np.testing.assert_allclose(E.hessian(u) @ v, hv, rtol=1e-6, atol=1e-8)

    def test_refinement_second_order(self):
        Ms = [7, 15, 31, 63]
        errs = []
        for M in Ms:
            mesh = SpatialMesh(1.0, M)
            errs.append(abs(discretize_gradient_flow(mesh).value(mesh.mode(1)) - math.pi ** 2 / 4))
        slope, _ = fit_exponent([SpatialMesh(1.0, M).h for M in Ms], errs)
        assert slope == pytest.approx(2.0, abs=0.1)

    @pytest.mark.parametrize("q", [1.0, 0.5, -2.0])
    def test_invalid_growth(self, q):
        with pytest.raises(InvalidGrowth):
            Nonlinearity.power(q)

    @pytest.mark.parametrize("p", [1.0, 0.3])
    def test_invalid_damping_exponent(self, p):
        with pytest.raises(InvalidGrowth):
            discretize_wave(SpatialMesh(1.0, 5), zeta=p)

    def test_unknown_nonlinearity(self):
        with pytest.raises(InvalidParams):
            discretize_gradient_flow(SpatialMesh(1.0, 5), "sextic")


def test_cubic_damping_prox():
    fac = discretize_wave(SpatialMesh(1.0, 5), zeta=3.0)
    D = fac.dissipation
    assert D.value(np.array([2.0])) == pytest.approx(8.0 / 3.0)
    grid = np.linspace(-3, 3, 600_001)
    for v, s in [(2.0, 0.5), (-1.0, 2.0), (0.1, 10.0)]:
        w = D.prox(np.array([v]), s)[0]
        # w minimizes s |w|^3 / 3 + (w - v)^2 / 2
        obj = s * np.abs(grid) ** 3 / 3 + 0.5 * (grid - v) ** 2
        assert w == pytest.approx(grid[np.argmin(obj)], abs=2e-5)
        assert w + s * w * abs(w) == pytest.approx(v, abs=1e-10)


def test_profiles():
    mesh = SpatialMesh(1.0, 9)
    np.testing.assert_allclose(initial_profile(mesh, "mode", k=2, amplitude=3.0), 3 * mesh.mode(2))
    assert not initial_profile(mesh, "zero").any()
    assert initial_profile(mesh, "bump").argmax() == 4
    with pytest.raises(InvalidParams):
        initial_profile(mesh, "spike")


class TestDynamics:
    def test_linear_wave_standing_mode(self):
        mesh = SpatialMesh(1.0, 31)
        P = discretize_wave(mesh)(TimeGrid.covering(1.0, 2e-3), mesh.mode(1))
        u, _ = minimize(P, weights_for(P, 1e-3))
        exact = np.cos(math.pi * P.grid.nodes)[:, None] * np.sin(math.pi * mesh.x)
        assert mesh.l2(u.values - exact).max() <= 5e-2

    def test_heat_mode_decay(self):
        mesh = SpatialMesh(2.0, 31)
        P = heat_problem(mesh, TimeGrid.covering(0.5, 1e-3), mesh.mode(1))
        u, _ = minimize(P, weights_for(P, 1e-4))
        exact = math.exp(-0.5 * mesh.eigenvalue(1)) * mesh.l2(mesh.mode(1))[0]
        assert mesh.l2(u.values[-1])[0] == pytest.approx(exact, rel=0.02)
        # profile stays a multiple of the mode
        c = u.values[-1] @ mesh.mode(1) / (mesh.mode(1) @ mesh.mode(1))
        np.testing.assert_allclose(u.values[-1], c * mesh.mode(1), atol=1e-10)

    @settings(max_examples=10, deadline=None)
    @given(st.floats(0.5, 2.0), st.sampled_from(["zero", "cubic", "double_well"]))
    def test_symmetry_preserved(self, amp, nl):
        mesh = SpatialMesh(1.0, 15)
        u0 = initial_profile(mesh, "bump", amplitude=amp, width=0.2)
        P = heat_problem(mesh, TimeGrid.covering(0.2, 0.01), u0, nonlinearity=nl)
        u, _ = minimize(P, weights_for(P, 0.02))
        np.testing.assert_allclose(u.values, u.values[:, ::-1], atol=1e-9)

    def test_doubly_nonlinear_decays(self):
        mesh = SpatialMesh(1.0, 9)
        P = doubly_nonlinear_problem(mesh, TimeGrid.covering(0.5, 0.02), mesh.mode(1), p=3.0)
        u, _ = minimize(P, weights_for(P, 0.05))
        E = [P.energy.value(x) for x in u.values]
        assert E[-1] < 0.5 * E[0]
        assert np.all(np.isfinite(u.values))

    def test_damping_choice_exclusive(self):
        with pytest.raises(InvalidParams):
            discretize_wave(SpatialMesh(1.0, 5), nu=1.0, zeta=3.0)
        with pytest.raises(InvalidParams):
            discretize_wave(SpatialMesh(1.0, 5), nu=-1.0)
