import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.sparse.linalg import eigsh

from conftest import linear_problem
from wide.errors import ConstraintViolated, NonSmoothDissipation, ShapeMismatch, SingularityRisk
from wide.functional import (
    assemble_linear_system, eval_functional, eval_gradient, hessian_operator, initial_guess,
)
from wide.minimizers import solve_quadratic
from wide.problem import (
    DiscreteTrajectory, DissipationModel, TimeGrid, WideProblem, builtin_energy, make_weights,
    weights_for,
)


def scalar_sum(lam, nu, eps, tau, u):
    """Direct loop over the canonical sum for rho = 0, d = 1."""
    r = eps / (eps + tau)
    N = len(u) - 1
    total = 0.0
    for i in range(1, N + 1):
        du = (u[i] - u[i - 1]) / tau
        total += tau * r ** i * eps * 0.5 * nu * du * du
        if i < N:
            total += tau * r ** i * r * 0.5 * lam * u[i] ** 2
    return total


def smooth_problems():
    g = TimeGrid.from_step(0.1, 6)
    yield "linear", linear_problem(lam=2.0, N=6)
    yield "power-diss", WideProblem(g, builtin_energy("double_well", dim=2),
                                    DissipationModel.power_law(3.0), 0.0, [0.3, -1.2])
    yield "inertial", WideProblem(g, builtin_energy("power", q=4.0), DissipationModel.quadratic(0.5),
                                  1.0, [1.0], [0.5])
    yield "forced", WideProblem(g, builtin_energy("quadratic", Lambda=[[1.0, 0.2], [0.2, 2.0]],
                                                  forcing_slope=1.0),
                                DissipationModel.quadratic(), 2.0, [1.0, 0.0], [0.0, 1.0])


SMOOTH = list(smooth_problems())


class TestEvalFunctional:
    def test_constant_trajectory(self):
        P = linear_problem(N=2)
        w = make_weights(0.1, P.grid)
        u = DiscreteTrajectory.constant(1.0, P.grid)
        # only the energy at node 1 survives: tau * e_1 * c * E(1)
        assert eval_functional(P, w, u) == pytest.approx(0.1 * 0.5 * 0.5 * 0.5, rel=1e-15)

    def test_hand_summation(self):
        P = linear_problem(N=3)
        w = make_weights(0.1, P.grid)
        u = np.array([1.0, 0.9, 0.85, 0.85])
        assert scalar_sum(1.0, 1.0, 0.1, 0.1, u) == pytest.approx(0.017453125, rel=1e-14)
        assert eval_functional(P, w, u) == pytest.approx(0.017453125, rel=1e-14)

    @given(st.floats(0.0, 5.0), st.floats(0.1, 3.0), st.floats(1e-3, 1.0),
           st.lists(st.floats(-3, 3), min_size=4, max_size=9))
    @settings(max_examples=50, deadline=None)
    def test_matches_loop(self, lam, nu, eps, tail):
        u = np.array([1.0] + tail)
        P = linear_problem(lam=lam, nu=nu, N=len(u) - 1)
        w = make_weights(eps, P.grid)
        assert eval_functional(P, w, u) == pytest.approx(scalar_sum(lam, nu, eps, 0.1, u),
                                                         rel=1e-12, abs=1e-15)

    def test_constraints(self):
        P = linear_problem(N=3)
        w = make_weights(0.1, P.grid)
        with pytest.raises(ConstraintViolated):
            eval_functional(P, w, np.array([0.5, 1, 1, 1]))
        with pytest.raises(ShapeMismatch):
            eval_functional(P, w, np.ones(3))

    def test_inertial_constraint(self):
        P = SMOOTH[2][1]
        w = weights_for(P, 0.1)
        U = np.ones(P.grid.N + 1)
        with pytest.raises(ConstraintViolated):
            eval_functional(P, w, U)          # u_1 must be u0 + tau u1

    def test_minimizer_beats_perturbations(self, rng):
        P = linear_problem(N=8)
        w = make_weights(0.05, P.grid)
        u, _ = solve_quadratic(P, w)
        f0 = eval_functional(P, w, u)
        for h in (1e-3, 0.1, 2.0):
            v = rng.standard_normal(P.grid.N + 1)
            v[0] = 0
            assert eval_functional(P, w, u.values[:, 0] + h * v) >= f0


class TestLinearSystem:
    def test_reference_matrix(self):
        P = linear_problem(N=3)
        S = assemble_linear_system(P, make_weights(0.1, P.grid))
        eps, tau, lam = 0.1, 0.1, 1.0
        d = 2 * eps + tau + lam * tau ** 2
        A = np.array([[d, -eps, 0], [-eps - tau, d, -eps], [0, -eps, eps]])
        assert np.array_equal(S.dense(), A)
        assert np.array_equal(S.rhs, [eps * 1.0 + tau * 1.0, 0, 0])
        np.testing.assert_allclose(S.dense(), [[0.31, -0.1, 0], [-0.2, 0.31, -0.1], [0, -0.1, 0.1]],
                                   atol=1e-15)

    @given(st.floats(1e-4, 10), st.floats(1e-4, 1.0), st.integers(2, 30), st.floats(-5, 5))
    def test_entry_formulas(self, eps, tau, N, u0):
        lam = 0.7
        P = linear_problem(lam=lam, tau=tau, N=N, u0=u0)
        S = assemble_linear_system(P, make_weights(eps, P.grid))
        A = S.dense()
        diag = 2 * eps + tau + lam * tau ** 2
        assert np.all(np.diag(A)[:-1] == diag) and A[-1, -1] == eps
        assert np.all(np.diag(A, 1) == -eps)
        assert np.all(np.diag(A, -1)[:-1] == -eps - tau) and A[-1, -2] == -eps
        assert S.rhs[0] == eps * u0 + tau * u0 and np.all(S.rhs[1:] == 0)

    def test_lambda_zero_ok(self):
        for eps, tau in [(1e-3, 0.5), (10.0, 1e-3)]:
            P = linear_problem(lam=0.0, tau=tau, N=5)
            S = assemble_linear_system(P, make_weights(eps, P.grid))
            assert abs(np.linalg.det(S.dense())) > 0

    def test_singularity_risk(self):
        P = linear_problem(lam=-1.0, tau=2.0, N=3)
        with pytest.raises(SingularityRisk):
            assemble_linear_system(P, make_weights(0.1, P.grid))
        P = linear_problem(lam=-1.0, tau=0.5, N=3)
        assemble_linear_system(P, make_weights(0.1, P.grid))

    def test_wrong_shape(self):
        with pytest.raises(ShapeMismatch):
            P = SMOOTH[2][1]
            assemble_linear_system(P, weights_for(P, 0.1))

    def test_gradient_is_scaled_residual(self, rng):
        # rows k < N of A are tau^2 R_k, the last row is tau^2 r R_N
        P = linear_problem(lam=1.5, tau=0.2, N=6)
        w = make_weights(0.3, P.grid)
        S = assemble_linear_system(P, w)
        u = np.r_[1.0, rng.standard_normal(6)]
        g = eval_gradient(P, w, u)
        e, c, r, tau = w.weights[1:], w.energy_factor, w.ratio, w.tau
        scale = e * c / tau
        scale[-1] /= r
        np.testing.assert_allclose(g, scale * (S.matvec(u[1:]) - S.rhs), rtol=1e-12, atol=1e-15)

    def test_forcing_enters_rhs(self):
        P = linear_problem(N=4, forcing=lambda t: np.sin(t))
        w = make_weights(0.2, P.grid)
        S = assemble_linear_system(P, w)
        u, _ = solve_quadratic(P, w)
        np.testing.assert_allclose(S.matvec(u.values[1:, 0]), S.rhs, atol=1e-14)


class TestGradient:
    @pytest.mark.parametrize("name,P", SMOOTH, ids=[s[0] for s in SMOOTH])
    def test_finite_differences(self, name, P, rng):
        w = weights_for(P, 0.2)
        i0, d = P.first_free, P.dim
        for _ in range(5):
            U = initial_guess(P) + 0.5 * rng.standard_normal((P.grid.N + 1, d))
            U[:i0] = P.initial_nodes()
            g = eval_gradient(P, w, U)
            fd = np.empty_like(g)
            h = 1e-6
            for j in range(g.size):
                k, c = divmod(j, d)
                Up, Um = U.copy(), U.copy()
                Up[i0 + k, c] += h
                Um[i0 + k, c] -= h
                fd[j] = (eval_functional(P, w, Up) - eval_functional(P, w, Um)) / (2 * h)
            assert np.abs(g - fd).max() <= 1e-6 * (np.abs(g).max() + 1e-12) + 1e-9

    def test_stationary_at_banded_minimizer(self):
        P = linear_problem(N=50, tau=0.02)
        w = make_weights(0.05, P.grid)
        u, _ = solve_quadratic(P, w)
        b = assemble_linear_system(P, w).rhs
        assert np.abs(eval_gradient(P, w, u)).max() <= 1e-10 * (1 + np.abs(b).max())

    def test_nonsmooth_rejected(self):
        P = WideProblem(TimeGrid(1, 4), builtin_energy("quadratic", Lambda=[[1.0]]),
                        DissipationModel.one_homogeneous(1.0), 0.0, [0.0])
        with pytest.raises(NonSmoothDissipation):
            eval_gradient(P, weights_for(P, 0.1), np.zeros(5))
        with pytest.raises(NonSmoothDissipation):
            hessian_operator(P, weights_for(P, 0.1), np.zeros(5))

    @given(st.integers(0, 2**31 - 1))
    @settings(max_examples=25, deadline=None)
    def test_descent_along_negative_gradient(self, seed):
        rng = np.random.default_rng(seed)
        P = SMOOTH[1][1]
        w = weights_for(P, 0.1)
        U = initial_guess(P) + rng.standard_normal((P.grid.N + 1, 2))
        U[0] = P.u0
        g = eval_gradient(P, w, U).reshape(-1, 2)
        if np.abs(g).max() < 1e-10:
            return
        f0 = eval_functional(P, w, U)
        h = 1e-4 / (1 + np.abs(g).max())
        V = U.copy()
        V[1:] -= h * g
        assert eval_functional(P, w, V) < f0


class TestHessian:
    def test_quadratic_matches_system(self, rng):
        P = linear_problem(lam=1.0, tau=0.1, N=7)
        w = make_weights(0.1, P.grid)
        S = assemble_linear_system(P, w)
        H = hessian_operator(P, w, np.ones(8))
        x = rng.standard_normal(7)
        e, c, r, tau = w.weights[1:], w.energy_factor, w.ratio, w.tau
        scale = e * c / tau
        scale[-1] /= r
        np.testing.assert_allclose(H.matvec(x), scale * S.matvec(x), rtol=1e-12, atol=1e-16)

    def test_inertial_bandwidth(self):
        P = SMOOTH[3][1]
        H = hessian_operator(P, weights_for(P, 0.1), initial_guess(P))
        A = H.matrix.toarray()
        d = P.dim
        assert H.bandwidth == 2
        assert np.abs(np.diag(A, 2 * d)).max() > 0
        assert np.all(A[np.triu_indices_from(A, 3 * d)] == 0)
        assert np.all(A[np.tril_indices_from(A, -3 * d)] == 0)

    @pytest.mark.parametrize("name,P", SMOOTH, ids=[s[0] for s in SMOOTH])
    def test_hvp_vs_finite_differences(self, name, P, rng):
        w = weights_for(P, 0.3)
        U = initial_guess(P) + 0.3 * rng.standard_normal((P.grid.N + 1, P.dim))
        U[:P.first_free] = P.initial_nodes()
        x = rng.standard_normal((P.grid.N + 1 - P.first_free) * P.dim)
        h = 1e-6
        Up, Um = U.copy(), U.copy()
        Up[P.first_free:] += h * x.reshape(-1, P.dim)
        Um[P.first_free:] -= h * x.reshape(-1, P.dim)
        fd = (eval_gradient(P, w, Up) - eval_gradient(P, w, Um)) / (2 * h)
        Hx = hessian_operator(P, w, U).matvec(x)
        assert np.linalg.norm(Hx - fd) <= 1e-5 * np.linalg.norm(fd)

    @pytest.mark.parametrize("eps", [1.0, 0.1, 1e-3])
    def test_positive_definite_for_convex(self, eps):
        E = builtin_energy("quadratic", Lambda=[[2.0, 0.5], [0.5, 1.0]])
        P = WideProblem(TimeGrid(1.0, 40), E, DissipationModel.quadratic(), 0.0, [1.0, 1.0])
        H = hessian_operator(P, weights_for(P, eps), initial_guess(P))
        S = H.symmetric()
        S = 0.5 * (S + S.T)
        assert eigsh(S, k=1, which="SA", return_eigenvectors=False)[0] > 0
