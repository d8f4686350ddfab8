import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import linear_problem
from wide.causal import (
    fit_exponent, noncausal_sensitivity, rate_report, sweep, trajectory_errors,
)
from wide.errors import DegenerateFit, InsufficientSweep, InvalidParams, SolveFailed
from wide.oracles import analytic_catalogue, implicit_euler
from wide.problem import (
    DiscreteTrajectory, DissipationModel, TimeGrid, WideProblem, builtin_energy,
)

EPS4 = [1e-1, 1e-2, 1e-3, 1e-4]


@given(st.floats(-3, 3), st.floats(-5, 5))
def test_fit_exponent_exact_power_law(k, logc):
    x = np.array([1e-1, 1e-2, 1e-3])
    slope, rms = fit_exponent(x, np.exp(logc) * x ** k)
    assert slope == pytest.approx(k, abs=1e-9)
    assert rms < 1e-9


def test_trajectory_errors():
    g = TimeGrid(1.0, 4)
    u = DiscreteTrajectory(np.ones(5), g)
    sup, l2 = trajectory_errors(u, np.zeros((5, 1)))
    assert sup == 1.0 and l2 == pytest.approx(1.0)


class TestSweep:
    def test_discrete_limit_rate(self):
        P = linear_problem(tau=0.1, N=100)
        res = sweep(P, EPS4, implicit_euler(P))
        assert res.fitted_exponent == pytest.approx(1.0, abs=0.1)
        assert not res.degenerate

    def test_monotone_improvement(self):
        P = linear_problem(lam=2.0, tau=0.01, N=300)
        ref = analytic_catalogue("exp_decay", lam=2.0)
        for norm in ("sup", "l2"):
            err = sweep(P, [0.3, 0.1, 0.03, 0.01], ref, norm=norm).errors
            assert np.all(err[1:] <= 1.05 * err[:-1])

    def test_bvp_reference_has_no_eps_gap(self):
        P = linear_problem(tau=1e-6, N=1_000_000)
        res = sweep(P, [0.1, 0.03, 0.01, 0.003],
                    lambda prob, e: analytic_catalogue("wide_linear_bvp", lam=1.0, nu=1.0,
                                                       eps=e, T=1.0))
        assert res.sup_errors.max() <= 1e-6

    def test_degenerate(self):
        P = linear_problem(lam=0.0, N=20)
        ref = analytic_catalogue("exp_decay", lam=0.0)
        res = sweep(P, [1e-1, 1e-2, 1e-3], ref)
        assert res.degenerate and np.isnan(res.fitted_exponent)
        with pytest.raises(DegenerateFit):
            sweep(P, [1e-1, 1e-2, 1e-3], ref, raise_degenerate=True)

    def test_tau_rule(self):
        P = linear_problem(tau=0.1, N=10)
        res = sweep(P, [1e-1, 5e-2, 2e-2], analytic_catalogue("exp_decay"), tau_rule="square")
        taus = [r["tau"] for r in res.rows()]
        np.testing.assert_allclose(taus, [1e-2, 2.5e-3, 4e-4])

    def test_input_checks(self):
        P = linear_problem(N=10)
        ref = analytic_catalogue("exp_decay")
        with pytest.raises(InsufficientSweep):
            sweep(P, [0.1, 0.01], ref)
        with pytest.raises(InvalidParams):
            sweep(P, [0.01, 0.1, 0.001], ref)
        with pytest.raises(InvalidParams):
            sweep(P, [0.1, 0.01, 0.001], ref, norm="h1")

    def test_solve_failure_is_wrapped(self):
        P = WideProblem(TimeGrid(1.0, 10), builtin_energy("power", q=4.0),
                        DissipationModel.quadratic(), 0.0, [1.0])
        with pytest.raises(SolveFailed) as info:
            sweep(P, [0.1, 0.01, 0.001], analytic_catalogue("exp_decay"), max_iter=0)
        assert info.value.epsilon == 0.1

    def test_workers_do_not_change_results(self):
        P = WideProblem(TimeGrid(1.0, 200), builtin_energy("power", q=4.0),
                        DissipationModel.quadratic(), 0.0, [1.0])
        ref = analytic_catalogue("exp_decay")
        a = sweep(P, [0.1, 0.03, 0.01], ref, workers=1)
        b = sweep(P, [0.1, 0.03, 0.01], ref, workers=3)
        assert np.array_equal(a.sup_errors, b.sup_errors)

    def test_selection_limit(self):
        E = builtin_energy("sqrt_selection")
        P = WideProblem(TimeGrid(1.0, 2000), E, DissipationModel.quadratic(), 0.0, [0.0])
        ref = analytic_catalogue("selection_t2")
        res = sweep(P, [3e-2, 1e-2, 3e-3], ref, keep=True)
        u = res.trajectories[-1]
        t = P.grid.nodes
        late = t >= 0.2
        assert np.abs(u.scalar()[late] - t[late] ** 2).max() <= 0.1


class TestRateReport:
    def test_linear_rate(self):
        rep = rate_report(epsilons=(1e-1, 3e-2, 1e-2, 3e-3))
        assert rep.passed and 0.4 <= rep.rate <= 1.1

    def test_no_energy_is_exact(self):
        rep = rate_report(lam=0.0, epsilons=(1e-1, 1e-2, 1e-3))
        assert rep.exact and rep.rate is None and rep.passed


def test_noncausal_sensitivity_decays_linearly():
    s = []
    for eps in (1e-2, 1e-3, 1e-4):
        P = linear_problem(tau=1e-3, N=1000)
        s.append(noncausal_sensitivity(P, eps))
    s = np.array(s)
    assert np.all(s > 0)
    assert fit_exponent([1e-2, 1e-3, 1e-4], s)[0] == pytest.approx(1.0, abs=0.1)
    P = linear_problem(tau=1e-3, N=1000)
    assert noncausal_sensitivity(P, 1e-7) <= 1e-6
