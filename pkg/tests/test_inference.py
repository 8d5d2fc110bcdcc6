import math

import numpy as np
import pytest

from wfmle import MutationRates, ParameterDomain, exactsim, inference, likelihood as lk
from wfmle.errors import MaxEvaluations
from wfmle.model import HaploidModel

BOX = ParameterDomain((-1.0,), (1.0,))


@pytest.fixture(scope="module")
def setup():
    model = HaploidModel(MutationRates(0.02, 0.02))
    series = exactsim.simulate_path(model, 0.7, [0.5], np.arange(11.0), np.random.default_rng(7))
    return model, series


def test_brent_quadratic():
    res = inference.brent_maximize(lambda x: -(x - 0.3) ** 2, -1, 1, xtol=1e-8)
    assert abs(res.theta_hat[0] - 0.3) < 1e-8 and res.converged


def test_brent_sine():
    res = inference.brent_maximize(math.sin, 0, 3, xtol=1e-6)
    assert abs(res.theta_hat[0] - math.pi / 2) < 1e-6


def test_brent_constant():
    res = inference.brent_maximize(lambda x: 2.5, -1, 1)
    assert -1 <= res.theta_hat[0] <= 1 and res.converged and res.log_lik == 2.5


def test_brent_stays_in_interval():
    seen = []
    inference.brent_maximize(lambda x: seen.append(x) or x, -0.5, 0.25)
    assert min(seen) >= -0.5 and max(seen) <= 0.25


def test_brent_budget():
    res = inference.brent_maximize(math.sin, 0, 3, xtol=1e-12, max_eval=3)
    assert not res.converged
    with pytest.raises(MaxEvaluations):
        inference.brent_maximize(math.sin, 0, 3, xtol=1e-12, max_eval=3, strict=True)


def test_brent_handles_minus_infinity():
    res = inference.brent_maximize(lambda x: -math.inf if x < 0 else -(x - 0.5) ** 2, -1, 1)
    assert abs(res.theta_hat[0] - 0.5) < 1e-5


def test_simplex_bowl():
    c = np.array([0.2, -0.4])
    dom = ParameterDomain((-1.0, -1.0), (1.0, 1.0))
    res = inference.simplex_maximize(lambda v: -np.sum((v - c) ** 2), dom, [0.0, 0.0], xtol=1e-8)
    np.testing.assert_allclose(res.theta_hat, c, atol=1e-5)


def test_simplex_feasible_from_boundary():
    dom = ParameterDomain((-1.0, 0.0), (1.0, 2.0))
    seen = []

    def f(v):
        seen.append(np.array(v))
        return -np.sum((v - np.array([1.5, -0.5])) ** 2)

    res = inference.simplex_maximize(f, dom, [1.0, 0.0])
    pts = np.array(seen)
    assert np.all(pts >= [-1, 0]) and np.all(pts <= [1, 2])
    np.testing.assert_allclose(res.theta_hat, [1.0, 0.0], atol=1e-5)


def test_simplex_rejects_outside_start():
    with pytest.raises(ValueError):
        inference.simplex_maximize(lambda v: 0.0, ParameterDomain((0.0, 0.0), (1.0, 1.0)), [2.0, 0.5])


def test_singleton_box(setup):
    model, series = setup
    res = inference.estimate_mle(series, model, ParameterDomain((0.3,), (0.3,)), 5, seed=1)
    assert res.theta_hat[0] == 0.3 and res.evaluations == 1


def test_estimate_deterministic_and_consistent(setup):
    model, series = setup
    a = inference.estimate_mle(series, model, BOX, 20, seed=3)
    b = inference.estimate_mle(series, model, BOX, 20, seed=3)
    assert a.to_dict() == b.to_dict()
    assert BOX.contains(a.theta_hat)
    draws = lk.draw_all(series, model, BOX, 20, seed=3)
    assert lk.log_likelihood(draws, model, a.theta_hat).log_value == pytest.approx(a.log_lik, abs=1e-12)


def test_bootstrap_two_replicates(setup):
    model, series = setup
    se, reps = inference.bootstrap_se(series, model, BOX, 20, B=2, seed=3)
    assert reps.shape == (2, 1)
    assert se[0] == pytest.approx(abs(reps[0, 0] - reps[1, 0]) / math.sqrt(2), rel=1e-12)


def test_bootstrap_needs_two(setup):
    model, series = setup
    with pytest.raises(ValueError):
        inference.bootstrap_se(series, model, BOX, 5, B=1)


def test_bootstrap_units_and_threads(setup):
    model, series = setup
    draws = lk.draw_all(series, model, BOX, 10, seed=5)
    se1, r1 = inference.bootstrap_se(series, model, BOX, 10, B=4, seed=5, draws=draws)
    se2, r2 = inference.bootstrap_se(series, model, BOX, 10, B=4, seed=5, draws=draws, threads=2)
    np.testing.assert_array_equal(r1, r2)
    se3, r3 = inference.bootstrap_se(series, model, BOX, 10, B=4, seed=5, draws=draws, unit="observations")
    assert np.all(se3 >= 0) and np.all((r3 >= -1) & (r3 <= 1))
    with pytest.raises(ValueError):
        inference.bootstrap_se(series, model, BOX, 10, B=4, seed=5, draws=draws, unit="bogus")


def test_neutral_data_estimate_near_zero():
    model = HaploidModel(MutationRates(0.5, 0.5))
    series = exactsim.simulate_path(model, 0.0, [0.5], np.arange(31.0), np.random.default_rng(3))
    draws = lk.draw_all(series, model, ParameterDomain((-4.0,), (4.0,)), 30, seed=2)
    res = inference.estimate_mle(series, model, ParameterDomain((-4.0,), (4.0,)), 30, seed=2, draws=draws)
    se, _ = inference.bootstrap_se(series, model, ParameterDomain((-4.0,), (4.0,)), 30, B=10, seed=2,
                                   draws=draws, unit="observations")
    assert abs(res.theta_hat[0]) < 3 * se[0]
