import json
import math

import numpy as np
import pytest

from wfmle import MutationRates, ParameterDomain, exactsim, likelihood as lk, neutral
from wfmle.model import HaploidModel

BOX = ParameterDomain((-1.0,), (1.0,))


@pytest.fixture
def model(mu):
    return HaploidModel(mu)


@pytest.fixture
def draws(mu, model):
    return lk.draw_contribution(0.3, 0.6, 1.0, mu, model.term_rates(BOX), 400, seed=12)


@pytest.fixture(scope="module")
def short_series():
    m = HaploidModel(MutationRates(0.02, 0.02))
    return exactsim.simulate_path(m, 0.7, [0.5], np.arange(6.0), np.random.default_rng(42))


def test_series_validation():
    with pytest.raises(ValueError):
        lk.ObservationSeries([0.0, 1.0], [0.5, 1.0])
    with pytest.raises(ValueError):
        lk.ObservationSeries([0.0, 1.0, 1.0], [0.5, 0.4, 0.3])
    with pytest.raises(ValueError):
        lk.ObservationSeries([0.5, 1.0], [0.5, 0.4])
    s = lk.ObservationSeries([0.0, 1.0, 3.0], [0.5, 0.4, 0.3])
    assert s.n == 2 and s.n_loci == 1
    assert [t for _, _, t in s.increments()] == [1.0, 2.0]


def test_zero_rate_has_no_points(mu, model):
    d = lk.draw_contribution(0.3, 0.6, 1.0, mu, [0.0], 200, seed=1)
    assert np.all(d.counts == 0) and d.values.shape == (0, 1)
    assert np.all(lk.a_samples(d, model, 0.0) == 1.0)


def test_round_trip_bitwise(draws, model, mu):
    back = lk.ContributionDraws.from_dict(json.loads(json.dumps(draws.to_dict())), mu)
    for th in np.linspace(-1, 1, 10):
        assert lk.contribution_estimate(back, model, th) == lk.contribution_estimate(draws, model, th)


def test_single_sample_reproducible(mu, model):
    a = lk.draw_contribution(0.3, 0.6, 1.0, mu, [5.0], 1, seed=3)
    b = lk.draw_contribution(0.3, 0.6, 1.0, mu, [5.0], 1, seed=3)
    assert a.counts[0] == b.counts[0] > 0
    np.testing.assert_array_equal(a.values, b.values)
    np.testing.assert_array_equal(a.m, b.m)


def test_m_stream_independent_of_rate(mu):
    a = lk.draw_contribution(0.3, 0.6, 1.0, mu, [0.0], 50, seed=3)
    b = lk.draw_contribution(0.3, 0.6, 1.0, mu, [2.0], 50, seed=3)
    np.testing.assert_array_equal(a.m, b.m)
    c = lk.draw_contribution(0.3, 0.6, 1.0, mu, [2.0], 50, seed=3, index=1)
    assert not np.array_equal(b.m, c.m)


def test_head_is_prefix_draw(mu):
    big = lk.draw_contribution(0.3, 0.6, 1.0, mu, [0.5], 60, seed=8)
    small = lk.draw_contribution(0.3, 0.6, 1.0, mu, [0.5], 25, seed=8)
    assert big.head(25).to_dict() == small.to_dict()


def test_neutral_reduction_bitwise(draws, model):
    assert lk.a_estimate(draws, model, 0.0) == 1.0
    assert lk.contribution_estimate(draws, model, 0.0) == lk.density_estimate(draws)
    assert lk.density_estimate(draws) == neutral.transition_density_estimate(0.3, 0.6, 1.0, draws.mutation,
                                                                              draws.m[:, 0])


def test_a_in_unit_interval(draws, model):
    for th in np.linspace(-1, 1, 21):
        a = lk.a_samples(draws, model, th)
        assert np.all((a >= 0) & (a <= 1))


def test_extra_point_only_decreases(draws, model):
    j = int(np.argmax(draws.counts))
    assert draws.counts[j] > 0
    d = draws.to_dict()
    first = int(draws.counts[:j].sum())
    drop = first + int(draws.counts[j]) - 1
    d["counts"][j] -= 1
    for key in ("times", "labels", "values"):
        del d[key][drop]
    fewer = lk.ContributionDraws.from_dict(d, draws.mutation)
    for th in (-1.0, 0.4, 1.0):
        assert lk.a_samples(draws, model, th)[j] <= lk.a_samples(fewer, model, th)[j]


def test_prefactor_closed_form(draws, model):
    # A(y) - A(x) = 0.35 * 0.3 and phi- = -0.0035 at theta = 0.7
    assert lk.log_prefactor(draws, model, 0.7) == pytest.approx(0.1085, abs=1e-14)


def test_outside_box_rejected(draws, model):
    with pytest.raises(ValueError):
        lk.a_estimate(draws, model, 1.5)


def test_neutral_anchor_unbiased():
    rng = np.random.default_rng(2)
    mu = MutationRates(0.02, 0.02)
    model = HaploidModel(mu)
    for i in range(10):
        x, y = rng.uniform(0.05, 0.95, 2)
        t = rng.uniform(0.25, 5.0)
        d = lk.draw_contribution(x, y, t, mu, [0.0], 10_000, seed=100, index=i)
        vals = np.prod(d.densities(), axis=1)
        c = lk.contribution_estimate(d, model, 0.0)
        assert c == pytest.approx(vals.mean(), rel=1e-13)
        oracle = neutral.transition_density_oracle(x, y, t, mu)
        assert abs(c - oracle) < 4 * vals.std(ddof=1) / math.sqrt(vals.size)


def test_weights_of_one_match_unweighted(draws, model):
    w = np.ones(draws.N)
    assert lk.contribution_estimate(draws, model, 0.5, w) == pytest.approx(
        lk.contribution_estimate(draws, model, 0.5), rel=1e-14)


def test_log_likelihood_sums(draws, model):
    one = lk.log_likelihood([draws], model, 0.3)
    assert one.log_value == pytest.approx(math.log(lk.contribution_estimate(draws, model, 0.3)), rel=1e-15)
    two = lk.log_likelihood([draws, draws], model, 0.3)
    assert two.log_value == pytest.approx(2 * one.log_value, rel=1e-15)
    assert not two.degenerate and two.contributions.shape == (2,)


def test_zero_contribution_flagged(mu, model):
    d = lk.draw_contribution(0.3, 0.6, 1.0, mu, [0.0], 3, seed=1)
    d._dens = np.zeros((3, 1))
    est = lk.log_likelihood([d], model, 0.0)
    assert est.log_value == -math.inf and est.degenerate


def test_grid_continuity(short_series, model):
    draws = lk.draw_all(short_series, model, BOX, 30, seed=4)

    def max_jump(points):
        grid = np.linspace(-1, 1, points)
        ll = np.array([lk.log_likelihood(draws, model, th).log_value for th in grid])
        assert np.all(np.isfinite(ll))
        return np.max(np.abs(np.diff(ll)))

    # successive differences shrink with the grid step; a jump would not
    coarse, fine = max_jump(100), max_jump(199)
    assert fine < 0.6 * coarse


def test_draw_all_thread_invariant(short_series, model):
    a = lk.draw_all(short_series, model, BOX, 10, seed=4)
    b = lk.draw_all(short_series, model, BOX, 10, seed=4, threads=2)
    assert [d.to_dict() for d in a] == [d.to_dict() for d in b]


def test_memory_estimate_grows():
    assert lk.memory_estimate(100, 1000, 0.04, 1.0, 1) > lk.memory_estimate(100, 10, 0.04, 1.0, 1) > 0
