import itertools
import math

import numpy as np
import pytest

from wfmle import MutationRates, ParameterDomain, coupled, exactsim, likelihood as lk, neutral
from wfmle.model import CoupledModel, HaploidModel

from oracles import cdf_from_density, density_grid, endpoint_grid, ks_against, start_density_grid

H = np.zeros((2, 2, 2, 2))
H[0, 1] = [[0.3, 0.1], [0.2, 0.05]]
H[1, 0] = H[0, 1].T
S = np.array([[0.5, 0.1], [0.2, 0.4]])


def test_coupling_term_vanishes():
    s = np.array([[0.3, 0.3], [0.1, 0.1]])
    np.testing.assert_array_equal(coupled.coupling_term([0.3, 0.6], s, np.zeros((2, 2, 2, 2))), 0.0)
    g = coupled.coupling_term([0.0, 1.0], S, H)
    assert g[0] == 0 and g[1] == 0


def test_coupling_term_spot_value():
    # expanded by hand: V1 = 0.4 + (0.1 - 0.05) + 0.05 * 0.6, V2 = -0.2 + (0.2 - 0.05) + 0.05 * 0.3
    g = coupled.coupling_term([0.3, 0.6], S, H)
    np.testing.assert_allclose(g, [0.21 * 0.48, 0.24 * -0.035], rtol=1e-14)


def test_coupling_term_matches_model_drift(mu):
    model = CoupledModel(2, mu)
    th = model.parameters_from(S, H)
    x = np.array([0.3, 0.6])
    np.testing.assert_allclose(coupled.coupling_term(x, S, H), x * (1 - x) * model.eta_states(x, th), rtol=1e-14)


def test_joint_bridge_single_locus(mu):
    a = coupled.joint_bridge_sample([0.2], [0.7], 1.0, [0.3, 0.6], mu, np.random.default_rng(1))
    b = neutral.sample_bridge_skeleton(0.2, 0.7, 1.0, [0.3, 0.6], mu, np.random.default_rng(1))
    assert len(a) == 1
    np.testing.assert_array_equal(a[0].values, b.values)


def test_joint_bridge_independent_loci(mu):
    rng = np.random.default_rng(12)
    x, y = [0.2, 0.4], [0.7, 0.5]
    mids = np.array([[sk.values[0] for sk in coupled.joint_bridge_sample(x, y, 1.0, [0.5], mu, rng)]
                     for _ in range(10_000)])
    r = np.corrcoef(mids.T)[0, 1]
    assert abs(r) < 3 / math.sqrt(mids.shape[0])
    z, zc, w = endpoint_grid()
    for k in range(2):
        f = density_grid(x[k], z, 0.5, mu, zc) * start_density_grid(z, y[k], 0.5, mu, zc)
        cdf, _ = cdf_from_density(z, w, f)
        assert ks_against(mids[:, k], z, cdf) < 0.02


def _draws(mu, model, box, N, seed, x=(0.3, 0.45), y=(0.6, 0.35), t=1.0):
    return lk.draw_contribution(x, y, t, mu, model.term_rates(box), N, seed=seed)


def test_neutral_contribution_is_product(mu):
    model = CoupledModel(2, mu)
    box = ParameterDomain((-1.0,) * 3, (1.0,) * 3)
    d = _draws(mu, model, box, 200, seed=2)
    c = coupled.coupled_contribution(d, model, np.zeros(3))
    assert c == np.mean(np.prod(d.densities(), axis=1))


def test_factorization_matched_draws(mu):
    # with one sample per draw the coupled estimate factorizes exactly
    model = CoupledModel(2, mu, interactions=False)
    box = ParameterDomain((-1.0, -1.0), (1.0, 1.0))
    hap = HaploidModel(mu)
    b = np.array([0.35, -0.2])
    for seed in range(30):
        d = _draws(mu, model, box, 1, seed=seed)
        joint = coupled.coupled_contribution(d, model, b)
        prod = 1.0
        for k in range(2):
            prod *= lk.contribution_estimate(d.locus(k), hap, coupled.haploid_equivalent(b[k]))
        assert math.log(joint) == pytest.approx(math.log(prod), abs=1e-10)


def test_contribution_reproducible(mu):
    model = CoupledModel(2, mu)
    box = ParameterDomain((-1.0,) * 3, (1.0,) * 3)
    th = np.array([0.3, -0.1, 0.5])
    a = coupled.coupled_contribution(_draws(mu, model, box, 20, seed=9), model, th)
    b = coupled.coupled_contribution(_draws(mu, model, box, 20, seed=9), model, th)
    assert a == b and a > 0


def test_contribution_rejects_wrong_loci(mu):
    model = CoupledModel(3, mu)
    d = lk.draw_contribution([0.3, 0.4], [0.5, 0.6], 1.0, mu, [0.1, 0.1], 3, seed=1)
    with pytest.raises(ValueError):
        coupled.coupled_contribution(d, model, np.zeros(6))


def test_product_density_unbiased(mu):
    x, y, t = np.array([0.3, 0.45]), np.array([0.6, 0.35]), 0.8
    d = lk.draw_contribution(x, y, t, mu, [0.0, 0.0], 10_000, seed=4)
    vals = np.prod(d.densities(), axis=1)
    oracle = np.prod([neutral.transition_density_oracle(x[k], y[k], t, mu) for k in range(2)])
    assert abs(vals.mean() - oracle) < 4 * vals.std(ddof=1) / math.sqrt(vals.size)


@pytest.mark.parametrize("L", [2, 3])
def test_phi_bounds_hold_on_grid(mu, L):
    model = CoupledModel(L, mu)
    rng = np.random.default_rng(L)
    g = np.linspace(0, 1, 50)
    states = np.array(list(itertools.product(g, repeat=L)))
    for _ in range(5):
        th = rng.uniform(-2, 2, model.dim)
        lo, hi = model.term_bounds(th)
        terms = model.phi_terms(states, th)
        assert np.all(terms >= lo - 1e-12) and np.all(terms <= hi + 1e-12)


def test_a_factors_in_unit_interval(mu):
    model = CoupledModel(2, mu)
    box = ParameterDomain((-1.0,) * 3, (1.0,) * 3)
    d = _draws(mu, model, box, 300, seed=6)
    for th in np.random.default_rng(0).uniform(-1, 1, (10, 3)):
        a = lk.a_samples(d, model, th)
        assert np.all((a >= 0) & (a <= 1))


def test_haploid_equivalent_drift(mu):
    model = CoupledModel(1, mu, interactions=False)
    hap = HaploidModel(mu)
    xs = np.linspace(0.01, 0.99, 7)[:, None]
    np.testing.assert_allclose(model.phi_states(xs, [0.4]), hap.phi_states(xs, coupled.haploid_equivalent(0.4)),
                               rtol=1e-13)


def test_simulate_coupled_path(mu):
    model = CoupledModel(2, mu)
    path = exactsim.simulate_path(model, [0.5, -0.3, 0.2], [0.4, 0.6], np.arange(6.0), np.random.default_rng(2))
    assert path.values.shape == (6, 2) and np.all((path.values > 0) & (path.values < 1))
