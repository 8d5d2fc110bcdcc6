import math

import mpmath as mp
import numpy as np
import pytest
from scipy import stats

from wfmle import ancestral
from wfmle.ancestral import AncestralDistribution, log_b, q_pmf_oracle, sample_M
from wfmle.errors import TimeTooSmall

mp.mp.dps = 50


def b_mp(m, k, t, theta):
    """Direct 50-digit evaluation of b_k(m)."""
    theta, t = mp.mpf(theta), mp.mpf(t)
    if m == 0 and k == 0:
        return mp.mpf(1)
    return ((theta + 2 * k - 1) / (mp.factorial(m) * mp.factorial(k - m))
            * mp.gamma(theta + m + k - 1) / mp.gamma(theta + m) * mp.exp(-k * (k + theta - 1) * t / 2))


def q_mp(m, t, theta, terms=400):
    return mp.nsum(lambda j: (-1) ** int(j) * b_mp(m, m + int(j), t, theta), [0, terms])


def test_log_b_degenerate_case():
    assert log_b(0, 0, 1.0, 0.04) == (0.0, True)
    assert log_b(0, 0, 3.0, 0.5) == (0.0, True)


@pytest.mark.parametrize("m,k,t,theta", [(0, 1, 1.0, 0.04), (0, 5, 0.3, 0.04), (2, 2, 1.0, 0.04),
                                         (2, 9, 0.1, 0.5), (7, 30, 0.05, 0.04), (1, 1, 5.0, 1.5)])
def test_log_b_matches_high_precision(m, k, t, theta):
    val, ok = log_b(m, k, t, theta)
    assert ok
    assert val == pytest.approx(float(mp.log(b_mp(m, k, t, theta))), rel=1e-12, abs=1e-12)


def test_b1_at_m0_closed_form():
    # Gamma(theta)/Gamma(theta) cancels, leaving (theta+1) e^{-theta t/2}
    val, _ = log_b(0, 1, 1.0, 0.04)
    assert math.exp(val) == pytest.approx(1.04 * math.exp(-0.02), rel=1e-14)


def test_log_b_undefined_below_m():
    _, ok = log_b(3, 2, 1.0, 0.04)
    assert not ok


def test_terms_eventually_decreasing():
    k0 = ancestral.decreasing_from(2, 1.0, 0.04)
    vals = [log_b(2, k, 1.0, 0.04)[0] for k in range(k0, k0 + 40)]
    assert np.all(np.diff(vals) < 0)


@pytest.mark.parametrize("m,t,theta", [(0, 1.0, 0.04), (1, 1.0, 0.04), (3, 0.25, 0.04), (5, 0.1, 0.5),
                                       (20, 0.05, 0.04), (0, 5.0, 0.5)])
def test_q_oracle_matches_mpmath(m, t, theta):
    assert q_pmf_oracle(m, t, theta, 1e-14) == pytest.approx(float(q_mp(m, t, theta)), abs=1e-13)


def test_q_normalization():
    d = AncestralDistribution(1.0, 0.04)
    q, tail = d.pmf_vector(1e-12)
    assert tail < 1e-12
    assert q.sum() == pytest.approx(1.0, abs=1e-12)


def test_q_long_time_limit():
    # the k=1 term decays only like exp(-theta t / 2), the slowest neutral eigenvalue
    assert q_pmf_oracle(0, 50.0, 0.04) == pytest.approx(1 - 1.04 * math.exp(-1.0), abs=1e-14)
    assert q_pmf_oracle(0, 1000.0, 0.04) > 1 - 1e-8


@pytest.mark.parametrize("t", [0.1, 0.5, 1.0, 5.0])
def test_q_nonnegative(t):
    d = AncestralDistribution(t, 0.04)
    for m in range(0, 201):
        lo, hi = d.pmf_bracket(m)
        assert 0.0 <= lo <= hi <= 1.0


def test_cumulative_brackets_contain_oracle():
    d = AncestralDistribution(0.25, 0.04)
    cum = mp.mpf(0)
    for m in range(25):
        cum += q_mp(m, 0.25, 0.04)
        lo, hi = d.cumulative_bracket(m)
        assert lo <= float(cum) + 1e-16 and float(cum) - 1e-16 <= hi


def test_double_and_multiprecision_paths_agree():
    for t in (0.7, 1.0, 5.0):
        fast = ancestral._q_vector_double(t, 0.04, 1e-12)
        assert fast is not None
        slow, _ = AncestralDistribution(t, 0.04).pmf_vector(1e-14)
        n = min(len(fast[0]), len(slow))
        np.testing.assert_allclose(fast[0][:n], slow[:n], atol=1e-13)


def _gof(t, theta, n, seed):
    draws = sample_M(t, theta, np.random.default_rng(seed), n)
    q, _ = ancestral.q_vector(t, theta, 1e-10)
    counts = np.bincount(draws, minlength=q.size)
    assert counts.size == q.size or counts[q.size:].sum() == 0
    counts = counts[: q.size]
    tv = 0.5 * np.abs(counts / n - q).sum()
    exp = q * n
    keep = exp >= 5
    obs = np.append(counts[keep], n - counts[keep].sum())
    ex = np.append(exp[keep], n - exp[keep].sum())
    if ex[-1] < 5:
        obs = np.append(obs[:-2], obs[-2] + obs[-1])
        ex = np.append(ex[:-2], ex[-2] + ex[-1])
    p = stats.chisquare(obs, ex).pvalue if obs.size > 1 else 1.0
    return tv, p


def test_sampler_matches_oracle_t1():
    tv, p = _gof(1.0, 0.04, 100_000, 7)
    assert tv < 0.01 and p > 1e-3


def test_sampler_long_time():
    draws = sample_M(1000.0, 0.04, np.random.default_rng(3), 10_000)
    assert np.mean(draws == 0) > 0.999
    draws = sample_M(50.0, 0.04, np.random.default_rng(3), 10_000)
    p0 = 1 - 1.04 * math.exp(-1.0)
    assert abs(np.mean(draws == 0) - p0) < 4 * math.sqrt(p0 * (1 - p0) / 10_000)


def test_sampler_deterministic():
    a = sample_M(0.3, 0.04, np.random.default_rng(11), 1000)
    b = sample_M(0.3, 0.04, np.random.default_rng(11), 1000)
    np.testing.assert_array_equal(a, b)


def test_sampler_rejects_small_t():
    with pytest.raises(TimeTooSmall):
        sample_M(0.01, 0.04, np.random.default_rng(0))


def test_small_t_fallback_is_opt_in():
    d = sample_M(0.01, 0.04, np.random.default_rng(0), 2000, approx_small_t=True)
    mean, var = ancestral.normal_approx_moments(0.01, 0.04)
    assert abs(d.mean() - mean) < 4 * math.sqrt(var / 2000) + 0.5


def test_normal_moments_close_to_exact():
    d = AncestralDistribution(0.05, 0.04)
    q, _ = d.pmf_vector(1e-14)
    m = np.arange(q.size)
    mean, var = ancestral.normal_approx_moments(0.05, 0.04)
    assert (q * m).sum() == pytest.approx(mean, rel=0.02)
    assert (q * m * m).sum() - (q * m).sum() ** 2 == pytest.approx(var, rel=0.1)
