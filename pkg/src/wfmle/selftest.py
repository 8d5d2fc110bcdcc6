"""Oracle and identity checks runnable from the command line."""
from __future__ import annotations

import math

import numpy as np
from scipy import stats

from . import ancestral, exactsim, inference, likelihood as lk, neutral, rng as rngs
from .model import HaploidModel, MutationRates, ParameterDomain


def _ancestral_gof(t, theta, n, seed):
    draws = ancestral.sample_M(t, theta, rngs.stream(seed, 0, 0, 0), n)
    q, _ = ancestral.q_vector(t, theta, 1e-10)
    counts = np.bincount(draws, minlength=q.size)[: q.size]
    tv = 0.5 * np.abs(counts / n - q).sum() + 0.5 * np.sum(draws >= q.size) / n
    # pool sparse cells for the chi-square statistic
    exp = q * n
    keep = exp >= 5
    obs_p = np.append(counts[keep], n - counts[keep].sum())
    exp_p = np.append(exp[keep], n - exp[keep].sum())
    if exp_p[-1] < 5:
        obs_p[-2] += obs_p[-1]
        exp_p[-2] += exp_p[-1]
        obs_p, exp_p = obs_p[:-1], exp_p[:-1]
    pval = stats.chisquare(obs_p, exp_p).pvalue if obs_p.size > 1 else 1.0
    return tv, pval


def _density_z(x, y, t, mu, n, seed):
    m = ancestral.sample_M(t, mu.theta, rngs.stream(seed, 1, 0, 0), n)
    d = neutral.densities_for_draws(m, x, y, mu)
    oracle = neutral.transition_density_oracle(x, y, t, mu, 1e-10)
    return (d.mean() - oracle) / (d.std(ddof=1) / math.sqrt(n))


def _unit_mass(n, seed):
    mu = MutationRates(0.02, 0.02)
    model = HaploidModel(mu)
    theta, dt = 0.7, 1.0
    rho = model.sam_rate(ParameterDomain.symmetric(1.0))
    lo, _ = model.phi_bounds(theta)
    g = rngs.stream(seed, 2, 0, 0)
    w = np.empty(n)
    for i in range(n):
        u = 0.5
        v = neutral.sample_transition(u, dt, mu, g)
        pp = exactsim.sample_marked_poisson(rho, dt, False, g)
        sk = neutral.sample_bridge_skeleton(u, v, dt, pp.times, mu, g, small_gap="approx")
        f = 1.0 - (model.phi(sk.values, theta) - lo) / rho
        w[i] = math.exp(model.A(v, theta) - model.A(u, theta) - dt * lo) * np.prod(f)
    return (w.mean() - 1.0) / (w.std(ddof=1) / math.sqrt(n))


def _neutral_reduction(seed):
    mu = MutationRates(0.02, 0.02)
    model = HaploidModel(mu)
    d = lk.draw_contribution(0.3, 0.6, 1.0, mu, model.sam_rate(ParameterDomain.symmetric(1.0)), 50, seed)
    return lk.contribution_estimate(d, model, 0.0) == neutral.transition_density_estimate(0.3, 0.6, 1.0, mu,
                                                                                          d.m[:, 0])


def _trend(seed):
    mu = MutationRates(0.02, 0.02)
    model = HaploidModel(mu)
    series = exactsim.simulate_path(model, 0.7, [0.5], np.arange(31.0), rngs.stream(seed, 0, 0, rngs.SIMULATE))
    dom = ParameterDomain.symmetric(1.0)
    draws = lk.draw_all(series, model, dom, 200, seed)
    ses = []
    for N in (10, 200):
        se, _ = inference.bootstrap_se(series, model, dom, N, 10, seed, draws=[d.head(N) for d in draws])
        ses.append(float(se[0]))
    return ses


def run(level: str = "quick") -> bool:
    full = level == "full"
    seed = 20240601
    results = []

    def fmt(v):
        if isinstance(v, (tuple, list)):
            return ", ".join(fmt(u) for u in v)
        return f"{v:.4g}" if isinstance(v, (float, np.floating)) else str(v)

    def check(name, fn, ok):
        value = fn()
        passed = bool(ok(value))
        results.append(passed)
        print(f"{'PASS' if passed else 'FAIL'}  {name}: {fmt(value)}", flush=True)

    n_anc = 100_000 if full else 20_000
    cases = [(0.25, 0.04), (1.0, 0.04), (5.0, 0.5)] if not full else \
        [(t, th) for t in (0.25, 1.0, 5.0) for th in (0.04, 0.5)]
    for t, th in cases:
        check(f"ancestral sampler t={t} theta={th} (TV, chi-square p)",
              lambda t=t, th=th: _ancestral_gof(t, th, n_anc, seed), lambda v: v[0] < (0.01 if full else 0.02) and v[1] > 1e-3)
    mu = MutationRates(0.02, 0.02)
    check("density estimator vs oracle (z score)", lambda: _density_z(0.3, 0.6, 0.5, mu, 10_000 if full else 3000,
                                                                       seed), lambda z: abs(z) < 4)
    check("neutral reduction is bitwise", lambda: _neutral_reduction(seed), lambda v: v)
    check("unit-mass identity (z score)", lambda: _unit_mass(20_000 if full else 2000, seed), lambda z: abs(z) < 3.5)
    if full:
        check("bootstrap SE shrinks from N=10 to N=200", lambda: _trend(seed), lambda v: v[1] < v[0])
    ok = all(results)
    print(f"{sum(results)}/{len(results)} checks passed")
    return ok
