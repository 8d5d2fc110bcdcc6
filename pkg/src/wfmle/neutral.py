"""Neutral Wright-Fisher transition density and exact neutral sampling.

The neutral transition density is a mixture over the ancestral count M:

    p(x, y; t) = sum_m q_m(t) sum_l Bin(l; m, x) Beta(y; theta_a + l, theta_A + m - l).

Averaging the inner sum over draws of M gives an unbiased estimate of
p(x, y; t); summing it against the series for q_m(t) gives a deterministic
value used as a test oracle.

Bridge values are drawn one time point at a time.  Given the current value u
and the terminal value y, the next value has density proportional to
p(u, z; s) p(z, y; r), a mixture of beta densities over four indices whose
weights are built from the two q vectors.  The mixture is truncated with a
certified relative tail below ``eps``; this truncation is the only
non-exact step of the neutral samplers.
"""
from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import betaln, gammaln, logsumexp, xlog1py, xlogy

from . import ancestral
from .ancestral import T_MIN
from .errors import TimeTooSmall, TruncationBudget
from .model import MutationRates

BRIDGE_EPS = 1e-12
M_BUDGET = 5000

# doubles strictly inside (0, 1)
_LOWEST = np.finfo(float).tiny
_HIGHEST = np.nextafter(1.0, 0.0)


def _check_interior(y, name="y"):
    y = np.asarray(y, dtype=float)
    if np.any(~(y > 0.0)) or np.any(~(y < 1.0)):
        raise ValueError(f"{name} must lie strictly inside (0, 1); boundary densities may be unbounded")
    return y


def log_beta_density(y, a, b):
    return xlogy(a - 1.0, y) + xlog1py(b - 1.0, -y) - betaln(a, b)


def log_binomial_pmf(l, m, x):
    return (gammaln(m + 1.0) - gammaln(l + 1.0) - gammaln(m - l + 1.0)
            + xlogy(l, x) + xlog1py(m - l, -x))


def log_density_given_m(m: int, x: float, y: float, mutation: MutationRates) -> float:
    l = np.arange(m + 1, dtype=float)
    terms = (log_binomial_pmf(l, m, x)
             + log_beta_density(y, mutation.theta_a + l, mutation.theta_A + m - l))
    return float(logsumexp(terms))


def density_given_m(m: int, x: float, y: float, mutation: MutationRates) -> float:
    """sum_l Bin(l; m, x) Beta(y; theta_a + l, theta_A + m - l)."""
    _check_interior(y)
    if not 0.0 <= x <= 1.0:
        raise ValueError("x must lie in [0, 1]")
    return math.exp(log_density_given_m(int(m), float(x), float(y), mutation))


def densities_for_draws(m_draws, x: float, y: float, mutation: MutationRates) -> np.ndarray:
    """density_given_m for every draw, evaluating each distinct m once."""
    _check_interior(y)
    m_draws = np.asarray(m_draws, dtype=np.int64)
    uniq, inv = np.unique(m_draws, return_inverse=True)
    vals = np.array([math.exp(log_density_given_m(int(m), float(x), float(y), mutation)) for m in uniq])
    return vals[inv].reshape(m_draws.shape)


def transition_density_estimate(x, y, t, mutation: MutationRates, m_draws) -> float:
    """Unbiased estimate of p(x, y; t) from draws of M at (t, theta)."""
    m_draws = np.asarray(m_draws)
    if m_draws.size == 0:
        raise ValueError("need at least one draw of M")
    return float(np.mean(densities_for_draws(m_draws, x, y, mutation)))


def transition_density_oracle(x, y, t, mutation: MutationRates, tol: float = 1e-10, *,
                              t_min: float = T_MIN) -> float:
    """Deterministic double sum over m and l with q tail mass below ``tol``."""
    _check_interior(y)
    if t < t_min:
        raise TimeTooSmall(f"t={t} below t_min={t_min}")
    dist = ancestral.ancestral(float(t), mutation.theta, t_min)
    q, _ = dist.pmf_vector(tol)
    total = 0.0
    for m, qm in enumerate(q):
        if qm > 0.0:
            total += qm * math.exp(log_density_given_m(m, float(x), float(y), mutation))
    return total


def sample_beta(a, b, rng: np.random.Generator):
    """Beta variates through log-gamma variates, kept strictly inside (0, 1).

    Gamma(a) for small a is drawn as Gamma(a + 1) * U^(1/a) in log space,
    which keeps tiny shape parameters from underflowing to an exact 0.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    shape = np.broadcast(a, b).shape
    ga = np.log(rng.standard_gamma(a + 1.0, size=shape)) + np.log(rng.random(shape)) / a
    gb = np.log(rng.standard_gamma(b + 1.0, size=shape)) + np.log(rng.random(shape)) / b
    # y = 1 / (1 + exp(gb - ga))
    y = np.exp(-np.logaddexp(0.0, gb - ga))
    return np.clip(y, _LOWEST, _HIGHEST)


def sample_transition(x, t, mutation: MutationRates, rng: np.random.Generator, size=None, *,
                      t_min: float = T_MIN, approx_small_t: bool = False):
    """Exact draw from p(x, . ; t): M, then Binomial(M, x), then a beta variate."""
    if not 0.0 <= x <= 1.0:
        raise ValueError("x must lie in [0, 1]")
    m = ancestral.sample_M(t, mutation.theta, rng, size if size is not None else 1,
                           t_min=t_min, approx_small_t=approx_small_t)
    l = rng.binomial(m, x)
    y = sample_beta(mutation.theta_a + l, mutation.theta_A + m - l, rng)
    return float(y[0]) if size is None else y


@dataclass
class BridgeSkeleton:
    """Values of a neutral bridge from (0, x) to (t, y) at interior times."""

    x: float
    y: float
    t: float
    times: np.ndarray
    values: np.ndarray
    approximate_points: int = 0

    def as_pairs(self) -> list[tuple[float, float]]:
        pts = [(0.0, self.x)]
        pts += [(float(s), float(v)) for s, v in zip(self.times, self.values)]
        pts.append((self.t, self.y))
        return pts


@functools.lru_cache(maxsize=512)
def _q_cached(t: float, theta: float, tail: float, t_min: float):
    q, tail_bound = ancestral.q_vector(t, theta, tail, t_min=t_min)
    return q, tail_bound


def _q_upper_log(m: int, t: float, theta: float) -> float:
    """log of an upper bound on q_m(t), m >= 1.

    Past K0 the partial sums bracket q_m, so q_m is at most the sum of the
    term magnitudes up to K0.
    """
    k0 = ancestral.decreasing_from(m, t, theta)
    k = np.arange(m, k0 + 1, dtype=float)
    lb = (np.log(theta + 2 * k - 1) - gammaln(m + 1.0) - gammaln(k - m + 1.0)
          + gammaln(theta + m + k - 1) - gammaln(theta + m) - k * (k + theta - 1) * t / 2.0)
    return float(logsumexp(lb))


def _log_density_growth(ms: np.ndarray, y: float, mutation: MutationRates) -> np.ndarray:
    """log of an upper bound on max_l Beta(y; theta_a + l, theta_A + m - l)."""
    ms = ms.astype(float)
    th = mutation.theta
    interior = np.log(th + ms)
    left = ((mutation.theta_a - 1.0) * math.log(y) + mutation.theta_a * np.log(th + ms)
            - gammaln(mutation.theta_a))
    right = ((mutation.theta_A - 1.0) * math.log1p(-y) + mutation.theta_A * np.log(th + ms)
             - gammaln(mutation.theta_A))
    return np.maximum(interior, np.maximum(left, right))


def _tail_sum_bound(start: int, t: float, theta: float, log_weight) -> float:
    """Bound on sum_{m >= start} q_m(t) w(m) for polynomially growing weights w.

    Terms are bounded one m at a time; once successive bounds shrink by more
    than half (and keep shrinking, since q_m decays like exp(-m^2 t / 2)) the
    rest is closed with a geometric series.
    """
    logs = []
    for m in range(max(start, 1), max(start, 1) + 2000):
        logs.append(_q_upper_log(m, t, theta) + float(log_weight(np.array([m]))[0]))
        if len(logs) > 1 and logs[-1] - logs[-2] < -math.log(2.0) and m > 2.0 / t:
            return float(np.exp(logsumexp(logs[:-1])) + 2.0 * math.exp(logs[-1]))
    return math.inf


def _drop_smallest(logw: np.ndarray, budget: float) -> tuple[np.ndarray, float]:
    """Mask keeping all but the smallest entries whose total mass stays within budget."""
    order = np.argsort(logw)
    c = np.cumsum(np.exp(logw[order]))
    n_drop = int(np.searchsorted(c, budget, side="right"))
    keep = np.ones(logw.size, dtype=bool)
    keep[order[:n_drop]] = False
    return keep, float(c[n_drop - 1]) if n_drop else 0.0


def _index_pairs(M: int) -> tuple[np.ndarray, np.ndarray]:
    m = np.repeat(np.arange(M + 1), np.arange(M + 1) + 1)
    l = np.arange(m.size) - np.repeat(np.cumsum(np.arange(M + 1)), np.arange(M + 1) + 1)
    return m, l


def _bridge_component_weights(u, s, y, r, mutation, eps, t_min):
    """Log weights over (m1, l1, m2, l2) and the beta parameters of each component.

    A component weight factors as w1(m1, l1) * w2(m2, l2) * c, where
    w1 = q_{m1}(s) Bin(l1; m1, u), w2 = q_{m2}(r) Beta(y; theta_a + l2, theta_A + m2 - l2)
    and c = E[Bin(l2; m2, Z)] for Z ~ Beta(theta_a + l1, theta_A + m1 - l1) lies in [0, 1].
    Dropping entries of w1 or w2 therefore loses at most the dropped mass times a
    computable sum on the other side, which is how the truncation is certified.
    """
    th_a, th_A, th = mutation.theta_a, mutation.theta_A, mutation.theta
    tail = 1e-14
    while True:
        q1, _ = _q_cached(float(s), th, tail, t_min)
        q2, _ = _q_cached(float(r), th, tail, t_min)
        M1, M2 = len(q1) - 1, len(q2) - 1
        if M1 > M_BUDGET or M2 > M_BUDGET:
            raise TruncationBudget(f"bridge mixture needs more than {M_BUDGET} lineages")
        m1, l1 = _index_pairs(M1)
        m2, l2 = _index_pairs(M2)
        with np.errstate(divide="ignore"):
            lw1 = np.log(q1[m1]) + log_binomial_pmf(l1, m1, u)
            lw2 = np.log(q2[m2]) + log_beta_density(y, th_a + l2, th_A + m2 - l2)
        growth = functools.partial(_log_density_growth, y=y, mutation=mutation)
        tail1 = _tail_sum_bound(M1 + 1, s, th, lambda ms: np.zeros(len(ms)))
        tail2 = _tail_sum_bound(M2 + 1, r, th, growth)
        # sum over m2 of q_{m2} max_l Beta(y; ...), including the tail beyond M2
        dmax = np.full(M2 + 1, -np.inf)
        np.maximum.at(dmax, m2, lw2 - np.log(np.maximum(q2[m2], 1e-300)))
        with np.errstate(divide="ignore"):
            right_sum = math.exp(logsumexp(np.log(q2) + dmax)) + tail2

        def table(keep1, keep2):
            a = th_a + l1[keep1][:, None] + l2[keep2][None, :]
            b = th_A + (m1 - l1)[keep1][:, None] + (m2 - l2)[keep2][None, :]
            logw = (lw1[keep1] - betaln(th_a + l1[keep1], th_A + (m1 - l1)[keep1]))[:, None] \
                + (lw2[keep2] + gammaln(m2[keep2] + 1.0) - gammaln(l2[keep2] + 1.0)
                   - gammaln((m2 - l2)[keep2] + 1.0))[None, :] + betaln(a, b)
            return logw, a, b

        fin1, fin2 = np.isfinite(lw1), np.isfinite(lw2)
        # coarse pass for a lower bound on the total weight
        k1, _ = _drop_smallest(np.where(fin1, lw1, -np.inf), 1e-3)
        k2, _ = _drop_smallest(np.where(fin2, lw2, -np.inf), 1e-3 * math.exp(logsumexp(lw2[fin2])))
        coarse, _, _ = table(k1 & fin1, k2 & fin2)
        total_lo = math.exp(logsumexp(coarse))
        if (tail1 * right_sum + tail2) <= 0.5 * eps * total_lo:
            k1, d1 = _drop_smallest(np.where(fin1, lw1, -np.inf), 0.25 * eps * total_lo / right_sum)
            k2, d2 = _drop_smallest(np.where(fin2, lw2, -np.inf), 0.25 * eps * total_lo)
            logw, a, b = table(k1 & fin1, k2 & fin2)
            dropped = (tail1 + d1) * right_sum + tail2 + d2
            if dropped <= eps * math.exp(logsumexp(logw)):
                return logw, a, b
        if tail < 1e-60:
            raise TruncationBudget(
                f"could not certify bridge truncation eps={eps} (u={u}, y={y}, s={s}, r={r})"
            )
        tail *= 1e-6


def _approximate_bridge_point(u, s, y, r, rng):
    # local Gaussian bridge with variance from the interpolated mean
    mean = u + (y - u) * s / (s + r)
    v = min(max(mean * (1.0 - mean), 1e-300), 0.25)
    sd = math.sqrt(v * s * r / (s + r))
    for _ in range(1000):
        z = mean + sd * rng.standard_normal()
        if 0.0 < z < 1.0:
            return float(np.clip(z, _LOWEST, _HIGHEST))
    return float(np.clip(mean, _LOWEST, _HIGHEST))


def sample_bridge_point(u, s, y, r, mutation: MutationRates, rng: np.random.Generator, *,
                        eps: float = BRIDGE_EPS, t_min: float = T_MIN,
                        small_gap: str = "strict") -> tuple[float, bool]:
    """Value at time s of a neutral bridge from u (time 0) to y (time s + r).

    Returns the value and whether the small-gap approximation was used.
    """
    if s < t_min or r < t_min:
        if small_gap != "approx":
            raise TimeTooSmall(
                f"bridge gap {min(s, r):.3g} is below t_min={t_min}; use small_gap='approx' "
                f"to allow the local Gaussian approximation"
            )
        return _approximate_bridge_point(u, s, y, r, rng), True
    logw, a, b = _bridge_component_weights(float(u), float(s), float(y), float(r), mutation, eps, t_min)
    flat = logw.ravel()
    w = np.exp(flat - flat.max())
    c = np.cumsum(w)
    idx = int(np.searchsorted(c, rng.random() * c[-1], side="right"))
    idx = min(idx, len(c) - 1)
    z = sample_beta(a.ravel()[idx], b.ravel()[idx], rng)
    return float(z), False


def sample_bridge_skeleton(x, y, t, times, mutation: MutationRates, rng: np.random.Generator, *,
                           eps: float = BRIDGE_EPS, t_min: float = T_MIN,
                           small_gap: str = "strict") -> BridgeSkeleton:
    """Neutral bridge from (0, x) to (t, y) sampled at the given interior times.

    Values are drawn left to right, each conditioned on the previous value and
    on the terminal value.  Endpoints are never resampled.
    """
    _check_interior(y)
    _check_interior(x, "x")
    times = np.asarray(times, dtype=float)
    if times.size and (times[0] <= 0.0 or times[-1] >= t or np.any(np.diff(times) <= 0.0)):
        raise ValueError("bridge times must be strictly increasing inside (0, t)")
    values = np.empty(times.size)
    approx = 0
    prev_t, prev_v = 0.0, float(x)
    for i, tau in enumerate(times):
        v, was_approx = sample_bridge_point(prev_v, tau - prev_t, y, t - tau, mutation, rng,
                                            eps=eps, t_min=t_min, small_gap=small_gap)
        values[i] = v
        approx += was_approx
        prev_t, prev_v = tau, v
    return BridgeSkeleton(float(x), float(y), float(t), times, values, approx)
