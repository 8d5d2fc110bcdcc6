"""Law of the number of non-mutant ancestral lineages, M.

The mixing weights q_m(t) of the neutral transition density are only known
as alternating series

    q_m(t) = sum_{k >= m} (-1)^(k-m) b_k(m),
    b_k(m) = (theta+2k-1)/(m!(k-m)!) * Gamma(theta+m+k-1)/Gamma(theta+m)
             * exp(-k(k+theta-1)t/2).

Past a computable index K0(m) the terms decrease, so consecutive partial sums
bracket q_m(t).  Sampling inverts the cumulative distribution using those
brackets and only refines them when a uniform falls inside one.

Terms can be many orders of magnitude larger than q_m(t) for small t, so
brackets are computed in multiple precision (gmpy2) with the precision set
from the largest term.
"""
from __future__ import annotations

import functools
import math
import threading

import gmpy2
import numpy as np
from scipy.special import gammaln

from .errors import SeriesNonConvergence, TimeTooSmall

T_MIN = 0.05
TERM_BUDGET = 10_000
TIE_ZONE = 1e-13

_LOG2 = math.log(2.0)


def log_b(m: int, k, t: float, theta: float):
    """Log-magnitude of b_k(m) and a flag telling whether b_k(m) is defined.

    ``k`` may be an integer or an integer array.  The gamma ratio is summed
    as logs of theta+m, ..., theta+m+k-2 so no gamma function is ever taken
    at a nonpositive argument.  b_0(0) = 1 by the recurrence of Gamma.
    """
    k_arr = np.atleast_1d(np.asarray(k, dtype=np.int64))
    out = np.full(k_arr.shape, -np.inf)
    ok = k_arr >= m
    if m < 0 or t <= 0 or theta <= 0:
        ok[:] = False
    kmax = int(k_arr.max()) if k_arr.size else 0
    # logs of the rising factorial theta+m, theta+m+1, ..., theta+m+kmax-2
    nfac = max(kmax - 1, 0)
    cum = np.concatenate(([0.0], np.cumsum(np.log(theta + m + np.arange(nfac)))))
    for i, kk in enumerate(k_arr):
        if not ok[i]:
            continue
        if kk == 0:
            out[i] = 0.0
            continue
        out[i] = (
            math.log(theta + 2 * kk - 1)
            - math.lgamma(m + 1)
            - math.lgamma(kk - m + 1)
            + cum[kk - 1]
            - kk * (kk + theta - 1) * t / 2.0
        )
    if np.ndim(k) == 0:
        return float(out[0]), bool(ok[0])
    return out, ok


def _log_b_grid(mmax: int, jmax: int, t: float, theta: float) -> np.ndarray:
    """log b_{m+j}(m) on the grid m = 0..mmax, j = 0..jmax (vectorised)."""
    m = np.arange(mmax + 1)[:, None].astype(float)
    j = np.arange(jmax + 1)[None, :].astype(float)
    k = m + j
    with np.errstate(invalid="ignore", divide="ignore"):
        lb = (
            np.log(theta + 2 * k - 1)
            - gammaln(m + 1)
            - gammaln(j + 1)
            + gammaln(theta + m + k - 1)
            - gammaln(theta + m)
            - k * (k + theta - 1) * t / 2.0
        )
    lb[0, 0] = 0.0
    return lb


def decreasing_from(m: int, t: float, theta: float, budget: int = TERM_BUDGET) -> int:
    """Smallest K0 >= m such that b_k(m) is strictly decreasing for all k >= K0.

    Uses a bound on b_{k+1}/b_k that is nonincreasing in k, so the first index
    where the bound drops below one works for every later index.
    """
    k = max(m, 1)
    for _ in range(budget):
        rational = (theta + m + k - 1) / (k + 1 - m)
        bound = (theta + 2 * k + 1) / (theta + 2 * k - 1) * max(1.0, rational) * math.exp(-(2 * k + theta) * t / 2.0)
        if bound < 1.0:
            return k
        k += 1
    raise SeriesNonConvergence(
        f"terms b_k({m}) not decreasing within {budget} terms at t={t}, theta={theta}"
    )


def _ratio_bound(m, j, t, theta):
    """The ratio bound used by decreasing_from, at k = m + j (vectorized in m)."""
    m = np.asarray(m, dtype=float)
    k = np.maximum(m + j, 1.0)
    rational = (theta + m + k - 1) / (k + 1 - m)
    return (theta + 2 * k + 1) / (theta + 2 * k - 1) * np.maximum(1.0, rational) * np.exp(-(2 * k + theta) * t / 2.0)


def _series_bracket(m, t, theta, width, budget, prec):
    """Bracket of q_m(t) in multiple precision.

    Returns (lower, upper, terms_used) as mpfr values.  The bracket accounts
    for the alternating-tail remainder and for rounding in the working
    precision.
    """
    ctx = gmpy2.get_context()
    ctx.precision = prec
    mpfr = gmpy2.mpfr
    th = mpfr(theta)
    tt = mpfr(t)
    k0 = decreasing_from(m, t, theta, budget)
    # b_m(m) from the closed form (product of m-1 rising factors)
    if m == 0:
        term = mpfr(1)
    else:
        term = (th + 2 * m - 1) / gmpy2.factorial(m)
        for j in range(m - 1):
            term *= th + m + j
        term *= gmpy2.exp(-tt * m * (m + th - 1) / 2)
    decay = gmpy2.exp(-tt)
    e_k = gmpy2.exp(-(2 * m + th) * tt / 2)  # exp(-(2k+theta)t/2) at k = m
    s = mpfr(0)
    absum = mpfr(0)
    k = m
    width = mpfr(width)
    n_terms = 0
    while True:
        signed = term if (k - m) % 2 == 0 else -term
        s += signed
        absum += term
        n_terms += 1
        # next term via the ratio b_{k+1}/b_k
        if m == 0 and k == 0:
            nxt = (th + 1) * e_k
        else:
            nxt = term * (th + 2 * k + 1) / (th + 2 * k - 1) * (th + m + k - 1) / (k + 1 - m) * e_k
        e_k *= decay
        k += 1
        if k >= k0 and nxt <= width:
            slack = absum * (8 * n_terms + 16) * mpfr(2) ** (-prec)
            other = s + (nxt if (k - m) % 2 == 0 else -nxt)
            lo = min(s, other) - slack
            hi = max(s, other) + slack
            return lo, hi, n_terms
        if n_terms >= budget:
            raise SeriesNonConvergence(
                f"q_{m}({t}) did not reach bracket width {float(width):.1e} in {budget} terms"
            )
        term = nxt


def _precision_for(mmax: int, t: float, theta: float, extra_bits: int = 110) -> int:
    """Working precision (bits) from the largest term on the grid."""
    jmax = max(64, int(math.sqrt(200.0 / max(t, 1e-12))) + 16)
    lb = _log_b_grid(mmax, jmax, t, theta)
    biggest = float(np.nanmax(lb))
    return int(extra_bits + max(0.0, biggest) / _LOG2)


class AncestralDistribution:
    """Exact distribution of M at time ``t`` for total mutation rate ``theta``.

    Brackets of q_m and of the cumulative distribution are computed lazily
    and cached; the cache only grows, so sampling is deterministic in the
    random stream.
    """

    def __init__(self, t: float, theta: float, *, t_min: float = T_MIN,
                 term_budget: int = TERM_BUDGET, width: float = 1e-30):
        if not (t > 0 and theta > 0):
            raise ValueError("t and theta must be positive")
        if t < t_min:
            raise TimeTooSmall(
                f"t={t} is below t_min={t_min}; the ancestral series is not used "
                f"there (enable the approximate small-t fallback explicitly)"
            )
        self.t = float(t)
        self.theta = float(theta)
        self.term_budget = term_budget
        self.width = width
        self._lock = threading.Lock()
        self._lo: list = []
        self._hi: list = []
        self._cum_lo = np.zeros(0)
        self._cum_hi = np.zeros(0)
        self._prec = 0
        self.refinements = 0
        self._extend(8)

    # -- bracket bookkeeping -------------------------------------------------
    def _extend(self, mmax: int):
        with self._lock:
            have = len(self._lo)
            if mmax < have:
                return
            prec = max(self._prec, _precision_for(mmax, self.t, self.theta))
            if prec > self._prec and have:
                # recompute at the higher precision so all brackets are consistent
                have = 0
                self._lo, self._hi = [], []
            self._prec = prec
            for m in range(have, mmax + 1):
                lo, hi, _ = _series_bracket(m, self.t, self.theta, self.width, self.term_budget, prec)
                self._lo.append(max(lo, gmpy2.mpfr(0)))
                self._hi.append(min(hi, gmpy2.mpfr(1)))
            self._rebuild_cumulative()

    def _rebuild_cumulative(self):
        ctx = gmpy2.get_context()
        ctx.precision = self._prec
        clo, chi = [], []
        a = gmpy2.mpfr(0)
        b = gmpy2.mpfr(0)
        for lo, hi in zip(self._lo, self._hi):
            a += lo
            b += hi
            clo.append(float(a))
            chi.append(float(min(b, gmpy2.mpfr(1))))
        self._exact_tail = float(max(gmpy2.mpfr(0), 1 - a))
        # outward rounding of the double conversions
        self._cum_lo = np.nextafter(np.array(clo), -np.inf)
        self._cum_hi = np.nextafter(np.array(chi), np.inf)

    def _refine(self, ms):
        with self._lock:
            self.width = self.width * 1e-10
            self._prec += 40
            ctx = gmpy2.get_context()
            ctx.precision = self._prec
            for m in ms:
                lo, hi, _ = _series_bracket(m, self.t, self.theta, self.width, self.term_budget, self._prec)
                self._lo[m] = max(lo, gmpy2.mpfr(0))
                self._hi[m] = min(hi, gmpy2.mpfr(1))
            self._rebuild_cumulative()
            self.refinements += 1

    def ensure_mass(self, tail: float):
        """Extend the support until the certified tail mass is below ``tail``."""
        while self.tail_bound() > tail:
            self._extend(2 * len(self._lo))

    # -- public API ------------------------------------------------------------
    @property
    def support_size(self) -> int:
        return len(self._lo)

    def tail_bound(self) -> float:
        """Upper bound on P(M > current support end)."""
        return self._exact_tail

    def pmf_bracket(self, m: int) -> tuple[float, float]:
        if m < 0:
            return 0.0, 0.0
        self._extend(m)
        return float(self._lo[m]), float(self._hi[m])

    def pmf(self, m: int) -> float:
        lo, hi = self.pmf_bracket(m)
        return 0.5 * (lo + hi)

    def pmf_vector(self, tail: float = 1e-14) -> tuple[np.ndarray, float]:
        """Midpoint pmf over a support whose tail mass is certified below ``tail``."""
        self.ensure_mass(tail)
        q = np.array([0.5 * float(lo + hi) for lo, hi in zip(self._lo, self._hi)])
        return q, self.tail_bound()

    def cumulative_bracket(self, m: int) -> tuple[float, float]:
        self._extend(m)
        return float(self._cum_lo[m]), float(self._cum_hi[m])

    def sample(self, rng: np.random.Generator, size=None):
        """Draw M by inversion; brackets are refined only where a uniform lands."""
        n = 1 if size is None else int(np.prod(size))
        u = rng.random(n)
        out = np.empty(n, dtype=np.int64)
        todo = np.arange(n)
        attempts = 0
        while todo.size:
            uu = u[todo]
            while uu.max() >= self._cum_lo[-1] and self._exact_tail > 1e-25:
                self._extend(2 * len(self._lo))
            first_above_lo = np.searchsorted(self._cum_lo, uu, side="right")
            first_above_hi = np.searchsorted(self._cum_hi, uu, side="right")
            decided = (first_above_lo == first_above_hi) & (first_above_lo < len(self._cum_lo))
            out[todo[decided]] = first_above_lo[decided]
            todo = todo[~decided]
            if todo.size:
                attempts += 1
                if attempts == 1:
                    amb = set()
                    top = len(self._lo) - 1
                    for a, b in zip(first_above_hi[~decided], first_above_lo[~decided]):
                        amb.update(range(min(int(a), top), min(int(b), top) + 1))
                    self._refine(sorted(amb))
                else:
                    # tie zone after refinement: redraw the affected uniforms
                    u[todo] = rng.random(todo.size)
                    attempts = 0
        if size is None:
            return int(out[0])
        return out.reshape(size)


@functools.lru_cache(maxsize=128)
def ancestral(t: float, theta: float, t_min: float = T_MIN) -> AncestralDistribution:
    """Shared, cached distribution object for (t, theta)."""
    return AncestralDistribution(t, theta, t_min=t_min)


def q_pmf_oracle(m: int, t: float, theta: float, tol: float = 1e-12, *,
                 t_min: float = T_MIN, budget: int = TERM_BUDGET) -> float:
    """q_m(t) from a truncated alternating sum with remainder below ``tol``.

    The sum runs in multiple precision past the decreasing threshold and stops
    once the first omitted term is below ``tol``.  Clamped to [0, 1].
    """
    if t < t_min:
        raise TimeTooSmall(f"t={t} below t_min={t_min}")
    prec = _precision_for(m + 1, t, theta)
    lo, hi, _ = _series_bracket(m, t, theta, tol, budget, prec)
    val = float((lo + hi) / 2)
    return min(1.0, max(0.0, val))


def normal_approx_moments(t: float, theta: float) -> tuple[float, float]:
    """Mean and variance of the small-t normal approximation to M."""
    beta = 0.5 * (theta - 1.0) * t
    if abs(beta) < 1e-12:
        return 2.0 / t, 2.0 / (3.0 * t)
    eta = beta / math.expm1(beta)
    mean = 2.0 * eta / t
    var = 2.0 * eta / t * (eta + beta) ** 2 * (1.0 + eta / (eta + beta) - 2.0 * eta) / beta ** 2
    return mean, var


def sample_M(t: float, theta: float, rng: np.random.Generator, size=None, *,
             t_min: float = T_MIN, approx_small_t: bool = False):
    """Draw M with P(M = m) = q_m(t).

    Below ``t_min`` this raises ``TimeTooSmall`` unless ``approx_small_t`` is
    set, in which case a rounded normal approximation is used instead.  That
    fallback is approximate.
    """
    if t < t_min:
        if not approx_small_t:
            raise TimeTooSmall(f"t={t} is below t_min={t_min}")
        mean, var = normal_approx_moments(t, theta)
        draws = np.maximum(0, np.rint(mean + math.sqrt(max(var, 0.0)) * rng.standard_normal(size))).astype(np.int64)
        return int(draws) if size is None else draws
    return ancestral(float(t), float(theta), t_min).sample(rng, size)


def q_vector(t: float, theta: float, tail: float = 1e-14, *, t_min: float = T_MIN,
             approx_small_t: bool = False) -> tuple[np.ndarray, float]:
    """pmf of M on a support with certified tail mass below ``tail``.

    Used for mixture weights where the time increment varies from call to
    call.  When the series terms stay moderate in size, double precision is
    enough and much faster; otherwise the multiple-precision brackets are used.
    """
    if t < t_min:
        if not approx_small_t:
            raise TimeTooSmall(f"t={t} is below t_min={t_min}")
        return _normal_pmf(t, theta, tail)
    qf = _q_vector_double(t, theta, tail)
    if qf is not None:
        return qf
    return ancestral(float(t), float(theta), t_min).pmf_vector(tail)


def _normal_pmf(t, theta, tail):
    from scipy.stats import norm

    mean, var = normal_approx_moments(t, theta)
    sd = math.sqrt(max(var, 1e-12))
    hi = int(math.ceil(mean + 12 * sd)) + 1
    edges = np.arange(-0.5, hi + 1.0)
    cdf = norm.cdf(edges, loc=mean, scale=sd)
    q = np.diff(cdf)
    q[0] += cdf[0]
    return q / q.sum(), 0.0


@functools.lru_cache(maxsize=4096)
def _double_grid_size(t: float, theta: float):
    # support and term count for the double-precision path
    jmax = int(math.sqrt(2.0 * 75.0 / t)) + 8
    return jmax


def _q_vector_double(t, theta, tail, max_term_log10=0.5):
    jmax = _double_grid_size(t, theta)
    mmax = 16
    while True:
        lb = _log_b_grid(mmax, jmax, t, theta)
        if np.nanmax(lb) / math.log(10.0) > max_term_log10:
            return None
        sign = np.where(np.arange(jmax + 1) % 2 == 0, 1.0, -1.0)
        terms = np.exp(lb) * sign[None, :]
        q = terms.sum(axis=1)
        last = np.exp(lb[:, -1])
        if np.any(last > 1e-17):
            return None
        # each row must be past its decreasing threshold before the cut
        if not np.all(_ratio_bound(np.arange(mmax + 1), jmax - 1, t, theta) < 1.0):
            return None
        err = np.abs(terms).sum(axis=1) * 4e-15 + last
        lo_total = float(np.sum(q - err))
        if 1.0 - lo_total <= tail:
            q = np.clip(q, 0.0, 1.0)
            return q, max(0.0, 1.0 - lo_total)
        if np.sum(q[mmax // 2:]) < 1e-17:
            # the missing mass is rounding error, more rows will not help
            return None
        mmax *= 2
        if mmax > 4096:
            return None
