"""Monte Carlo likelihood with frozen randomness.

For one observed increment x -> y over time t the transition density under
selection factors as

    p_theta(x, y; t) = p(x, y; t) exp{A(y) - A(x) - t phi-(theta)} a(x, y; theta),

where a is the probability that a neutral bridge survives Poisson thinning.
All randomness used to estimate p and a (ancestral draws, Poisson times,
bridge values) is drawn once, at a dominating rate valid for every theta in
the parameter box, and reused for every theta.  The estimate is then a
continuous function of theta and the maximizer is well defined.

Poisson points carry a locus label: the process is the superposition of one
process per phi term, at that term's dominating rate.  Marks are integrated
out, so point i contributes the factor 1 - (phi_k(w_i) - phi_k^-) / rho_k,
k being its label.  For a single locus this is the usual product over points
with the global rate.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import ancestral, neutral, rng as rngs
from .ancestral import T_MIN
from .model import MutationRates, ParameterDomain, SelectionModel

CACHE_VERSION = 1


@dataclass
class ObservationSeries:
    """Observed states at increasing times; ``values`` has shape (n + 1, L)."""

    times: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        v = np.asarray(self.values, dtype=float)
        if v.ndim == 1:
            v = v[:, None]
        self.values = v
        if self.times.ndim != 1 or self.times.size < 2:
            raise ValueError("need at least two observation times")
        if self.times[0] != 0.0:
            raise ValueError("observation times must start at 0")
        bad = np.nonzero(np.diff(self.times) <= 0)[0]
        if bad.size:
            raise ValueError(f"observation times must increase strictly (row {bad[0] + 1})")
        if v.shape[0] != self.times.size:
            raise ValueError("one state per observation time is required")
        rows = np.nonzero(np.any((v <= 0.0) | (v >= 1.0) | ~np.isfinite(v), axis=1))[0]
        if rows.size:
            raise ValueError(f"observation in row {rows[0]} is not strictly inside (0, 1): {v[rows[0]]}")

    @property
    def n(self) -> int:
        return self.times.size - 1

    @property
    def n_loci(self) -> int:
        return self.values.shape[1]

    def increments(self):
        for i in range(self.n):
            yield self.values[i], self.values[i + 1], float(self.times[i + 1] - self.times[i])

    def locus(self, k: int) -> "ObservationSeries":
        return ObservationSeries(self.times, self.values[:, [k]])


@dataclass
class ContributionDraws:
    """Frozen random element for one increment x -> y over time t.

    Sample j owns one ancestral draw per locus (``m[j]``), ``counts[j]``
    Poisson points, and the bridge states at those points.  Points of all
    samples are stored back to back in ``times``, ``labels`` and ``values``.
    """

    x: np.ndarray
    y: np.ndarray
    t: float
    mutation: MutationRates
    rates: np.ndarray
    m: np.ndarray
    counts: np.ndarray
    times: np.ndarray
    labels: np.ndarray
    values: np.ndarray
    approx: np.ndarray | None = None
    _dens: np.ndarray | None = field(default=None, repr=False, compare=False)

    @property
    def N(self) -> int:
        return int(self.m.shape[0])

    @property
    def n_loci(self) -> int:
        return int(self.m.shape[1])

    @property
    def rho(self) -> float:
        return float(np.sum(self.rates))

    @property
    def approximate_points(self) -> int:
        """Bridge points drawn from the small-gap approximation; ``approx`` counts them per sample and locus."""
        return 0 if self.approx is None else int(self.approx.sum())

    @property
    def sample_index(self) -> np.ndarray:
        return np.repeat(np.arange(self.N), self.counts)

    def densities(self) -> np.ndarray:
        """Per-sample, per-locus neutral density factors, shape (N, L)."""
        if self._dens is None:
            self._dens = np.column_stack([
                neutral.densities_for_draws(self.m[:, k], float(self.x[k]), float(self.y[k]), self.mutation)
                for k in range(self.n_loci)
            ])
        return self._dens

    def head(self, N: int) -> "ContributionDraws":
        """The first N samples; per-sample streams make this the N-sample draw."""
        if not 1 <= N <= self.N:
            raise ValueError(f"N must be in [1, {self.N}]")
        P = int(self.counts[:N].sum())
        return ContributionDraws(self.x, self.y, self.t, self.mutation, self.rates, self.m[:N],
                                 self.counts[:N], self.times[:P], self.labels[:P], self.values[:P],
                                 None if self.approx is None else self.approx[:N],
                                 None if self._dens is None else self._dens[:N])

    def locus(self, k: int) -> "ContributionDraws":
        """Draws of locus k alone: its ancestral draws and its labelled points."""
        keep = self.labels == k
        counts = np.bincount(self.sample_index[keep], minlength=self.N)
        return ContributionDraws(self.x[[k]], self.y[[k]], self.t, self.mutation, self.rates[[k]],
                                 self.m[:, [k]], counts, self.times[keep],
                                 np.zeros(int(keep.sum()), dtype=np.int64), self.values[keep][:, [k]],
                                 None if self.approx is None else self.approx[:, [k]])

    def to_dict(self) -> dict:
        return {
            "x": self.x.tolist(), "y": self.y.tolist(), "t": self.t,
            "rates": self.rates.tolist(), "m": self.m.tolist(), "counts": self.counts.tolist(),
            "times": self.times.tolist(), "labels": self.labels.tolist(),
            "values": self.values.tolist(), "approx": None if self.approx is None else self.approx.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict, mutation: MutationRates) -> "ContributionDraws":
        L = len(d["x"])
        return cls(np.array(d["x"], dtype=float), np.array(d["y"], dtype=float), float(d["t"]), mutation,
                   np.array(d["rates"], dtype=float), np.array(d["m"], dtype=np.int64).reshape(-1, L),
                   np.array(d["counts"], dtype=np.int64), np.array(d["times"], dtype=float),
                   np.array(d["labels"], dtype=np.int64),
                   np.array(d["values"], dtype=float).reshape(-1, L),
                   None if d.get("approx") is None else np.array(d["approx"], dtype=np.int64).reshape(-1, L))


def draw_contribution(x, y, t: float, mutation: MutationRates, rates, N: int, seed: int, index: int = 0, *,
                      t_min: float = T_MIN, eps: float = neutral.BRIDGE_EPS, small_gap: str = "approx",
                      approx_small_t: bool = False) -> ContributionDraws:
    """Draw the theta-independent random element for one increment.

    ``rates`` holds the dominating rate of each phi term (one per locus); a
    scalar is taken as the rate of a single-locus model.  Sample j of
    contribution ``index`` uses its own streams, so the first N' samples of a
    larger draw coincide with a draw of N' samples.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    L = x.size
    rates = np.atleast_1d(np.asarray(rates, dtype=float))
    if rates.size != L or np.any(rates < 0):
        raise ValueError("need one nonnegative rate per locus")
    if N < 1:
        raise ValueError("N must be at least 1")
    neutral._check_interior(y)
    rho = float(rates.sum())
    probs = rates / rho if rho > 0 else None
    m = np.empty((N, L), dtype=np.int64)
    counts = np.zeros(N, dtype=np.int64)
    times, labels, values = [], [], []
    approx = np.zeros((N, L), dtype=np.int64)
    for j in range(N):
        g = rngs.stream(seed, index, j, rngs.M_DRAW)
        m[j] = ancestral.sample_M(t, mutation.theta, g, L, t_min=t_min, approx_small_t=approx_small_t)
        if rho == 0.0:
            continue
        g = rngs.stream(seed, index, j, rngs.POISSON)
        k = int(g.poisson(rho * t))
        if k == 0:
            continue
        tj = np.sort(g.uniform(0.0, t, size=k))
        lab = g.choice(L, size=k, p=probs) if L > 1 else np.zeros(k, dtype=np.int64)
        g = rngs.stream(seed, index, j, rngs.BRIDGE)
        vals = np.empty((k, L))
        for loc in range(L):
            sk = neutral.sample_bridge_skeleton(x[loc], y[loc], t, tj, mutation, g,
                                                eps=eps, t_min=t_min, small_gap=small_gap)
            vals[:, loc] = sk.values
            approx[j, loc] = sk.approximate_points
        counts[j] = k
        times.append(tj)
        labels.append(lab)
        values.append(vals)
    cat = (lambda a, shape, dt: np.concatenate(a).astype(dt) if a else np.zeros(shape, dtype=dt))
    return ContributionDraws(x, y, float(t), mutation, rates, m, counts,
                             cat(times, (0,), float), cat(labels, (0,), np.int64),
                             cat(values, (0, L), float), approx)


def _log_factors(draws: ContributionDraws, model: SelectionModel, theta) -> np.ndarray:
    lo, hi = model.term_bounds(theta)
    spread = hi - lo
    with np.errstate(invalid="ignore", divide="ignore"):
        over = spread > draws.rates * (1.0 + 1e-12) + 1e-300
    if np.any(over):
        raise ValueError(f"parameter {np.asarray(theta).tolist()} lies outside the box the draws were made for")
    if draws.values.shape[0] == 0:
        return np.zeros(0)
    terms = model.phi_terms(draws.values, theta)
    lab = draws.labels
    f = 1.0 - (terms[np.arange(lab.size), lab] - lo[lab]) / draws.rates[lab]
    with np.errstate(divide="ignore"):
        return np.log(np.clip(f, 0.0, 1.0))


def a_samples(draws: ContributionDraws, model: SelectionModel, theta) -> np.ndarray:
    """Per-sample thinning products, each in [0, 1]."""
    lf = _log_factors(draws, model, theta)
    return np.exp(np.bincount(draws.sample_index, weights=lf, minlength=draws.N))


def _mean(v: np.ndarray, weights) -> float:
    if weights is None:
        return float(np.mean(v))
    return float(np.dot(weights, v) / np.sum(weights))


def a_estimate(draws: ContributionDraws, model: SelectionModel, theta, weights=None) -> float:
    return _mean(a_samples(draws, model, theta), weights)


def density_estimate(draws: ContributionDraws, weights=None) -> float:
    return _mean(np.prod(draws.densities(), axis=1), weights)


def log_prefactor(draws: ContributionDraws, model: SelectionModel, theta) -> float:
    lo, _ = model.term_bounds(theta)
    return float(model.potential_states(draws.y, theta) - model.potential_states(draws.x, theta)
                 - draws.t * np.sum(lo))


def contribution_estimate(draws: ContributionDraws, model: SelectionModel, theta, weights=None) -> float:
    """Unbiased estimate of the transition density under selection.

    ``weights`` (nonnegative, one per sample) reweights the samples, as used by
    the bootstrap.
    """
    return math.exp(log_prefactor(draws, model, theta)) * density_estimate(draws, weights) \
        * a_estimate(draws, model, theta, weights)


@dataclass
class LikelihoodEstimate:
    log_value: float
    contributions: np.ndarray
    theta: np.ndarray

    @property
    def degenerate(self) -> bool:
        return not np.all(self.contributions > 0)


def log_likelihood(all_draws, model: SelectionModel, theta, weights=None) -> LikelihoodEstimate:
    """Sum of log contribution estimates, accumulated in increment order."""
    contrib = np.empty(len(all_draws))
    total = 0.0
    for i, d in enumerate(all_draws):
        w = None if weights is None else weights[i]
        c = contribution_estimate(d, model, theta, w)
        contrib[i] = c
        total += math.log(c) if c > 0 else -math.inf
    return LikelihoodEstimate(total, contrib, np.atleast_1d(np.asarray(theta, dtype=float)))


def memory_estimate(n: int, N: int, rho: float, t: float, L: int) -> int:
    """Rough bytes needed to hold the frozen draws of n increments."""
    points = n * N * rho * t
    return int(n * N * (8 * L + 8) + points * (8 * L + 16))


def draw_all(series: ObservationSeries, model: SelectionModel, domain: ParameterDomain, N: int, seed: int, *,
             threads: int = 1, **kwargs) -> list[ContributionDraws]:
    """Frozen draws for every increment at the dominating rates of the box."""
    rates = model.term_rates(domain)
    jobs = [(x, y, t, model.mutation, rates, N, seed, i) for i, (x, y, t) in enumerate(series.increments())]
    if threads <= 1 or len(jobs) < 2:
        return [draw_contribution(*j, **kwargs) for j in jobs]
    from concurrent.futures import ProcessPoolExecutor

    with ProcessPoolExecutor(max_workers=threads) as ex:
        futs = [ex.submit(draw_contribution, *j, **kwargs) for j in jobs]
        return [f.result() for f in futs]
