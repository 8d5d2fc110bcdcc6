"""Exact simulation of Wright-Fisher paths under selection.

Paths are proposed from the neutral process and accepted by Poisson
thinning: a marked Poisson process at rate phi+ - phi- is laid over the
proposal, and the proposal survives if no marked point falls below the
normalized graph of phi.  For an unconditioned step the endpoint is also
accepted with probability exp{A(v) - A+}.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import neutral
from .ancestral import T_MIN
from .errors import RejectionBudget
from .model import SelectionModel

PROPOSAL_BUDGET = 1_000_000


@dataclass
class MarkedPoissonSample:
    t: float
    rate: float
    times: np.ndarray
    marks: np.ndarray | None = None

    @property
    def K(self) -> int:
        return int(self.times.size)


def sample_marked_poisson(rate: float, t: float, with_marks: bool, rng: np.random.Generator) -> MarkedPoissonSample:
    if rate < 0 or t <= 0:
        raise ValueError("need rate >= 0 and t > 0")
    k = int(rng.poisson(rate * t)) if rate > 0 else 0
    times = np.sort(rng.uniform(0.0, t, size=k))
    marks = rng.random(k) if with_marks else None
    return MarkedPoissonSample(float(t), float(rate), times, marks)


def _as_states(values, n_loci: int) -> np.ndarray:
    v = np.asarray(values, dtype=float)
    if v.ndim == 1:
        v = v.reshape(-1, n_loci) if n_loci > 1 else v[:, None]
    return v


def acceptance_indicator(model: SelectionModel, theta, values, marks) -> bool:
    """True iff every marked point lies above the normalized graph of phi."""
    states = _as_states(values, model.n_loci)
    marks = np.asarray(marks, dtype=float)
    if states.shape[0] != marks.size:
        raise ValueError(f"{states.shape[0]} skeleton values but {marks.size} marks")
    if marks.size == 0:
        return True
    lo, hi = model.phi_bounds(theta)
    if hi <= lo:
        return True
    g = (model.phi_states(states, theta) - lo) / (hi - lo)
    return bool(np.all(g <= marks))


@dataclass
class PathSkeleton:
    """Exact (time, state) pairs of a sampled path; states have shape (K, L)."""

    times: np.ndarray
    states: np.ndarray
    proposals: int = 1
    approximate_points: int = 0


def _joint_bridge(x, y, t, times, model, rng, eps, t_min, small_gap):
    L = model.n_loci
    values = np.empty((times.size, L))
    approx = 0
    for k in range(L):
        sk = neutral.sample_bridge_skeleton(x[k], y[k], t, times, model.mutation, rng,
                                            eps=eps, t_min=t_min, small_gap=small_gap)
        values[:, k] = sk.values
        approx += sk.approximate_points
    return values, approx


def sample_conditioned_path(model: SelectionModel, theta, x, y, t: float, rng: np.random.Generator, *,
                            budget: int = PROPOSAL_BUDGET, eps: float = neutral.BRIDGE_EPS,
                            t_min: float = T_MIN, small_gap: str = "approx") -> PathSkeleton:
    """Skeleton of the selected bridge from x to y over [0, t]."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    lo, hi = model.phi_bounds(theta)
    rate = max(hi - lo, 0.0)
    for n in range(1, budget + 1):
        pp = sample_marked_poisson(rate, t, True, rng)
        values, approx = _joint_bridge(x, y, t, pp.times, model, rng, eps, t_min, small_gap)
        if acceptance_indicator(model, theta, values, pp.marks):
            return PathSkeleton(pp.times, values, n, approx)
    raise RejectionBudget(f"no acceptance in {budget} proposals (empirical acceptance rate < {1 / budget:.1e})")


@dataclass
class SimulationStats:
    proposals: list = field(default_factory=list)
    approximate_points: int = 0

    @property
    def acceptance_rate(self) -> float:
        return len(self.proposals) / max(1, sum(self.proposals))


def simulate_step(model: SelectionModel, theta, u, dt: float, rng: np.random.Generator, *,
                  budget: int = PROPOSAL_BUDGET, eps: float = neutral.BRIDGE_EPS,
                  t_min: float = T_MIN, small_gap: str = "approx", approx_small_t: bool = False):
    """One exact step of the selected diffusion from state u over time dt.

    Returns the new state, the number of proposals and the number of
    approximated bridge points.
    """
    u = np.atleast_1d(np.asarray(u, dtype=float))
    lo, hi = model.phi_bounds(theta)
    rate = max(hi - lo, 0.0)
    a_plus = model.A_plus(theta)
    for n in range(1, budget + 1):
        pp = sample_marked_poisson(rate, dt, True, rng)
        v = np.array([neutral.sample_transition(u[k], dt, model.mutation, rng, t_min=t_min,
                                                approx_small_t=approx_small_t)
                      for k in range(model.n_loci)])
        values, approx = _joint_bridge(u, v, dt, pp.times, model, rng, eps, t_min, small_gap)
        if not acceptance_indicator(model, theta, values, pp.marks):
            continue
        log_acc = float(model.potential_states(v, theta)) - a_plus
        if rng.random() < math.exp(min(log_acc, 0.0)):
            return v, n, approx
    raise RejectionBudget(f"no acceptance in {budget} proposals for a step of length {dt}")


def simulate_path(model: SelectionModel, theta, x0, times, rng: np.random.Generator, *,
                  stats: SimulationStats | None = None, **kwargs):
    """Exact states at the observation times, chained one gap at a time.

    ``times`` starts at 0; returns an array of shape (len(times), L) whose first
    row is ``x0``.
    """
    from .likelihood import ObservationSeries

    times = np.asarray(times, dtype=float)
    if times.ndim != 1 or times.size < 2 or times[0] != 0.0 or np.any(np.diff(times) <= 0):
        raise ValueError("times must start at 0 and increase strictly")
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    if x0.size != model.n_loci or np.any(x0 <= 0) or np.any(x0 >= 1):
        raise ValueError("x0 must be an interior state with one coordinate per locus")
    out = np.empty((times.size, model.n_loci))
    out[0] = x0
    for i in range(1, times.size):
        v, n, approx = simulate_step(model, theta, out[i - 1], times[i] - times[i - 1], rng, **kwargs)
        out[i] = v
        if stats is not None:
            stats.proposals.append(n)
            stats.approximate_points += approx
    return ObservationSeries(times, out)
