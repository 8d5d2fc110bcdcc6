"""Maximization of the frozen-draw log-likelihood and bootstrap errors."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

from . import likelihood as lk, rng as rngs
from .errors import MaxEvaluations
from .model import ParameterDomain, SelectionModel

# stand-in for -log L when the likelihood estimate is zero
_WORST = 1e300


@dataclass
class MleResult:
    theta_hat: np.ndarray
    log_lik: float
    evaluations: int
    converged: bool
    bootstrap_se: np.ndarray | None = None
    diagnostics: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = {
            "theta_hat": [float(v) for v in self.theta_hat],
            "log_lik": float(self.log_lik),
            "evaluations": int(self.evaluations),
            "converged": bool(self.converged),
        }
        if self.bootstrap_se is not None:
            d["bootstrap_se"] = [float(v) for v in self.bootstrap_se]
        return d


def _negated(f):
    def g(x):
        v = f(x)
        return -v if math.isfinite(v) else _WORST
    return g


def brent_maximize(f, a: float, b: float, xtol: float = 1e-6, max_eval: int = 500, *,
                   strict: bool = False) -> MleResult:
    """Maximize a scalar function on [a, b] by Brent's bounded method.

    With ``strict`` an exhausted budget raises ``MaxEvaluations``; otherwise the
    best point is returned with ``converged=False``.
    """
    if not a < b:
        raise ValueError("need a < b")
    res = optimize.minimize_scalar(_negated(f), bounds=(a, b), method="bounded",
                                   options={"xatol": xtol, "maxiter": max_eval})
    x = float(res.x)
    if not res.success and strict:
        raise MaxEvaluations(f"Brent used {res.nfev} evaluations without reaching xtol={xtol}")
    val = f(x)
    return MleResult(np.array([x]), float(val), int(res.nfev), bool(res.success))


def simplex_maximize(f, domain: ParameterDomain, start, xtol: float = 1e-6, max_eval: int = 4000, *,
                     starts: int = 3, seed: int = 0, strict: bool = False) -> MleResult:
    """Nelder-Mead on the box, restarted from the given start and random points.

    Iterates are clipped to the box; the best result over all starts is returned.
    """
    lo, hi = np.array(domain.lower), np.array(domain.upper)
    start = np.asarray(start, dtype=float)
    if not domain.contains(start):
        raise ValueError("start must lie in the parameter box")
    g = rngs.stream(seed, 0, 0, rngs.OPTIMIZER)
    points = [start] + [lo + (hi - lo) * g.random(lo.size) for _ in range(starts - 1)]
    neg = _negated(lambda th: f(np.clip(th, lo, hi)))
    best, total, disagreements = None, 0, []
    for p in points:
        step = 0.1 * (hi - lo)
        simplex = [p.copy()]
        for i in range(p.size):
            q = p.copy()
            q[i] = q[i] + step[i] if q[i] + step[i] <= hi[i] else q[i] - step[i]
            simplex.append(q)
        res = optimize.minimize(neg, p, method="Nelder-Mead", bounds=list(zip(lo, hi)),
                                options={"xatol": xtol, "fatol": 1e-12, "maxfev": max_eval,
                                         "initial_simplex": np.array(simplex)})
        total += res.nfev
        x = np.clip(res.x, lo, hi)
        disagreements.append(x.tolist())
        if best is None or res.fun < best[1]:
            best = (x, res.fun, bool(res.success))
    if not best[2] and strict:
        raise MaxEvaluations(f"simplex did not converge within {max_eval} evaluations per start")
    x = best[0]
    return MleResult(x, float(f(x)), total, best[2], diagnostics={"starts": disagreements})


def maximize(objective, domain: ParameterDomain, *, xtol: float = 1e-6, max_eval: int | None = None,
             seed: int = 0) -> MleResult:
    lo, hi = np.array(domain.lower), np.array(domain.upper)
    if np.all(lo == hi):
        return MleResult(lo.copy(), float(objective(lo)), 1, True)
    if domain.dim == 1:
        return brent_maximize(lambda v: objective(np.array([v])), lo[0], hi[0], xtol, max_eval or 500)
    return simplex_maximize(objective, domain, domain.center, xtol, max_eval or 4000, seed=seed)


def estimate_mle(series: lk.ObservationSeries, model: SelectionModel, domain: ParameterDomain, N: int, seed: int, *,
                 draws=None, weights=None, xtol: float = 1e-6, max_eval: int | None = None, threads: int = 1,
                 **draw_kwargs) -> MleResult:
    """Freeze the draws for all increments, then maximize the log-likelihood over the box."""
    if draws is None:
        draws = lk.draw_all(series, model, domain, N, seed, threads=threads, **draw_kwargs)

    def objective(th):
        return lk.log_likelihood(draws, model, th, weights).log_value

    res = maximize(objective, domain, xtol=xtol, max_eval=max_eval, seed=seed)
    res.diagnostics["approximate_points"] = int(sum(d.approximate_points for d in draws))
    return res


def _replicate(b, draws, model, domain, seed, unit, xtol, max_eval):
    g = rngs.stream(seed, b, 0, rngs.BOOTSTRAP)
    if unit == "samples":
        weights = []
        for i, d in enumerate(draws):
            gi = rngs.stream(seed, b, i + 1, rngs.BOOTSTRAP)
            weights.append(np.bincount(gi.integers(0, d.N, d.N), minlength=d.N).astype(float))
        sub = draws
    elif unit == "observations":
        idx = g.integers(0, len(draws), len(draws))
        sub, weights = [draws[i] for i in idx], None

    else:
        raise ValueError("bootstrap unit must be 'samples' or 'observations'")

    def objective(th):
        return lk.log_likelihood(sub, model, th, weights).log_value

    return maximize(objective, domain, xtol=xtol, max_eval=max_eval, seed=seed).theta_hat


def bootstrap_se(series: lk.ObservationSeries, model: SelectionModel, domain: ParameterDomain, N: int, B: int = 50,
                 seed: int = 0, *, draws=None, unit: str = "samples", xtol: float = 1e-6,
                 max_eval: int | None = None, threads: int = 1, **draw_kwargs):
    """Bootstrap standard error of the maximizer.

    Returns (se, replicate maximizers).  With ``unit='samples'`` each replicate
    resamples the N Monte Carlo samples within every increment; with
    ``unit='observations'`` it resamples the increments.
    """
    if B < 2:
        raise ValueError("need at least two bootstrap replicates")
    if draws is None:
        draws = lk.draw_all(series, model, domain, N, seed, threads=threads, **draw_kwargs)
    args = (draws, model, domain, seed, unit, xtol, max_eval)
    if threads <= 1:
        reps = [_replicate(b, *args) for b in range(B)]
    else:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=threads) as ex:
            futs = [ex.submit(_replicate, b, *args) for b in range(B)]
            reps = [f.result() for f in futs]
    reps = np.array(reps)
    return reps.std(axis=0, ddof=1), reps
