"""Coupled multilocus Wright-Fisher model.

The selection drift of locus k is x^k (1 - x^k) V^k(x) with
V^k = b_k + sum_{l != k} e_kl x^l.  The Girsanov potential, the path
functional and its bounds live on ``CoupledModel``; this module adds the raw
coupling term, joint bridge sampling across loci and the contribution
estimate, which uses the generic frozen-draw machinery with one shared
Poisson time set whose points are labelled by locus.
"""
from __future__ import annotations

import numpy as np

from . import likelihood as lk, neutral
from .ancestral import T_MIN
from .model import CoupledModel, MutationRates


def coupling_term(x, s, h) -> np.ndarray:
    """G^k(x) = x^k (1 - x^k) V^k(x) from raw ``s`` (L x 2) and ``h`` (L x L x 2 x 2)."""
    x = np.asarray(x, dtype=float)
    s = np.asarray(s, dtype=float)
    h = np.asarray(h, dtype=float)
    L = s.shape[0]
    V = np.empty(L)
    for k in range(L):
        v = s[k, 0] - s[k, 1]
        for l in range(L):
            if l != k:
                v += (h[k, l, 0, 1] - h[k, l, 1, 1]) \
                    + (h[k, l, 0, 0] - h[k, l, 0, 1] - h[k, l, 1, 0] + h[k, l, 1, 1]) * x[l]
        V[k] = v
    return x * (1.0 - x) * V


def joint_bridge_sample(x, y, t: float, times, mutation: MutationRates, rng: np.random.Generator, *,
                        eps: float = neutral.BRIDGE_EPS, t_min: float = T_MIN,
                        small_gap: str = "strict") -> list[neutral.BridgeSkeleton]:
    """Independent neutral bridges, one per locus, at a shared set of times."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    if x.shape != y.shape:
        raise ValueError("x and y need one coordinate per locus")
    return [neutral.sample_bridge_skeleton(x[k], y[k], t, times, mutation, rng, eps=eps, t_min=t_min,
                                           small_gap=small_gap)
            for k in range(x.size)]


def coupled_contribution(draws: lk.ContributionDraws, model: CoupledModel, theta, weights=None) -> float:
    """Estimate of the coupled transition density for one increment.

    The neutral factor is the product of the per-locus mixture densities for
    each sample; the thinning factor runs over the shared, locus-labelled
    Poisson points evaluated at the joint bridge states.
    """
    if draws.n_loci != model.n_loci:
        raise ValueError("draws and model disagree on the number of loci")
    return lk.contribution_estimate(draws, model, theta, weights)


def haploid_equivalent(theta_k: float) -> float:
    """Haploid parameter with the same drift as a coupled locus with b_k = theta_k and no interactions.

    The haploid drift is x(1-x) theta / 2, the coupled one x(1-x) b_k.
    """
    return 2.0 * theta_k
