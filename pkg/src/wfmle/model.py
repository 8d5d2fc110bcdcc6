"""Selection models for the Wright-Fisher diffusion.

A model splits the drift into the neutral mutation part ``alpha`` and a
selection part ``x(1-x) eta(x; theta)``.  Everything the exact samplers and
the likelihood need is derived from ``eta``: the potential ``A``, the path
functional ``phi`` and bounds on both.

States are handled in two shapes.  The haploid model accepts plain arrays of
frequencies.  Generic code (samplers, likelihood) always passes arrays whose
last axis indexes loci, and calls the ``*_states`` methods.

``phi`` is additionally exposed as a sum of per-locus terms (``phi_terms``),
each with its own bounds.  The haploid model has a single term.
"""
from __future__ import annotations

import itertools
from abc import ABC, abstractmethod
from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class MutationRates:
    theta_a: float
    theta_A: float

    def __post_init__(self):
        if not (self.theta_a > 0 and self.theta_A > 0):
            raise ValueError(
                f"mutation rates must be strictly positive, got "
                f"theta_a={self.theta_a}, theta_A={self.theta_A}"
            )
        if not (np.isfinite(self.theta_a) and np.isfinite(self.theta_A)):
            raise ValueError("mutation rates must be finite")

    @property
    def theta(self) -> float:
        return self.theta_a + self.theta_A


def alpha(x, mutation: MutationRates):
    """Neutral mutation drift, 0.5 * (theta_a - theta * x)."""
    return 0.5 * (mutation.theta_a - mutation.theta * np.asarray(x, dtype=float))


def phi_from_eta(x, eta, eta_prime, mutation: MutationRates):
    """Path functional for a scalar drift perturbation ``eta``.

    ``eta`` and ``eta_prime`` are the values of the perturbation and its
    derivative at ``x``.
    """
    x = np.asarray(x, dtype=float)
    return 0.5 * (x * (1.0 - x) * (eta ** 2 + eta_prime) + 2.0 * eta * alpha(x, mutation))


@dataclass(frozen=True)
class ParameterDomain:
    """Compact box of admissible selection parameters."""

    lower: tuple
    upper: tuple

    def __post_init__(self):
        lo = tuple(float(v) for v in np.atleast_1d(self.lower))
        hi = tuple(float(v) for v in np.atleast_1d(self.upper))
        if len(lo) != len(hi) or not lo:
            raise ValueError("lower and upper must be nonempty and of equal length")
        for a, b in zip(lo, hi):
            if not (np.isfinite(a) and np.isfinite(b)):
                raise ValueError("parameter box must have finite bounds")
            if a > b:
                raise ValueError(f"empty parameter box: lower {a} > upper {b}")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @classmethod
    def symmetric(cls, c: float, dim: int = 1) -> "ParameterDomain":
        return cls((-c,) * dim, (c,) * dim)

    @property
    def dim(self) -> int:
        return len(self.lower)

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (np.array(self.lower) + np.array(self.upper))

    def contains(self, theta, atol: float = 1e-12) -> bool:
        t = np.atleast_1d(np.asarray(theta, dtype=float))
        if t.shape != (self.dim,):
            return False
        return bool(np.all(t >= np.array(self.lower) - atol) and np.all(t <= np.array(self.upper) + atol))

    def clip(self, theta) -> np.ndarray:
        return np.clip(np.atleast_1d(np.asarray(theta, dtype=float)), self.lower, self.upper)

    def grid(self, points_per_axis: int) -> np.ndarray:
        axes = [np.linspace(a, b, points_per_axis) for a, b in zip(self.lower, self.upper)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)


def _constant_eta_bounds(v, mutation: MutationRates):
    """Exact range over x in [0,1] of 0.5*[x(1-x) v^2 + 2 v alpha(x)].

    Vectorised over ``v``.  The parabola is concave, so the minimum sits at an
    endpoint; the vertex only counts when it falls inside [0, 1].
    """
    v = np.asarray(v, dtype=float)
    at0 = 0.5 * v * mutation.theta_a
    at1 = -0.5 * v * mutation.theta_A
    lo = np.minimum(at0, at1)
    hi = np.maximum(at0, at1)
    th = mutation.theta
    vertex = (v * v + 2.0 * v * (mutation.theta_a - mutation.theta_A) + th * th) / 8.0
    inside = np.abs(v) >= th
    hi = np.where(inside, np.maximum(hi, vertex), hi)
    return lo, hi


class SelectionModel(ABC):
    """Drift perturbation ``eta`` plus everything derived from it."""

    mutation: MutationRates

    @property
    @abstractmethod
    def n_loci(self) -> int: ...

    @property
    @abstractmethod
    def dim(self) -> int:
        """Length of the parameter vector."""

    @abstractmethod
    def phi_terms(self, states, theta) -> np.ndarray:
        """Per-locus terms of phi; ``states`` has shape (..., n_loci)."""

    @abstractmethod
    def term_bounds(self, theta) -> tuple[np.ndarray, np.ndarray]:
        """Lower/upper bounds of each phi term over the whole state space."""

    @abstractmethod
    def potential_states(self, states, theta) -> np.ndarray:
        """Girsanov potential A at states of shape (..., n_loci)."""

    @abstractmethod
    def A_plus(self, theta) -> float: ...

    @abstractmethod
    def term_rates(self, domain: ParameterDomain) -> np.ndarray:
        """Per-term dominating rates: sup over the domain of (term max - term min)."""

    def phi_states(self, states, theta) -> np.ndarray:
        return self.phi_terms(states, theta).sum(axis=-1)

    def phi_bounds(self, theta) -> tuple[float, float]:
        lo, hi = self.term_bounds(theta)
        return float(np.sum(lo)), float(np.sum(hi))

    def phi_minus(self, theta) -> float:
        return self.phi_bounds(theta)[0]

    def phi_plus(self, theta) -> float:
        return self.phi_bounds(theta)[1]

    def sam_rate(self, domain: ParameterDomain) -> float:
        return float(np.sum(self.term_rates(domain)))

    def check_parameter(self, theta) -> np.ndarray:
        t = np.atleast_1d(np.asarray(theta, dtype=float))
        if t.shape != (self.dim,):
            raise ValueError(f"expected a parameter of length {self.dim}, got shape {t.shape}")
        return t


@dataclass(frozen=True)
class HaploidModel(SelectionModel):
    """Genic (haploid) selection: eta(x; theta) = theta / 2."""

    mutation: MutationRates

    @property
    def n_loci(self) -> int:
        return 1

    @property
    def dim(self) -> int:
        return 1

    @staticmethod
    def _scalar(theta) -> float:
        t = np.asarray(theta, dtype=float)
        if t.size != 1:
            raise ValueError("haploid model takes a scalar parameter")
        return float(t.reshape(()))

    def eta(self, x, theta):
        return np.full_like(np.asarray(x, dtype=float), 0.5 * self._scalar(theta))

    def phi(self, x, theta):
        th = self._scalar(theta)
        x = np.asarray(x, dtype=float)
        return 0.5 * (x * (1.0 - x) * th * th / 4.0 + th * alpha(x, self.mutation))

    def A(self, x, theta):
        return 0.5 * self._scalar(theta) * np.asarray(x, dtype=float)

    def phi_bounds(self, theta) -> tuple[float, float]:
        lo, hi = _constant_eta_bounds(0.5 * self._scalar(theta), self.mutation)
        return float(lo), float(hi)

    def A_plus(self, theta) -> float:
        return max(0.0, 0.5 * self._scalar(theta))

    def phi_terms(self, states, theta):
        return self.phi(states, theta)

    def term_bounds(self, theta):
        lo, hi = self.phi_bounds(theta)
        return np.array([lo]), np.array([hi])

    def potential_states(self, states, theta):
        return self.A(np.asarray(states)[..., 0], theta)

    def term_rates(self, domain: ParameterDomain) -> np.ndarray:
        if domain.dim != 1:
            raise ValueError("haploid model needs a one-dimensional parameter box")
        # hi - lo is convex in theta, so the supremum sits at an endpoint
        ends = np.array([domain.lower[0], domain.upper[0]])
        lo, hi = _constant_eta_bounds(0.5 * ends, self.mutation)
        return np.array([float(np.max(hi - lo))])


@dataclass(frozen=True)
class CoupledModel(SelectionModel):
    """Coupled multilocus selection with pairwise interactions.

    The parameter vector is the identifiable reparameterisation of the raw
    selective advantages ``s`` (L x 2) and interactions ``h`` (L x L x 2 x 2):

    * ``b[k] = s[k,0] - s[k,1] + sum_{l != k} (h[k,l,0,1] - h[k,l,1,1])``
    * ``e[k,l] = h[k,l,0,0] - h[k,l,0,1] - h[k,l,1,0] + h[k,l,1,1]``, k < l

    so that ``V^k(x) = b[k] + sum_{l != k} e[k,l] x^l``.  With
    ``interactions=False`` the parameter is ``b`` alone and ``e`` is zero.
    """

    loci: int
    mutation: MutationRates
    interactions: bool = True
    _pairs: tuple = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.loci < 1:
            raise ValueError("need at least one locus")
        object.__setattr__(self, "_pairs", tuple(itertools.combinations(range(self.loci), 2)))

    @property
    def n_loci(self) -> int:
        return self.loci

    @property
    def dim(self) -> int:
        return self.loci + (len(self._pairs) if self.interactions else 0)

    def parameter_names(self) -> list[str]:
        names = [f"b{k + 1}" for k in range(self.loci)]
        if self.interactions:
            names += [f"e{k + 1}{l + 1}" for k, l in self._pairs]
        return names

    def parameters_from(self, s, h=None) -> np.ndarray:
        """Map raw ``s`` (L x 2) and ``h`` (L x L x 2 x 2) to the parameter vector.

        Raises ``ValueError`` if ``h`` is not symmetric under
        ``h[k,l,j,r] == h[l,k,r,j]``; without it the drift has no potential.
        """
        L = self.loci
        s = np.asarray(s, dtype=float)
        if s.shape != (L, 2):
            raise ValueError(f"s must have shape ({L}, 2), got {s.shape}")
        if h is None:
            h = np.zeros((L, L, 2, 2))
        h = np.asarray(h, dtype=float)
        if h.shape != (L, L, 2, 2):
            raise ValueError(f"h must have shape ({L}, {L}, 2, 2), got {h.shape}")
        off = ~np.eye(L, dtype=bool)
        if not np.allclose(h[off], np.transpose(h, (1, 0, 3, 2))[off], rtol=0, atol=1e-12):
            raise ValueError("interaction tensor must satisfy h[k,l,j,r] == h[l,k,r,j]; "
                             "the selection drift is not a gradient field otherwise")
        b = s[:, 0] - s[:, 1]
        E = h[:, :, 0, 0] - h[:, :, 0, 1] - h[:, :, 1, 0] + h[:, :, 1, 1]
        for k in range(L):
            for l in range(L):
                if l != k:
                    b[k] += h[k, l, 0, 1] - h[k, l, 1, 1]
        theta = list(b)
        if self.interactions:
            theta += [E[k, l] for k, l in self._pairs]
        elif np.any(np.abs(E[off]) > 0):
            raise ValueError("model was built without interactions but h has nonzero interaction terms")
        return np.array(theta)

    def split(self, theta) -> tuple[np.ndarray, np.ndarray]:
        t = self.check_parameter(theta)
        b = t[: self.loci].copy()
        E = np.zeros((self.loci, self.loci))
        if self.interactions:
            for v, (k, l) in zip(t[self.loci:], self._pairs):
                E[k, l] = E[l, k] = v
        return b, E

    def eta_states(self, states, theta) -> np.ndarray:
        b, E = self.split(theta)
        X = np.asarray(states, dtype=float)
        return b + X @ E

    def phi_terms(self, states, theta) -> np.ndarray:
        X = np.asarray(states, dtype=float)
        V = self.eta_states(X, theta)
        return 0.5 * (X * (1.0 - X) * V * V + 2.0 * V * alpha(X, self.mutation))

    def phi(self, states, theta) -> np.ndarray:
        return self.phi_states(states, theta)

    def potential_states(self, states, theta) -> np.ndarray:
        b, E = self.split(theta)
        X = np.asarray(states, dtype=float)
        return X @ b + 0.5 * np.einsum("...k,kl,...l->...", X, E, X)

    def A(self, states, theta) -> np.ndarray:
        return self.potential_states(states, theta)

    def _eta_range(self, b, E):
        return b + np.minimum(E, 0.0).sum(axis=1), b + np.maximum(E, 0.0).sum(axis=1)

    def term_bounds(self, theta):
        # each term depends on x^k and on V^k, which only involves the other
        # coordinates, so its range is that of a function on a rectangle
        b, E = self.split(theta)
        vlo, vhi = self._eta_range(b, E)
        lo1, hi1 = _constant_eta_bounds(vlo, self.mutation)
        lo2, hi2 = _constant_eta_bounds(vhi, self.mutation)
        return np.minimum(lo1, lo2), np.maximum(hi1, hi2)

    def A_plus(self, theta) -> float:
        b, E = self.split(theta)
        L = self.loci
        if L <= 12:
            # multilinear in x, so the maximum over the cube is at a vertex
            verts = np.array(list(itertools.product((0.0, 1.0), repeat=L)))
            return float(max(0.0, np.max(self.potential_states(verts, theta))))
        upper = np.maximum(b, 0.0).sum() + 0.5 * np.maximum(E, 0.0).sum()
        return float(upper)

    def term_rates(self, domain: ParameterDomain) -> np.ndarray:
        if domain.dim != self.dim:
            raise ValueError(f"parameter box has dim {domain.dim}, model needs {self.dim}")
        lo = np.array(domain.lower)
        hi = np.array(domain.upper)
        L = self.loci
        rates = np.zeros(L)
        for k in range(L):
            # term k is convex in b[k] and piecewise convex (kink at 0) in each
            # e[k,l]; the supremum is on the grid of those candidate values
            idx = [k]
            cands = [sorted({lo[k], hi[k]})]
            if self.interactions:
                for p, (a, c) in enumerate(self._pairs):
                    if k in (a, c):
                        j = L + p
                        vals = {lo[j], hi[j]}
                        if lo[j] < 0.0 < hi[j]:
                            vals.add(0.0)
                        idx.append(j)
                        cands.append(sorted(vals))
            best = 0.0
            base = domain.center
            for combo in itertools.product(*cands):
                t = base.copy()
                t[idx] = combo
                tlo, thi = self.term_bounds(t)
                best = max(best, float(thi[k] - tlo[k]))
            rates[k] = best
        return rates


def _states(x, model: SelectionModel) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if isinstance(model, HaploidModel):
        return x[..., None]
    return x


def phi(x, theta, model: SelectionModel):
    """phi at state(s) x; for the coupled model the last axis of x indexes loci."""
    return model.phi_states(_states(x, model), theta)


def girsanov_A(x, theta, model: SelectionModel):
    return model.potential_states(_states(x, model), theta)


def phi_bounds(theta, model: SelectionModel) -> tuple[float, float]:
    return model.phi_bounds(theta)


def sam_rate(domain: ParameterDomain, model: SelectionModel) -> float:
    """Dominating thinning rate valid for every parameter in the box."""
    return model.sam_rate(domain)
