"""Finite probability distributions and information divergence.

Everything is in nats. Two kinds of distribution are supported:

* :class:`FiniteDistribution` -- a probability vector over ``{0, ..., K-1}``.
* :class:`BernoulliProduct` -- ``N`` independent binary variables, stored as
  the vector of probabilities ``P(xi_j = 0)``.

Both can be viewed as a stack of ``N`` categorical factors (``N = 1`` for a
finite distribution); :func:`factor_matrix` exposes that view and is what the
numerical solvers work on.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

# Inputs within this distance of summing to one are renormalized.
NORMALIZATION_TOL = 1e-9
# Largest product expanded to its joint distribution.
MAX_JOINT_FACTORS = 20


class DimensionError(ValueError):
    """Distributions live on sample spaces of different sizes."""


class UndefinedGainError(ValueError):
    """An information gain was requested with an infinite divergence."""


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class FiniteDistribution:
    """Probability vector over a finite sample space of size >= 2."""

    probs: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=float)
        if p.ndim != 1 or p.size < 2:
            raise ValueError("a finite distribution needs at least two outcomes")
        if not np.all(np.isfinite(p)) or np.any(p < 0) or np.any(p > 1):
            raise ValueError(f"probabilities must lie in [0, 1], got {p}")
        total = p.sum()
        if abs(total - 1.0) > NORMALIZATION_TOL:
            raise ValueError(f"probabilities sum to {total!r}, not 1")
        object.__setattr__(self, "probs", _frozen(p / total))

    @property
    def size(self) -> int:
        return self.probs.size

    def tuple_repr(self) -> np.ndarray:
        """Coordinates used for convex-hull computations."""
        return self.probs

    def __eq__(self, other):
        if not isinstance(other, FiniteDistribution):
            return NotImplemented
        return self.size == other.size and bool(np.array_equal(self.probs, other.probs))

    def __hash__(self):
        return hash(self.probs.tobytes())

    def __repr__(self):
        return f"FiniteDistribution({self.probs.tolist()})"


@dataclass(frozen=True, eq=False)
class BernoulliProduct:
    """Independent Bernoulli variables; ``null_probs[j] = P(xi_j = 0)``."""

    null_probs: np.ndarray

    def __post_init__(self):
        p = np.atleast_1d(np.asarray(self.null_probs, dtype=float))
        if p.ndim != 1 or p.size < 1:
            raise ValueError("a Bernoulli product needs at least one variable")
        if not np.all(np.isfinite(p)) or np.any(p < 0) or np.any(p > 1):
            raise ValueError("null probabilities must lie in [0, 1]")
        object.__setattr__(self, "null_probs", _frozen(p))

    @property
    def size(self) -> int:
        return self.null_probs.size

    def tuple_repr(self) -> np.ndarray:
        return self.null_probs

    def to_joint(self) -> FiniteDistribution:
        """Expand to the joint distribution on ``{0,1}^N``.

        Outcome index bits are read with ``xi_1`` as the most significant bit.
        """
        n = self.size
        if n > MAX_JOINT_FACTORS:
            raise ValueError(f"refusing to expand {n} factors (limit {MAX_JOINT_FACTORS})")
        q = self.null_probs
        joint = np.ones(1)
        for j in range(n):
            joint = np.outer(joint, [q[j], 1.0 - q[j]]).ravel()
        return FiniteDistribution(joint)

    def __eq__(self, other):
        if not isinstance(other, BernoulliProduct):
            return NotImplemented
        return self.size == other.size and bool(np.array_equal(self.null_probs, other.null_probs))

    def __hash__(self):
        return hash(self.null_probs.tobytes())

    def __repr__(self):
        return f"BernoulliProduct({self.null_probs.tolist()})"


Distribution = Union[FiniteDistribution, BernoulliProduct]


def bernoulli(p0: float) -> FiniteDistribution:
    """Two-point distribution with ``P({0}) = p0``."""
    return FiniteDistribution([p0, 1.0 - p0])


def factor_matrix(d: Distribution) -> np.ndarray:
    """Return the ``(N, K)`` array of factor probabilities of ``d``."""
    if isinstance(d, FiniteDistribution):
        return d.probs[None, :]
    if isinstance(d, BernoulliProduct):
        q = d.null_probs
        return np.stack([q, 1.0 - q], axis=1)
    raise TypeError(f"not a distribution: {type(d).__name__}")


def stack_family(family: Sequence[Distribution]) -> np.ndarray:
    """Stack a homogeneous family into a ``(nu, N, K)`` array."""
    if len(family) == 0:
        raise ValueError("empty family")
    kind = type(family[0])
    if any(type(d) is not kind for d in family):
        raise TypeError("family mixes distribution types")
    size = family[0].size
    if any(d.size != size for d in family):
        raise DimensionError("family members have different sizes")
    return np.stack([factor_matrix(d) for d in family])


def _from_factors(kind: type, factors: np.ndarray) -> Distribution:
    if kind is FiniteDistribution:
        return FiniteDistribution(factors[0])
    return BernoulliProduct(factors[:, 0])


def divergence_terms(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Elementwise ``p log(p/q)`` with ``0 log 0 = 0`` and ``+inf`` where ``q = 0 < p``."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    out = np.zeros(np.broadcast(p, q).shape)
    p, q = np.broadcast_arrays(p, q)
    pos = p > 0
    bad = pos & (q <= 0)
    ok = pos & ~bad
    out[ok] = p[ok] * np.log(p[ok] / q[ok])
    out[bad] = np.inf
    return out


def kl_divergence(p: FiniteDistribution, q: FiniteDistribution) -> float:
    """Information divergence ``D(p || q)`` in nats.

    Returns ``inf`` when ``q`` puts zero mass on an outcome that ``p`` does not.
    """
    if p.size != q.size:
        raise DimensionError(f"sample spaces differ: {p.size} vs {q.size}")
    return max(float(divergence_terms(p.probs, q.probs).sum()), 0.0)


def kl_divergence_product(p: BernoulliProduct, q: BernoulliProduct) -> float:
    """Sum of per-variable Bernoulli divergences (chain rule under independence)."""
    if p.size != q.size:
        raise DimensionError(f"products have different lengths: {p.size} vs {q.size}")
    return max(float(divergence_terms(factor_matrix(p), factor_matrix(q)).sum()), 0.0)


def divergence(p: Distribution, q: Distribution) -> float:
    """Dispatch to :func:`kl_divergence` or :func:`kl_divergence_product`."""
    if isinstance(p, BernoulliProduct) and isinstance(q, BernoulliProduct):
        return kl_divergence_product(p, q)
    if isinstance(p, FiniteDistribution) and isinstance(q, FiniteDistribution):
        return kl_divergence(p, q)
    raise TypeError("cannot compare a finite distribution with a Bernoulli product")


def information_gain(p_true: Distribution, p_ref: Distribution, q: Distribution) -> float:
    """Information gained by using ``q`` instead of ``p_ref`` when ``p_true`` holds."""
    d_ref = divergence(p_true, p_ref)
    d_q = divergence(p_true, q)
    if not (np.isfinite(d_ref) and np.isfinite(d_q)):
        raise UndefinedGainError("information gain is undefined for infinite divergences")
    return d_ref - d_q


def mixture(family: Sequence[Distribution], weights: Sequence[float]) -> Distribution:
    """Convex combination of ``family``; product marginals mix linearly."""
    w = np.asarray(weights, dtype=float)
    if w.ndim != 1 or w.size != len(family):
        raise ValueError(f"{len(family)} distributions but {w.size} weights")
    if np.any(w < 0) or abs(w.sum() - 1.0) > NORMALIZATION_TOL:
        raise ValueError("weights must be nonnegative and sum to 1")
    factors = np.tensordot(w / w.sum(), stack_family(family), axes=1)
    return _from_factors(type(family[0]), np.clip(factors, 0.0, 1.0))

