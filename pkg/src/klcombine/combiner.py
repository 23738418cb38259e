"""Game-optimal combination of conflicting distributions.

The combination of a set of candidate ("combining") distributions, given a
set of plausible truths, is the centroid of the candidates that are
themselves plausible. Only the extreme candidates can carry weight, so the
pipeline is: filter by the plausible box, keep the extreme subset, solve for
the induced weighting, mix.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

from .centroid import DEFAULT_MAX_ITER, DEFAULT_TOL, CentroidResult, induced_weighting
from .distributions import (
    BernoulliProduct,
    DimensionError,
    Distribution,
    FiniteDistribution,
    bernoulli,
    divergence,
    information_gain,
)
from .extreme import binary_extremes, extreme_subset

# Slack allowed when testing a probability against a closed bound.
BOX_TOL = 1e-12


class NoPlausibleDistributionError(ValueError):
    """No combining distribution satisfies the plausibility constraints.

    ``violations`` maps each combining index to a list of
    ``(coordinate, value, lower, upper)`` tuples for the bounds it breaks.
    """

    def __init__(self, violations: dict):
        self.violations = violations
        lines = []
        for i, bad in violations.items():
            shown = ", ".join(f"[{j}] {v:.6g} not in [{lo:.6g}, {hi:.6g}]" for j, v, lo, hi in bad[:5])
            more = f" (+{len(bad) - 5} more)" if len(bad) > 5 else ""
            lines.append(f"  distribution {i}: {shown}{more}")
        super().__init__("no plausible combining distribution:\n" + "\n".join(lines))


@dataclass(frozen=True)
class PlausibleBox:
    """Closed per-coordinate bounds on ``P(xi_j = 0)``."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lower, dtype=float))
        hi = np.atleast_1d(np.asarray(self.upper, dtype=float))
        lo, hi = np.broadcast_arrays(lo, hi)
        if lo.ndim != 1:
            raise ValueError("bounds must be vectors")
        if np.any(lo < 0) or np.any(hi > 1) or np.any(lo > hi):
            raise ValueError("bounds must satisfy 0 <= lower <= upper <= 1")
        object.__setattr__(self, "lower", lo.copy())
        object.__setattr__(self, "upper", hi.copy())

    @classmethod
    def unconstrained(cls, n: int = 1) -> "PlausibleBox":
        return cls(np.zeros(n), np.ones(n))

    @classmethod
    def interval(cls, lower: float = 0.0, upper: float = 1.0) -> "PlausibleBox":
        return cls([lower], [upper])

    def __len__(self):
        return self.lower.size

    def violations(self, coords: np.ndarray) -> list:
        coords = np.asarray(coords, dtype=float)
        lo, hi = np.broadcast_arrays(self.lower, self.upper)
        if lo.size == 1 and coords.size > 1:
            lo, hi = np.full(coords.size, lo[0]), np.full(coords.size, hi[0])
        if lo.size != coords.size:
            raise DimensionError(f"box has {lo.size} bounds, distribution has {coords.size} coordinates")
        bad = np.flatnonzero((coords < lo - BOX_TOL) | (coords > hi + BOX_TOL))
        return [(int(j), float(coords[j]), float(lo[j]), float(hi[j])) for j in bad]

    def contains(self, coords) -> bool:
        return not self.violations(coords)


def _constrained_coords(d: Distribution, box: PlausibleBox) -> np.ndarray:
    if isinstance(d, BernoulliProduct):
        return d.null_probs
    # finite distribution: one bound constrains the event {0}, otherwise one per outcome
    if len(box) == 1:
        return d.probs[:1]
    return d.probs


@dataclass(frozen=True)
class CombinationResult:
    """Outcome of :func:`combine`.

    Index fields refer to positions in the original combining list;
    ``weights`` is aligned with ``extreme``.
    """

    surviving: tuple
    extreme: tuple
    weights: np.ndarray
    combined: Distribution
    value: float
    centroid: CentroidResult
    n_combining: int

    @property
    def excluded(self) -> tuple:
        return tuple(i for i in range(self.n_combining) if i not in self.surviving)

    def weight_of(self, index: int) -> float:
        """Weight of combining distribution ``index`` (0 when it is not extreme)."""
        if index in self.extreme:
            return float(self.weights[self.extreme.index(index)])
        return 0.0


def filter_plausible(combining: Sequence[Distribution], box: PlausibleBox):
    """Split ``combining`` into surviving indices and a violation report for the rest."""
    surviving, report = [], {}
    for i, d in enumerate(combining):
        bad = box.violations(_constrained_coords(d, box))
        if bad:
            report[i] = bad
        else:
            surviving.append(i)
    return surviving, report


def combine(
    combining: Sequence[Distribution],
    box: PlausibleBox | None = None,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
) -> CombinationResult:
    """Combine distributions under plausibility constraints.

    Parameters
    ----------
    combining : sequence of FiniteDistribution or BernoulliProduct
        The candidate distributions.
    box : PlausibleBox, optional
        Bounds on ``P(xi_j = 0)`` for products; for finite distributions a
        single bound applies to the event ``{0}`` and a full-length box to
        each outcome. Defaults to no constraint.

    Raises
    ------
    NoPlausibleDistributionError
        If every candidate violates the box.
    """
    if len(combining) == 0:
        raise ValueError("nothing to combine")
    if box is None:
        first = combining[0]
        box = PlausibleBox.unconstrained(first.size if isinstance(first, BernoulliProduct) else 1)
    surviving, report = filter_plausible(combining, box)
    if not surviving:
        raise NoPlausibleDistributionError(report)

    members = [combining[i] for i in surviving]
    local_extreme = extreme_subset([m.tuple_repr() for m in members])
    extreme = [surviving[k] for k in local_extreme]
    solved = induced_weighting([combining[i] for i in extreme], tol=tol, max_iter=max_iter)
    return CombinationResult(
        surviving=tuple(surviving),
        extreme=tuple(extreme),
        weights=solved.weights,
        combined=solved.centroid,
        value=solved.value,
        centroid=solved,
        n_combining=len(combining),
    )


def combine_independent(
    combining: Sequence[BernoulliProduct],
    box: PlausibleBox | None = None,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
) -> CombinationResult:
    """Combine independent-hypothesis distributions given as null-probability vectors.

    The weights maximize ``sum_i w_i sum_j D(P_i(xi_j) || P^w(xi_j))``; the
    combined null probabilities are ``sum_i w_i P_i(xi_j = 0)``.
    """
    if not all(isinstance(d, BernoulliProduct) for d in combining):
        raise TypeError("combine_independent expects BernoulliProduct members")
    sizes = {d.size for d in combining}
    if len(sizes) > 1:
        raise DimensionError(f"members have different numbers of hypotheses: {sorted(sizes)}")
    return combine(combining, box, tol=tol, max_iter=max_iter)


@dataclass(frozen=True)
class BinaryCombination:
    p_plus: float
    w_plus: float
    lo: float
    hi: float
    value: float


def combine_binary(
    probs: Sequence[float],
    lower: float = 0.0,
    upper: float = 1.0,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
) -> BinaryCombination:
    """Combine probabilities of one event.

    The result mixes the lowest (``lo``) and highest (``hi``) plausible
    probabilities, ``p_plus = w_plus * lo + (1 - w_plus) * hi``.
    """
    p = np.asarray(probs, dtype=float)
    box = PlausibleBox.interval(lower, upper)
    plausible = p[(p >= box.lower[0] - BOX_TOL) & (p <= box.upper[0] + BOX_TOL)]
    if plausible.size == 0:
        raise NoPlausibleDistributionError(
            {i: [(0, float(v), float(lower), float(upper))] for i, v in enumerate(p)}
        )
    i_lo, i_hi = binary_extremes(plausible)
    lo, hi = float(plausible[i_lo]), float(plausible[i_hi])
    if hi - lo <= 1e-12:
        return BinaryCombination(lo, 1.0, lo, hi, 0.0)
    solved = induced_weighting([bernoulli(lo), bernoulli(hi)], tol=tol, max_iter=max_iter)
    w = float(solved.weights[0])
    return BinaryCombination(w * lo + (1.0 - w) * hi, w, lo, hi, solved.value)


def game_utility(truth: Distribution, other: Distribution, own: Distribution, expected_loss=None):
    """Utility paid to the statistician choosing ``own`` against ``other``.

    ``(-D(truth || own), gain of own over other)``, extended by ``-expected_loss``
    when given.
    """
    u = (-divergence(truth, own), information_gain(truth, other, own))
    if expected_loss is not None:
        u = u + (-float(expected_loss),)
    return u


def lex_compare(u: Sequence[float], v: Sequence[float]) -> int:
    """Lexicographic comparison: -1 if ``u`` precedes ``v``, 0 if equal, 1 otherwise."""
    if len(u) != len(v):
        raise ValueError(f"cannot compare utilities of arity {len(u)} and {len(v)}")
    for a, b in zip(u, v):
        if a < b:
            return -1
        if a > b:
            return 1
    return 0


Combined = Union[CombinationResult, FiniteDistribution, BernoulliProduct, float]


def _outcome_probs(combined: Combined) -> np.ndarray:
    if isinstance(combined, CombinationResult):
        combined = combined.combined
    if isinstance(combined, FiniteDistribution):
        return combined.probs
    if isinstance(combined, BernoulliProduct):
        return combined.to_joint().probs
    return bernoulli(float(combined)).probs


def optimal_action(combined: Combined, loss) -> int:
    """Action minimizing expected loss under the combined distribution.

    ``loss[x, a]`` is the loss of action ``a`` when outcome ``x`` occurs. Ties
    go to the lowest action index.
    """
    probs = _outcome_probs(combined)
    loss = np.asarray(loss, dtype=float)
    if loss.ndim != 2 or loss.shape[1] == 0:
        raise ValueError("loss must be a (outcomes, actions) matrix with at least one action")
    if loss.shape[0] != probs.size:
        raise DimensionError(f"loss has {loss.shape[0]} rows for {probs.size} outcomes")
    if not np.all(np.isfinite(loss)):
        raise ValueError("loss must be finite")
    return int(np.argmin(probs @ loss))
