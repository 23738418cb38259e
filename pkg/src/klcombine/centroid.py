"""Induced weighting distributions and centroids of finite families.

The centroid of a family ``{P_1, ..., P_nu}`` is the distribution ``Q``
minimizing ``max_i D(P_i || Q)``. It is the mixture ``sum_i w_i P_i`` whose
weights maximize ``sum_i w_i D(P_i || sum_k w_k P_k)``, i.e. the
capacity-achieving input distribution of the channel ``i -> P_i``.

:func:`induced_weighting` runs the alternating (Blahut-Arimoto) capacity
iteration and finishes with a Newton solve of the equal-divergence
conditions on the detected support. :func:`grid_oracle_weighting` is a slow
brute-force maximizer kept for verification.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import logsumexp

from .distributions import Distribution, divergence_terms, mixture, stack_family

log = logging.getLogger(__name__)

DEFAULT_TOL = 1e-10
DEFAULT_MAX_ITER = 100_000
# Members closer than this (max abs coordinate difference) are merged.
DUPLICATE_TOL = 1e-12
SHULMAN_BOUND = 1.0 - np.exp(-1.0)


class ConvergenceError(RuntimeError):
    """The capacity iteration did not reach the requested gap."""

    def __init__(self, message: str, gap: float, iterations: int):
        super().__init__(message)
        self.gap = gap
        self.iterations = iterations


@dataclass(frozen=True)
class CentroidResult:
    """Solution of the induced-weighting problem.

    ``weights`` is aligned with the input family. ``value`` is the worst-case
    divergence ``max_i D(P_i || centroid)`` and ``gap`` bounds how far it can
    be from the optimum.
    """

    centroid: Distribution
    weights: np.ndarray
    value: float
    iterations: int
    gap: float
    divergences: np.ndarray
    trace: tuple = field(default=(), repr=False)


def merge_duplicates(factors: np.ndarray, tol: float = DUPLICATE_TOL):
    """Return ``(representatives, owner)``; ``owner[i]`` is the representative of member ``i``."""
    flat = factors.reshape(len(factors), -1)
    reps: list[int] = []
    owner = np.empty(len(flat), dtype=int)
    for i, row in enumerate(flat):
        for r in reps:
            if np.max(np.abs(flat[r] - row)) <= tol:
                owner[i] = r
                break
        else:
            reps.append(i)
            owner[i] = i
    return reps, owner


def _divergences(factors: np.ndarray, mix: np.ndarray) -> np.ndarray:
    return divergence_terms(factors, mix[None]).sum(axis=(1, 2))


def _newton_equalize(factors: np.ndarray, support: list[int], w0: np.ndarray):
    """Solve ``D_i(w) = D_k(w)`` for ``i, k`` in ``support``, ``sum w = 1``.

    Returns the full weight vector, or ``None`` when the solve fails or leaves
    the simplex.
    """
    nu = len(factors)
    m = len(support)
    w = np.zeros(nu)
    w[support] = w0[support] / w0[support].sum()
    if m == 1:
        return w
    sub = factors[support]
    last = m - 1

    def residual(ws):
        mix = np.tensordot(ws, sub, axes=1)
        d = _divergences(sub, mix)
        return d[:last] - d[last], mix

    ws = w[support].copy()
    r, mix = residual(ws)
    # divergences are sums of many terms; rounding limits the attainable residual
    floor = 1e-14 * max(1.0, float(np.max(_divergences(sub, mix))))
    for _ in range(60):
        norm = np.max(np.abs(r))
        if norm <= floor:
            break
        safe = np.where(mix > 0, mix, 1.0)
        # gram[a, b] = sum P_a P_b / M = -dD_a/dw_b
        scaled = sub / safe[None]
        gram = np.einsum("ajk,bjk->ab", scaled, sub)
        grad = -gram[:, :last] + gram[:, [last]]
        jac = grad[:last] - grad[last]
        try:
            step = np.linalg.solve(jac, -r)
        except np.linalg.LinAlgError:
            return None
        t = 1.0
        while t > 1e-6:
            u = ws[:last] + t * step
            trial = np.append(u, 1.0 - u.sum())
            if np.all(trial > 0):
                r_new, mix_new = residual(trial)
                if np.max(np.abs(r_new)) < norm:
                    ws, r, mix = trial, r_new, mix_new
                    break
            t *= 0.5
        else:
            break  # no further progress; the caller judges the certified gap
    if np.any(ws <= 0):
        return None
    w[:] = 0.0
    w[support] = ws
    return w


class _CapacitySolver:
    def __init__(self, factors: np.ndarray, tol: float, max_iter: int):
        self.factors = factors
        self.tol = tol
        self.max_iter = max_iter
        # Exponent scale for the alternating maximization of a sum of
        # per-factor capacities; N = 1 gives the classical update.
        self.scale = factors.shape[1]

    def evaluate(self, w):
        mix = np.tensordot(w, self.factors, axes=1)
        d = _divergences(self.factors, mix)
        lower = float(np.dot(w[w > 0], d[w > 0]))
        return d, lower

    def polish(self, w, d):
        """Try to jump to the exact optimum from a BA iterate."""
        support = [i for i in np.argsort(-w) if w[i] > 1e-6]
        while support:
            cand = _newton_equalize(self.factors, sorted(support), w)
            if cand is not None:
                d_new, lower = self.evaluate(cand)
                if np.max(d_new) - lower <= self.tol:
                    return cand, d_new, lower
            support.pop()  # drop the smallest remaining weight
        return None

    def run(self):
        nu = len(self.factors)
        w = np.full(nu, 1.0 / nu)
        d, lower = self.evaluate(w)
        best_upper = float(np.max(d))
        trace = [max(best_upper - lower, 0.0)]
        it = 0
        while trace[-1] > self.tol and it < self.max_iter:
            it += 1
            logw = np.log(np.where(w > 0, w, 1.0)) + d / self.scale
            logw[w <= 0] = -np.inf
            w = np.exp(logw - logsumexp(logw))
            d, lower = self.evaluate(w)
            best_upper = min(best_upper, float(np.max(d)))
            gap = max(best_upper - lower, 0.0)
            if gap > self.tol and nu > 1 and (gap < 1e-3 or it % 50 == 0) and it % 5 == 0:
                polished = self.polish(w, d)
                if polished is not None and polished[2] >= lower - 1e-14:
                    w, d, lower = polished
                    best_upper = min(best_upper, float(np.max(d)))
                    gap = max(best_upper - lower, 0.0)
            trace.append(gap)
        if nu > 1 and trace[-1] <= self.tol and np.any((w > 0) & (w < 1e-6)):
            # BA only drives inactive weights to zero asymptotically
            polished = self.polish(w, d)
            if polished is not None and polished[2] >= lower - 1e-14:
                w, d, lower = polished
                trace.append(max(min(best_upper, float(np.max(d))) - lower, 0.0))
        return w, d, it, trace


def induced_weighting(
    family: Sequence[Distribution],
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
) -> CentroidResult:
    """Weights maximizing ``sum_i w_i D(P_i || sum_k w_k P_k)`` and the resulting centroid.

    Parameters
    ----------
    family : sequence of FiniteDistribution or BernoulliProduct
        Homogeneous, non-empty family. Duplicate members are merged; the
        merged weight is reported on the first occurrence.
    tol : float
        Stop once ``max_i D(P_i||M) - sum_i w_i D(P_i||M)`` (an upper bound
        on the suboptimality, in nats) is at most ``tol``.
    max_iter : int
        Iteration budget.

    Raises
    ------
    ValueError
        If the family is empty.
    ConvergenceError
        If the gap is still above ``tol`` after ``max_iter`` iterations.
    """
    if len(family) == 0:
        raise ValueError("cannot compute the centroid of an empty family")
    if tol <= 0:
        raise ValueError("tol must be positive")
    factors = stack_family(family)
    reps, owner = merge_duplicates(factors)

    solver = _CapacitySolver(factors[reps], tol, max_iter)
    w_rep, _, iterations, trace = solver.run()
    gap = trace[-1]
    if gap > tol:
        raise ConvergenceError(
            f"capacity iteration stopped after {iterations} iterations with gap {gap:.3e}",
            gap=gap,
            iterations=iterations,
        )

    weights = np.zeros(len(family))
    weights[reps] = w_rep
    centroid = mixture(family, weights)
    divs = _divergences(factors, np.tensordot(weights, factors, axes=1))
    log.debug("centroid solved: nu=%d iterations=%d gap=%.3e", len(reps), iterations, gap)
    return CentroidResult(
        centroid=centroid,
        weights=weights,
        value=float(np.max(divs)),
        iterations=iterations,
        gap=gap,
        divergences=divs,
        trace=tuple(trace),
    )


def objective(family: Sequence[Distribution], weights) -> float:
    """``sum_i w_i D(P_i || P^w)`` for a single weight vector."""
    factors = stack_family(family)
    w = np.asarray(weights, dtype=float)
    d = _divergences(factors, np.tensordot(w, factors, axes=1))
    return float(np.dot(w[w > 0], d[w > 0]))


def _simplex_grid(lo: np.ndarray, hi: np.ndarray, step: float) -> np.ndarray:
    """Points of a regular grid in the box ``[lo, hi]`` (first nu-1 coordinates) on the simplex."""
    axes = [np.arange(a, b + step / 2, step) for a, b in zip(lo, hi)]
    mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, len(axes))
    mesh = mesh[np.all(mesh >= -1e-12, axis=1)]
    last = 1.0 - mesh.sum(axis=1)
    keep = last >= -1e-12
    mesh = np.clip(mesh[keep], 0.0, 1.0)
    return np.column_stack([mesh, np.clip(last[keep], 0.0, 1.0)])


def _grid_objective(factors: np.ndarray, grid: np.ndarray, chunk: int = 4096) -> np.ndarray:
    flat = factors.reshape(len(factors), -1)
    out = np.empty(len(grid))
    for s in range(0, len(grid), chunk):
        w = grid[s : s + chunk]
        mix = w @ flat
        terms = divergence_terms(flat[None, :, :], mix[:, None, :]).sum(axis=2)
        terms = np.where(w > 0, terms, 0.0)
        out[s : s + chunk] = np.sum(w * terms, axis=1)
    return out


def grid_oracle_weighting(
    family: Sequence[Distribution],
    step: float,
    max_points: int = 200_000,
) -> CentroidResult:
    """Brute-force maximization of the weighting objective on a simplex grid.

    Starts from an exhaustive grid no finer than ``max_points`` allows and
    zooms in by factors of ten around the best point until the grid spacing
    reaches ``step``. Only meant for families of at most four members.
    """
    nu = len(family)
    if nu == 0:
        raise ValueError("empty family")
    if nu > 4:
        raise ValueError(f"grid oracle supports at most 4 members, got {nu}")
    factors = stack_family(family)
    if nu == 1:
        w = np.ones(1)
        return CentroidResult(family[0], w, 0.0, 1, 0.0, np.zeros(1))

    dim = nu - 1
    coarse = max(step, max_points ** (-1.0 / dim))
    coarse = 10.0 ** np.ceil(np.log10(coarse))  # keep zoom levels aligned to decades
    coarse = min(max(coarse, step), 0.5)
    grid = _simplex_grid(np.zeros(dim), np.ones(dim), coarse)
    values = _grid_objective(factors, grid)
    evaluated = len(grid)
    best = grid[np.argmax(values)]
    s = coarse
    while s > step * (1 + 1e-9):
        s_new = max(s / 10.0, step)
        lo = np.maximum(best[:dim] - 2 * s, 0.0)
        hi = np.minimum(best[:dim] + 2 * s, 1.0)
        lo = np.round(lo / s_new) * s_new
        grid = _simplex_grid(lo, hi, s_new)
        vals = _grid_objective(factors, grid)
        evaluated += len(grid)
        if vals.max() >= values.max():
            best = grid[np.argmax(vals)]
            values = vals
        s = s_new

    divs = _divergences(factors, np.tensordot(best, factors, axes=1))
    value = float(np.dot(best[best > 0], divs[best > 0]))
    return CentroidResult(
        centroid=mixture(family, best),
        weights=best,
        value=value,
        iterations=evaluated,
        gap=float(np.max(divs) - value),
        divergences=divs,
    )


@dataclass
class EquidistanceReport:
    ok: bool
    common_value: float
    divergences: np.ndarray
    violations: list


def equidistance_check(
    result: CentroidResult, family: Sequence[Distribution], tol: float = 1e-8
) -> EquidistanceReport:
    """Check the capacity KKT conditions at a computed centroid.

    Members with weight above ``tol`` must sit at a common divergence from the
    centroid; the others may not be farther than that common value.
    """
    factors = stack_family(family)
    w = np.asarray(result.weights, dtype=float)
    divs = _divergences(factors, np.tensordot(w, factors, axes=1))
    active = w > tol
    common = float(np.max(divs[active])) if active.any() else 0.0
    violations = []
    for i, (wi, di) in enumerate(zip(w, divs)):
        if wi > tol and abs(di - common) > tol:
            violations.append(f"member {i} (weight {wi:.3g}) at divergence {di:.12g}, expected {common:.12g}")
        elif wi <= tol and di > common + tol:
            violations.append(f"zero-weight member {i} at divergence {di:.12g} exceeds {common:.12g}")
    return EquidistanceReport(not violations, common, divs, violations)
