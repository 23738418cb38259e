"""Extreme points of small point sets in high dimension.

A point is non-extreme when it is a convex combination of the other points.
That is decided per point with a linear program minimizing the sup-norm
residual of the combination, which stays cheap when there are few points in
many dimensions (a handful of estimators over thousands of genes).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.optimize import linprog

# Residual at or below which a point counts as inside the hull of the others.
HULL_TOL = 1e-9
MERGE_TOL = 1e-12


@dataclass(frozen=True)
class HullCertificate:
    """``point ~= sum_k lambdas[k] * points[others[k]]`` with sup-norm ``residual``."""

    others: tuple
    lambdas: np.ndarray
    residual: float


def as_points(points) -> np.ndarray:
    """Coerce to a ``(nu, d)`` float array, accepting distributions too."""
    if len(points) and hasattr(points[0], "tuple_repr"):
        points = [p.tuple_repr() for p in points]
    arr = np.asarray(points, dtype=float)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2 or len(arr) == 0:
        raise ValueError("expected a non-empty (nu, d) array of points")
    return arr


def hull_residual(points, index: int, others: Sequence[int]) -> HullCertificate:
    """Best convex combination of ``points[others]`` approximating ``points[index]``."""
    x = as_points(points)
    others = tuple(others)
    target = x[index]
    if not others:
        return HullCertificate((), np.zeros(0), float("inf"))
    basis = x[list(others)].T  # (d, m)
    d, m = basis.shape
    # variables: lambda_1..lambda_m, t ; minimize t
    c = np.zeros(m + 1)
    c[-1] = 1.0
    ones = np.ones((d, 1))
    a_ub = np.vstack([np.hstack([basis, -ones]), np.hstack([-basis, -ones])])
    b_ub = np.concatenate([target, -target])
    a_eq = np.zeros((1, m + 1))
    a_eq[0, :m] = 1.0
    res = linprog(
        c, A_ub=a_ub, b_ub=b_ub, A_eq=a_eq, b_eq=[1.0],
        bounds=[(0, None)] * m + [(0, None)], method="highs",
    )
    if res.status != 0:
        raise RuntimeError(f"hull membership LP failed: {res.message}")
    lam = np.clip(res.x[:m], 0.0, None)
    lam /= lam.sum()
    # recompute in exact arithmetic rather than trusting the LP objective
    residual = float(np.max(np.abs(basis @ lam - target)))
    return HullCertificate(others, lam, residual)


def _merge(x: np.ndarray):
    reps: list[int] = []
    for i, row in enumerate(x):
        if not any(np.max(np.abs(x[r] - row)) <= MERGE_TOL for r in reps):
            reps.append(i)
    return reps


def extreme_subset(points, tol: float = HULL_TOL) -> list[int]:
    """Indices of the extreme points of the convex hull of ``points``.

    Near-duplicate points are merged first; only the first index of each
    group can be reported. The result is sorted.
    """
    return sorted(extreme_subset_with_certificates(points, tol)[0])


def extreme_subset_with_certificates(points, tol: float = HULL_TOL):
    """Like :func:`extreme_subset`, also returning a certificate per removed index."""
    x = as_points(points)
    reps = _merge(x)
    certificates = {}
    for i in range(len(x)):
        if i not in reps:
            owner = next(r for r in reps if np.max(np.abs(x[r] - x[i])) <= MERGE_TOL)
            certificates[i] = HullCertificate((owner,), np.ones(1), float(np.max(np.abs(x[owner] - x[i]))))
    if len(reps) <= 2:
        return list(reps), certificates
    if x.shape[1] == 1:
        lo, hi = binary_extremes(x[reps, 0])
        keep = sorted({reps[lo], reps[hi]})
        for i in reps:
            if i not in keep:
                certificates[i] = hull_residual(x, i, keep)
        return keep, certificates
    keep = [i for i in reps if hull_residual(x, i, [r for r in reps if r != i]).residual > tol]
    for i in reps:
        if i not in keep:
            certificates[i] = hull_residual(x, i, keep)
    return keep, certificates


def binary_extremes(probs) -> tuple[int, int]:
    """Indices of the smallest and largest value, first occurrence on ties."""
    p = np.asarray(probs, dtype=float)
    if p.size == 0:
        raise ValueError("need at least one probability")
    return int(np.argmin(p)), int(np.argmax(p))
