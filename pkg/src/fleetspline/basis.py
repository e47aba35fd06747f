"""B-spline knot vectors and basis matrices over an age grid.

The failure curve of every fleet entity is an intercept plus a weighted sum
of B-spline basis functions evaluated at integer ages.  Knot vectors are
clamped (boundary knots repeated degree+1 times) so the basis forms a
partition of unity over the whole age range, including both endpoints.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


def _frozen_array(values, dtype=float) -> np.ndarray:
    arr = np.asarray(values, dtype=dtype).copy()
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class KnotVector:
    """Clamped knot sequence defining a B-spline basis of a given degree.

    The number of basis functions is ``len(knots) - degree - 1``.
    """

    degree: int
    knots: np.ndarray = field(repr=False)

    def __post_init__(self):
        if self.degree < 0:
            raise ValueError("degree must be non-negative")
        knots = _frozen_array(self.knots)
        object.__setattr__(self, "knots", knots)
        if knots.ndim != 1:
            raise ValueError("knots must be one-dimensional")
        if not np.all(np.isfinite(knots)):
            raise ValueError("knots must be finite")
        if np.any(np.diff(knots) < 0):
            raise ValueError("knots must be non-decreasing")
        m = self.degree + 1
        if len(knots) < 2 * m:
            raise ValueError("too few knots for the requested degree")
        if np.count_nonzero(knots == knots[0]) != m:
            raise ValueError(f"first knot must appear exactly {m} times")
        if np.count_nonzero(knots == knots[-1]) != m:
            raise ValueError(f"last knot must appear exactly {m} times")
        if self.n_basis < 1:
            raise ValueError("knot vector defines no basis functions")

    @property
    def n_basis(self) -> int:
        return len(self.knots) - self.degree - 1

    @property
    def lo(self) -> float:
        return float(self.knots[0])

    @property
    def hi(self) -> float:
        return float(self.knots[-1])


@dataclass(frozen=True)
class BasisMatrix:
    """Basis values tabulated on a grid of ages: ``values[t, k] = B_k(age_t)``."""

    values: np.ndarray = field(repr=False)
    ages: np.ndarray = field(repr=False)
    degree: int

    def __post_init__(self):
        object.__setattr__(self, "values", _frozen_array(self.values))
        object.__setattr__(self, "ages", _frozen_array(self.ages))
        if self.values.shape[0] != len(self.ages):
            raise ValueError("values and ages disagree on the number of rows")

    @property
    def n_basis(self) -> int:
        return self.values.shape[1]

    @property
    def n_ages(self) -> int:
        return self.values.shape[0]


def make_uniform_knots(age_min: float, age_max: float, n_interior: int,
                       degree: int) -> KnotVector:
    """Clamped knot vector with equally spaced interior knots.

    Yields ``n_interior + degree + 1`` basis functions over
    ``[age_min, age_max]``.
    """
    if not (np.isfinite(age_min) and np.isfinite(age_max)):
        raise ValueError("age bounds must be finite")
    if age_max <= age_min:
        raise ValueError("age_max must exceed age_min")
    if n_interior < 0:
        raise ValueError("n_interior must be non-negative")
    if degree < 0:
        raise ValueError("degree must be non-negative")
    interior = np.linspace(age_min, age_max, n_interior + 2)[1:-1]
    knots = np.concatenate([
        np.full(degree + 1, float(age_min)),
        interior,
        np.full(degree + 1, float(age_max)),
    ])
    return KnotVector(degree=degree, knots=knots)


def _find_spans(knots: np.ndarray, degree: int, x: np.ndarray) -> np.ndarray:
    """Index j of the knot span containing each x, with t[j] <= x < t[j+1].

    Evaluation at the right boundary is folded into the last non-empty span,
    which closes the final interval.
    """
    j = np.searchsorted(knots, x, side="right") - 1
    return np.clip(j, degree, len(knots) - degree - 2)


def basis_matrix(kv: KnotVector, ages) -> BasisMatrix:
    """Tabulate all basis functions of ``kv`` at the given ages.

    Uses the Cox-de Boor recursion in its triangular form, vectorized over
    evaluation points.  Every age must lie within the knot range.
    """
    x = np.atleast_1d(np.asarray(ages, dtype=float))
    if x.ndim != 1:
        raise ValueError("ages must be one-dimensional")
    if np.any(x < kv.lo) or np.any(x > kv.hi):
        raise ValueError(
            f"ages must lie within the knot range [{kv.lo}, {kv.hi}]")

    t = kv.knots
    p = kv.degree
    n = len(x)
    spans = _find_spans(t, p, x)

    # N[:, r] holds the value of basis function spans-p+r at degree d after
    # the d-th sweep; left/right cache the distances used by the recursion.
    N = np.zeros((n, p + 1))
    N[:, 0] = 1.0
    left = np.empty((n, p + 1))
    right = np.empty((n, p + 1))
    for d in range(1, p + 1):
        left[:, d] = x - t[spans + 1 - d]
        right[:, d] = t[spans + d] - x
        saved = np.zeros(n)
        for r in range(d):
            denom = right[:, r + 1] + left[:, d - r]
            temp = N[:, r] / denom
            N[:, r] = saved + right[:, r + 1] * temp
            saved = left[:, d - r] * temp
        N[:, d] = saved

    values = np.zeros((n, kv.n_basis))
    cols = spans[:, None] - p + np.arange(p + 1)[None, :]
    values[np.arange(n)[:, None], cols] = N
    return BasisMatrix(values=values, ages=x, degree=p)


def curve(bm: BasisMatrix, intercept: float, weights) -> np.ndarray:
    """Evaluate ``intercept + values @ weights`` over the tabulated ages."""
    w = np.asarray(weights, dtype=float)
    if w.shape != (bm.n_basis,):
        raise ValueError(
            f"weights must have length {bm.n_basis}, got shape {w.shape}")
    return intercept + bm.values @ w
