"""Empirical laws over particle clouds and 2-Wasserstein distances.

The solver represents every marginal law by a finite weighted cloud.  The
convergence machinery only ever needs the paired root-mean-square bound on
the 2-Wasserstein distance; the exact distances (1-d sorting, small-N
matching) exist as independent test oracles.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import DimensionMismatchError, SizeLimitError, UnsupportedDimensionError

_WEIGHT_TOL = 1e-12
_EXACT_MATCH_CAP = 64


@dataclass(frozen=True)
class EmpiricalLaw:
    """Weighted particle cloud standing in for a probability law on R^d.

    Weights are uniform by default; they must be nonnegative and sum to one
    within 1e-12.  Arrays are frozen so laws can be shared freely across
    threads.
    """

    points: np.ndarray
    weights: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        pts = np.atleast_2d(np.asarray(self.points, dtype=float))
        if pts.ndim != 2 or pts.shape[0] < 1:
            raise DimensionMismatchError("points must be a nonempty (n, d) array")
        if self.weights is None:
            w = np.full(pts.shape[0], 1.0 / pts.shape[0])
        else:
            w = np.asarray(self.weights, dtype=float)
        if w.shape != (pts.shape[0],):
            raise DimensionMismatchError("weights must be one per point")
        if np.any(w < 0.0):
            raise ValueError("weights must be nonnegative")
        if abs(float(w.sum()) - 1.0) > _WEIGHT_TOL:
            raise ValueError(f"weights sum to {w.sum()!r}, expected 1 within {_WEIGHT_TOL}")
        pts = pts.copy()
        w = w.copy()
        pts.flags.writeable = False
        w.flags.writeable = False
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "weights", w)

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    @property
    def size(self) -> int:
        return self.points.shape[0]

    @property
    def is_uniform(self) -> bool:
        return bool(np.allclose(self.weights, 1.0 / self.size, atol=_WEIGHT_TOL, rtol=0.0))

    @staticmethod
    def point_mass(x) -> "EmpiricalLaw":
        return EmpiricalLaw(np.atleast_2d(np.asarray(x, dtype=float)))

    def mean(self) -> np.ndarray:
        return self.weights @ self.points


def moments(law: EmpiricalLaw) -> tuple[np.ndarray, float]:
    """Weighted mean vector and weighted mean of |x|^2."""
    mean = law.weights @ law.points
    second = float(law.weights @ np.sum(law.points**2, axis=1))
    return mean, second


def _check_pairable(a: EmpiricalLaw, b: EmpiricalLaw) -> None:
    if a.dim != b.dim:
        raise DimensionMismatchError(f"dimension mismatch: {a.dim} vs {b.dim}")
    if a.size != b.size:
        raise DimensionMismatchError(f"point count mismatch: {a.size} vs {b.size}")


def w2_coupled_bound(a: EmpiricalLaw, b: EmpiricalLaw, paired: bool = True) -> float:
    """Root-mean-square distance of index-paired points.

    This upper-bounds the 2-Wasserstein distance of the two clouds: the
    index pairing is itself a coupling of the empirical laws.  ``paired``
    records that the caller's indexing identifies samples of a common
    source of randomness; the value is the same either way.
    """
    del paired
    _check_pairable(a, b)
    sq = np.sum((a.points - b.points) ** 2, axis=1)
    return float(np.sqrt(np.mean(sq)))


def w2_exact_1d(a: EmpiricalLaw, b: EmpiricalLaw) -> float:
    """Exact W2 between two uniform 1-d clouds via the monotone coupling."""
    if a.dim != 1 or b.dim != 1:
        raise UnsupportedDimensionError("w2_exact_1d requires 1-d clouds")
    _check_pairable(a, b)
    if not (a.is_uniform and b.is_uniform):
        raise ValueError("w2_exact_1d requires uniform weights")
    xa = np.sort(a.points[:, 0])
    xb = np.sort(b.points[:, 0])
    return float(np.sqrt(np.mean((xa - xb) ** 2)))


def w2_exact_small(a: EmpiricalLaw, b: EmpiricalLaw) -> float:
    """Exact W2 between small uniform clouds by optimal assignment.

    Solves the minimum-cost perfect matching over squared Euclidean costs;
    capped at 64 points per side (use :func:`w2_coupled_bound` beyond that).
    """
    _check_pairable(a, b)
    if a.size > _EXACT_MATCH_CAP:
        raise SizeLimitError(
            f"exact matching capped at {_EXACT_MATCH_CAP} points, got {a.size}"
        )
    if not (a.is_uniform and b.is_uniform):
        raise ValueError("w2_exact_small requires uniform weights")
    diff = a.points[:, None, :] - b.points[None, :, :]
    cost = np.sum(diff**2, axis=2)
    rows, cols = linear_sum_assignment(cost)
    # sort matched costs so the reduction order (hence the float result)
    # is symmetric in the two arguments
    return float(np.sqrt(np.sort(cost[rows, cols]).mean()))
