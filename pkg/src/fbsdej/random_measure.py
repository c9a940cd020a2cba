"""Finite-activity jump machinery: mark intensities, jump trains, compensation.

The mark space is a finite list of values with per-mark rates, so every
compensator integral is an exact sum over marks.  Jump trains are sampled
uniform-given-count, which has the same law as exponential gaps and
vectorizes cleanly.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatchError

_RATE_TOL = 1e-12


@dataclass(frozen=True)
class JumpIntensity:
    """Finite mark list with strictly positive per-mark jump rates."""

    marks: np.ndarray
    rates: np.ndarray

    def __post_init__(self):
        marks = np.asarray(self.marks, dtype=float).reshape(-1)
        rates = np.asarray(self.rates, dtype=float).reshape(-1)
        if marks.shape != rates.shape:
            raise DimensionMismatchError("marks and rates must have equal length")
        if marks.size == 0:
            raise ValueError("at least one mark required (use intensity=None for no jumps)")
        if np.any(rates <= 0.0):
            raise ValueError("all rates must be strictly positive")
        if not np.all(np.isfinite(rates)) or not np.all(np.isfinite(marks)):
            raise ValueError("marks and rates must be finite")
        marks = marks.copy()
        rates = rates.copy()
        marks.flags.writeable = False
        rates.flags.writeable = False
        object.__setattr__(self, "marks", marks)
        object.__setattr__(self, "rates", rates)

    @property
    def total_rate(self) -> float:
        total = float(self.rates.sum())
        # defensive: the field-level sum is the definition, keep it consistent
        assert abs(total - np.sum(self.rates)) <= _RATE_TOL
        return total

    @property
    def n_marks(self) -> int:
        return int(self.marks.size)

    @staticmethod
    def from_pairs(pairs) -> "JumpIntensity":
        """Build from an iterable of (mark, rate) pairs, e.g. from config."""
        arr = np.asarray(list(pairs), dtype=float)
        if arr.ndim != 2 or arr.shape[1] != 2:
            raise ValueError("expected a list of (mark, rate) pairs")
        return JumpIntensity(arr[:, 0], arr[:, 1])


@dataclass(frozen=True)
class JumpTrain:
    """Strictly increasing jump times in (0, T] with a mark index per jump."""

    times: np.ndarray
    mark_indices: np.ndarray

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float).reshape(-1)
        idx = np.asarray(self.mark_indices, dtype=np.int64).reshape(-1)
        if times.shape != idx.shape:
            raise DimensionMismatchError("one mark index per jump time")
        if times.size and np.any(np.diff(times) <= 0.0):
            raise ValueError("jump times must be strictly increasing")
        if times.size and np.any(idx < 0):
            raise ValueError("mark indices must be nonnegative")
        times = times.copy()
        idx = idx.copy()
        times.flags.writeable = False
        idx.flags.writeable = False
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "mark_indices", idx)

    @property
    def size(self) -> int:
        return int(self.times.size)

    def counts_by_mark(self, n_marks: int) -> np.ndarray:
        return np.bincount(self.mark_indices, minlength=n_marks).astype(float)

    def step_mark_counts(self, edges: np.ndarray, n_marks: int) -> np.ndarray:
        """(n_steps, n_marks) jump counts per grid cell (t_i, t_{i+1}]."""
        n_steps = len(edges) - 1
        out = np.zeros((n_steps, n_marks))
        if self.size == 0:
            return out
        # times lie in (0, T]; right-closed binning matches the Euler cells
        cell = np.searchsorted(edges, self.times, side="left") - 1
        cell = np.clip(cell, 0, n_steps - 1)
        np.add.at(out, (cell, self.mark_indices), 1.0)
        return out


def sample_jump_train(
    intensity: JumpIntensity, horizon: float, rng: np.random.Generator
) -> JumpTrain:
    """Draw one train: Poisson count, uniform times (sorted), rate-weighted marks."""
    if horizon <= 0.0:
        raise ValueError("horizon must be positive")
    lam = intensity.total_rate
    count = int(rng.poisson(lam * horizon))
    times = np.sort(rng.random(count)) * horizon
    probs = intensity.rates / lam
    marks = rng.choice(intensity.n_marks, size=count, p=probs)
    # ties have probability zero but would violate the train invariant
    while times.size > 1 and np.any(np.diff(times) <= 0.0):
        keep = np.concatenate([[True], np.diff(times) > 0.0])
        times, marks = times[keep], marks[keep]
    return JumpTrain(times, marks)


def sample_jump_trains(
    intensity: JumpIntensity, horizon: float, n: int, rng: np.random.Generator
) -> list[JumpTrain]:
    """Draw ``n`` trains from one stream with a single vectorized pass."""
    if horizon <= 0.0:
        raise ValueError("horizon must be positive")
    lam = intensity.total_rate
    counts = rng.poisson(lam * horizon, size=n)
    total = int(counts.sum())
    all_times = rng.random(total) * horizon
    all_marks = rng.choice(intensity.n_marks, size=total, p=intensity.rates / lam)
    trains = []
    offsets = np.concatenate([[0], np.cumsum(counts)])
    for i in range(n):
        t = all_times[offsets[i] : offsets[i + 1]]
        m = all_marks[offsets[i] : offsets[i + 1]]
        order = np.argsort(t, kind="stable")
        trains.append(JumpTrain(t[order], m[order]))
    return trains


def compensator_drift(intensity: JumpIntensity | None, integrand) -> float:
    """Per-unit-time compensator correction: sum_j integrand(e_j) * rate_j."""
    if intensity is None:
        return 0.0
    vals = np.array([float(integrand(e)) for e in intensity.marks])
    return float(vals @ intensity.rates)


def compensated_integral(
    train: JumpTrain,
    intensity: JumpIntensity,
    integrand,
    horizon: float,
    quad_steps: int = 256,
) -> float:
    """Jump sum minus compensator: sum_i K(t_i, e_i) - int_0^T sum_j K(t, e_j) rate_j dt.

    The time integral uses the trapezoid rule on a uniform grid (exact for
    integrands constant in t).
    """
    jump_sum = 0.0
    if train.size:
        marks = intensity.marks[train.mark_indices]
        jump_sum = float(sum(integrand(t, e) for t, e in zip(train.times, marks)))
    ts = np.linspace(0.0, horizon, quad_steps + 1)
    per_t = np.array(
        [sum(float(integrand(t, e)) * r for e, r in zip(intensity.marks, intensity.rates)) for t in ts]
    )
    comp = float(np.trapezoid(per_t, ts))
    return jump_sum - comp
