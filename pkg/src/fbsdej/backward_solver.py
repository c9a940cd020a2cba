"""Least-squares Monte Carlo backward induction for (Y, Z, K).

Conditional expectations at each time slice are projections onto a global
polynomial basis of the conditioning state.  The martingale integrands are
read off through the increment regressions

    Z_i ~ E[Y_{i+1} dW_i | X_i] / dt,
    K_i(e_j) ~ E[Y_{i+1} dpi~_i(e_j) | X_i] / (rate_j dt),

and the value is rolled back with an explicit driver evaluation.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from itertools import combinations_with_replacement

import numpy as np
import scipy.linalg

from . import parallel
from .coefficients import CoefficientSet
from .errors import DimensionMismatchError, RegressionError
from .forward_sim import PathEnsemble
from .measure import EmpiricalLaw

_MAX_DEGREE = 5
_RIDGE_FLOOR = 1e-8


@dataclass(frozen=True)
class BasisSpec:
    """Polynomial regression basis.

    ``conditioning`` selects which state coordinates enter the basis
    (``None`` means all of them); ``ridge`` is an always-on Tikhonov weight,
    on top of the automatic bump applied when the normal equations turn out
    singular.
    """

    degree: int = 1
    ridge: float = 0.0
    conditioning: tuple[int, ...] | None = None

    def __post_init__(self):
        if not (0 <= self.degree <= _MAX_DEGREE):
            raise ValueError(f"degree must lie in [0, {_MAX_DEGREE}]")
        if self.ridge < 0.0:
            raise ValueError("ridge must be nonnegative")


def polynomial_features(x: np.ndarray, basis: BasisSpec) -> np.ndarray:
    """All monomials of total degree <= degree in the selected coordinates."""
    x = np.atleast_2d(x)
    if basis.conditioning is not None:
        x = x[:, list(basis.conditioning)]
    n, d = x.shape
    cols = [np.ones(n)]
    for deg in range(1, basis.degree + 1):
        for combo in combinations_with_replacement(range(d), deg):
            col = np.ones(n)
            for c in combo:
                col = col * x[:, c]
            cols.append(col)
    return np.stack(cols, axis=1)


class SliceRegression:
    """Least-squares projector onto one slice's feature matrix.

    The Gram matrix is accumulated over fixed particle chunks in index
    order (worker-count independent), factorized once, and reused for every
    target block of the slice.  Targets are centered before solving and the
    mean added back; with an intercept in the basis this is the same
    projection with better conditioning.  A singular system gets a single
    ridge bump to ``max(ridge, 1e-8 * trace)``; still singular raises
    :class:`RegressionError` naming the slice.
    """

    def __init__(self, features: np.ndarray, ridge: float = 0.0,
                 step: int | None = None, workers: int = 1):
        self.features = features
        self.step = step
        self.workers = workers
        n, p = features.shape
        self._mean_only = p == 1 and ridge == 0.0
        if self._mean_only:
            return
        parts = parallel.run_chunked(
            lambda c, lo, hi: features[lo:hi].T @ features[lo:hi], n, workers=workers
        )
        gram = parallel.ordered_sum(parts)
        if ridge > 0.0:
            gram = gram + ridge * np.eye(p)
        try:
            self._factor = scipy.linalg.cho_factor(gram)
        except scipy.linalg.LinAlgError:
            bump = max(ridge, _RIDGE_FLOOR * float(np.trace(gram)))
            try:
                self._factor = scipy.linalg.cho_factor(gram + bump * np.eye(p))
            except scipy.linalg.LinAlgError as exc:
                where = "" if step is None else f" at time slice {step}"
                raise RegressionError(f"singular regression{where}", step=step) from exc

    def fitted(self, targets: np.ndarray) -> np.ndarray:
        n = self.features.shape[0]
        t2 = targets.reshape(n, -1)
        mean = t2.mean(axis=0)
        if self._mean_only:
            return np.broadcast_to(mean, t2.shape).reshape(targets.shape).copy()
        centered = t2 - mean
        parts = parallel.run_chunked(
            lambda c, lo, hi: self.features[lo:hi].T @ centered[lo:hi], n, workers=self.workers
        )
        rhs = parallel.ordered_sum(parts)
        coef = scipy.linalg.cho_solve(self._factor, rhs)
        return (mean + self.features @ coef).reshape(targets.shape)


def fit_conditional(
    features: np.ndarray,
    targets: np.ndarray,
    ridge: float = 0.0,
    step: int | None = None,
    workers: int = 1,
) -> np.ndarray:
    """Fitted values of the least-squares projection of targets on features."""
    return SliceRegression(features, ridge, step, workers).fitted(targets)


@dataclass(frozen=True)
class SolverIterate:
    """One iterate U = (X, Y, Z, K) of the coupled solver.

    ``Y`` is defined on grid nodes, ``Z``/``K`` on steps.  ``X`` rides along
    so successive iterates can be compared in the full proof norm.
    """

    Y: np.ndarray
    Z: np.ndarray
    K: np.ndarray
    X: np.ndarray | None = None

    def __post_init__(self):
        if self.Y.ndim != 3 or self.Z.ndim != 4 or self.K.ndim != 4:
            raise DimensionMismatchError("expected Y (n,m+1,dy), Z (n,m,dy,dw), K (n,m,dy,marks)")
        n, m1, _ = self.Y.shape
        if self.Z.shape[0] != n or self.Z.shape[1] != m1 - 1:
            raise DimensionMismatchError("Z shape inconsistent with Y")
        if self.K.shape[0] != n or self.K.shape[1] != m1 - 1:
            raise DimensionMismatchError("K shape inconsistent with Y")
        for arr in (self.Y, self.Z, self.K):
            if not np.all(np.isfinite(arr)):
                raise ValueError("iterate arrays must be finite")

    @staticmethod
    def zeros(n: int, m: int, dy: int, dw: int, marks: int, dx: int | None = None) -> "SolverIterate":
        x = None if dx is None else np.zeros((n, m + 1, dx))
        return SolverIterate(
            Y=np.zeros((n, m + 1, dy)),
            Z=np.zeros((n, m, dy, dw)),
            K=np.zeros((n, m, dy, marks)),
            X=x,
        )

    def with_states(self, x: np.ndarray) -> "SolverIterate":
        return replace(self, X=x)


def solve_backward(
    ensemble: PathEnsemble,
    coeffs: CoefficientSet,
    laws,
    basis: BasisSpec,
    terminal_law: EmpiricalLaw | None = None,
    driver_shift: np.ndarray | None = None,
    terminal_shift: np.ndarray | None = None,
    workers: int = 1,
) -> SolverIterate:
    """Backward induction along simulated forward paths.

    ``laws`` is one law per grid node for the driver's law argument (``None``
    if unused); ``terminal_law`` feeds the terminal map (defaults to the
    empirical law of X_T).  The optional shifts add ``driver_shift[:, i]``
    inside the time integral and ``terminal_shift`` to the terminal value,
    which is how the backward-perturbed scheme enters.
    """
    if ensemble.X is None:
        raise ValueError("ensemble has no simulated states; run simulate_forward first")
    grid, noise = ensemble.grid, ensemble.noise
    x = ensemble.X
    n, m = ensemble.n_particles, grid.n_steps
    d = coeffs.dims
    if noise.dw != d.w or noise.n_marks != d.marks:
        raise DimensionMismatchError(
            f"ensemble noise (dw={noise.dw}, marks={noise.n_marks}) does not match "
            f"coefficient dims (dw={d.w}, marks={d.marks})"
        )
    dt = grid.dt
    comp = ensemble.compensated_counts()
    rates = None if noise.intensity is None else noise.intensity.rates

    if terminal_law is None:
        terminal_law = EmpiricalLaw(x[:, m, :])
    y = np.empty((n, m + 1, d.y))
    z = np.zeros((n, m, d.y, d.w))
    k = np.zeros((n, m, d.y, d.marks))
    y[:, m, :] = coeffs.terminal(x[:, m, :], terminal_law)
    if terminal_shift is not None:
        y[:, m, :] += terminal_shift
    point_law = EmpiricalLaw.point_mass(np.zeros(d.x + d.y))
    for i in range(m - 1, -1, -1):
        feats = polynomial_features(x[:, i, :], basis)
        projector = SliceRegression(feats, basis.ridge, step=i, workers=workers)
        ynext = y[:, i + 1, :]
        ey = projector.fitted(ynext)
        # martingale-increment targets use the conditional-mean control
        # variate: same projection, far lower variance
        resid = ynext - ey
        targets = [(resid[:, :, None] * ensemble.dW[:, i, None, :] / dt).reshape(n, -1)]
        if d.marks:
            kt = resid[:, :, None] * comp[:, i, None, :] / (rates[None, None, :] * dt)
            targets.append(kt.reshape(n, -1))
        fitted = projector.fitted(np.concatenate(targets, axis=1))
        z[:, i] = fitted[:, : d.y * d.w].reshape(n, d.y, d.w)
        if d.marks:
            k[:, i] = fitted[:, d.y * d.w :].reshape(n, d.y, d.marks)
        law_i = laws[i] if laws is not None else point_law
        h = coeffs.driver(float(grid.times[i]), x[:, i, :], ey, z[:, i], k[:, i], law_i)
        if driver_shift is not None:
            h = h + driver_shift[:, i, :]
        y[:, i, :] = ey + dt * h
    return SolverIterate(Y=y, Z=z, K=k, X=x)


@dataclass(frozen=True)
class IterateDistance:
    """Squared proof-norm components between two iterates."""

    y: float
    z: float
    k: float
    x_terminal: float

    @property
    def total(self) -> float:
        return self.y + self.z + self.k + self.x_terminal


def l2_distance(a: SolverIterate, b: SolverIterate, ensemble: PathEnsemble) -> IterateDistance:
    """Time-integrated mean-square gaps for (Y, Z, K) plus the terminal X gap.

    The mark component uses the rate-weighted seminorm; time integrals are
    left Riemann sums over the step values, matching the proof norm.
    """
    if a.Y.shape != b.Y.shape or a.Z.shape != b.Z.shape or a.K.shape != b.K.shape:
        raise DimensionMismatchError("iterates have mismatched shapes")
    dt = ensemble.grid.dt
    dy = a.Y - b.Y
    dz = a.Z - b.Z
    dk = a.K - b.K
    y_dist = float(np.mean(np.sum(dy[:, :-1, :] ** 2, axis=2), axis=0).sum() * dt)
    z_dist = float(np.mean(np.sum(dz**2, axis=(2, 3)), axis=0).sum() * dt)
    if ensemble.noise.intensity is not None and dk.size:
        w = ensemble.noise.intensity.rates
        k_dist = float(np.mean(np.sum(dk**2 * w[None, None, None, :], axis=(2, 3)), axis=0).sum() * dt)
    else:
        k_dist = 0.0
    if a.X is not None and b.X is not None:
        dxt = a.X[:, -1, :] - b.X[:, -1, :]
        x_dist = float(np.mean(np.sum(dxt**2, axis=1)))
    else:
        x_dist = 0.0
    return IterateDistance(y=y_dist, z=z_dist, k=k_dist, x_terminal=x_dist)
