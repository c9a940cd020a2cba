"""Time grids, reproducible noise ensembles, and the forward Euler step.

Noise is generated from counter-based streams keyed by (master seed, chunk
index) with a fixed chunk size, so any particle's draws can be regenerated
bit-exactly and nothing depends on scheduling or worker count.  One
distinguished common stream (index 0) carries the shared Brownian motion
and jump train used by the production model.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable

import numpy as np

from . import parallel
from .coefficients import CoefficientSet
from .errors import DimensionMismatchError, DivergenceError
from .measure import EmpiricalLaw
from .random_measure import JumpIntensity, JumpTrain

DIVERGENCE_CAP = 1e12

_COMMON_STREAM_KEY = 2**63
_INITIAL_STREAM_KEY = 2**63 + 1


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid t_i = i T / M on [0, T]."""

    horizon: float
    n_steps: int

    def __post_init__(self):
        if self.horizon <= 0.0:
            raise ValueError("horizon must be positive")
        if self.n_steps < 1:
            raise ValueError("need at least one step")

    @property
    def dt(self) -> float:
        return self.horizon / self.n_steps

    @property
    def times(self) -> np.ndarray:
        return np.linspace(0.0, self.horizon, self.n_steps + 1)


@dataclass(frozen=True)
class NoiseSpec:
    """What noise an ensemble carries, idiosyncratic and common."""

    dw: int = 1
    intensity: JumpIntensity | None = None
    common_dw: int = 1
    common_intensity: JumpIntensity | None = None

    def __post_init__(self):
        if self.dw < 1 or self.common_dw < 0:
            raise DimensionMismatchError("dw >= 1 and common_dw >= 0 required")

    @property
    def n_marks(self) -> int:
        return 0 if self.intensity is None else self.intensity.n_marks

    @property
    def n_common_marks(self) -> int:
        return 0 if self.common_intensity is None else self.common_intensity.n_marks


@dataclass(frozen=True)
class PathEnsemble:
    """Noise and (optionally) simulated forward states for N particles.

    ``dW`` has shape (N, M, dw) with per-step variance dt; ``jump_counts``
    holds per-step per-mark jump counts, with exact jump times retained in
    ``trains``.  The common stream arrays are shared by every particle.
    """

    grid: TimeGrid
    noise: NoiseSpec
    master_seed: int
    dW: np.ndarray
    jump_counts: np.ndarray
    trains: tuple[JumpTrain, ...]
    common_dW: np.ndarray
    common_counts: np.ndarray
    common_train: JumpTrain | None
    X: np.ndarray | None = None

    @property
    def n_particles(self) -> int:
        return self.dW.shape[0]

    def compensated_counts(self) -> np.ndarray:
        """Per-step compensated increments: counts_j - rate_j dt, shape (N, M, marks)."""
        if self.noise.intensity is None:
            return np.zeros_like(self.jump_counts)
        return self.jump_counts - self.noise.intensity.rates[None, None, :] * self.grid.dt

    def with_states(self, x: np.ndarray) -> "PathEnsemble":
        return replace(self, X=x)


def _chunk_noise(seed: int, chunk_index: int, chunk_n: int, grid: TimeGrid, noise: NoiseSpec):
    """All draws of one chunk stream, in a fixed order."""
    rng = np.random.Generator(np.random.Philox(key=[seed, chunk_index]))
    dw = rng.standard_normal((chunk_n, grid.n_steps, noise.dw)) * np.sqrt(grid.dt)
    trains: list[JumpTrain] = []
    counts = np.zeros((chunk_n, grid.n_steps, noise.n_marks))
    if noise.intensity is not None:
        lam = noise.intensity.total_rate
        n_jumps = rng.poisson(lam * grid.horizon, size=chunk_n)
        total = int(n_jumps.sum())
        all_times = rng.random(total) * grid.horizon
        all_marks = rng.choice(
            noise.intensity.n_marks, size=total, p=noise.intensity.rates / lam
        )
        edges = grid.times
        offsets = np.concatenate([[0], np.cumsum(n_jumps)])
        for i in range(chunk_n):
            t = all_times[offsets[i] : offsets[i + 1]]
            m = all_marks[offsets[i] : offsets[i + 1]]
            order = np.argsort(t, kind="stable")
            train = JumpTrain(t[order], m[order])
            trains.append(train)
            counts[i] = train.step_mark_counts(edges, noise.intensity.n_marks)
    else:
        trains = [JumpTrain(np.empty(0), np.empty(0, dtype=np.int64))] * chunk_n
    return dw, counts, trains


def _common_noise(seed: int, grid: TimeGrid, noise: NoiseSpec):
    rng = np.random.Generator(np.random.Philox(key=[seed, _COMMON_STREAM_KEY]))
    dw0 = rng.standard_normal((grid.n_steps, noise.common_dw)) * np.sqrt(grid.dt)
    train = None
    counts = np.zeros((grid.n_steps, noise.n_common_marks))
    if noise.common_intensity is not None:
        inten = noise.common_intensity
        lam = inten.total_rate
        count = int(rng.poisson(lam * grid.horizon))
        times = np.sort(rng.random(count)) * grid.horizon
        marks = rng.choice(inten.n_marks, size=count, p=inten.rates / lam)
        train = JumpTrain(times, marks)
        counts = train.step_mark_counts(grid.times, inten.n_marks)
    return dw0, counts, train


def make_ensemble(
    n: int,
    grid: TimeGrid,
    noise: NoiseSpec = NoiseSpec(),
    master_seed: int = 0,
    workers: int = 1,
) -> PathEnsemble:
    """Generate all noise for ``n`` particles from counter-based streams.

    Particle ``i`` always lives in chunk ``i // CHUNK_SIZE`` regardless of
    ``n`` or ``workers``, so its draws are a pure function of
    (master_seed, i).
    """
    if n < 1:
        raise ValueError("need at least one particle")
    parts = parallel.run_chunked(
        lambda c, lo, hi: _chunk_noise(master_seed, c, parallel.CHUNK_SIZE, grid, noise),
        n,
        workers=workers,
    )
    ranges = parallel.chunk_ranges(n)
    dW = np.concatenate([p[0][: hi - lo] for p, (lo, hi) in zip(parts, ranges)], axis=0)
    counts = np.concatenate([p[1][: hi - lo] for p, (lo, hi) in zip(parts, ranges)], axis=0)
    trains: list[JumpTrain] = []
    for p, (lo, hi) in zip(parts, ranges):
        trains.extend(p[2][: hi - lo])
    dw0, common_counts, common_train = _common_noise(master_seed, grid, noise)
    dW.flags.writeable = False
    counts.flags.writeable = False
    dw0.flags.writeable = False
    common_counts.flags.writeable = False
    return PathEnsemble(
        grid=grid,
        noise=noise,
        master_seed=master_seed,
        dW=dW,
        jump_counts=counts,
        trains=tuple(trains),
        common_dW=dw0,
        common_counts=common_counts,
        common_train=common_train,
    )


def regenerate_particle_noise(
    master_seed: int, grid: TimeGrid, noise: NoiseSpec, index: int
) -> tuple[np.ndarray, JumpTrain]:
    """Recompute one particle's draws from scratch (bit-exact vs the ensemble)."""
    chunk, offset = divmod(index, parallel.CHUNK_SIZE)
    dw, _, trains = _chunk_noise(master_seed, chunk, parallel.CHUNK_SIZE, grid, noise)
    return dw[offset], trains[offset]


def _initial_states(coeffs: CoefficientSet, n: int, master_seed: int) -> np.ndarray:
    law = coeffs.initial_law
    if law.size == 1:
        return np.tile(law.points[0], (n, 1))
    rng = np.random.Generator(np.random.Philox(key=[master_seed, _INITIAL_STREAM_KEY]))
    idx = rng.choice(law.size, size=n, p=law.weights)
    return law.points[idx].copy()


def _zeros_backward(n: int, coeffs: CoefficientSet, grid: TimeGrid):
    d = coeffs.dims
    return (
        np.zeros((n, grid.n_steps + 1, d.y)),
        np.zeros((n, grid.n_steps, d.y, d.w)),
        np.zeros((n, grid.n_steps, d.y, d.marks)),
    )


def simulate_forward(
    coeffs: CoefficientSet,
    backward,
    laws,
    ensemble: PathEnsemble,
    drift_shift: np.ndarray | None = None,
    diffusion_shift: np.ndarray | None = None,
    jump_shift: np.ndarray | None = None,
) -> PathEnsemble:
    """Euler step for the forward state against a frozen backward estimate.

    ``backward`` supplies (Y, Z, K) arrays per (particle, step) or ``None``
    for the zero estimate; ``laws`` is one law per grid node (or ``None``
    when the coefficients ignore it).  The jump contribution applies the
    pre-jump state and compensates exactly over the finite mark list; the
    optional shift arrays implement the damped perturbation schemes.

    Raises :class:`DivergenceError` as soon as any state is non-finite or
    exceeds the hard cap.
    """
    grid, noise = ensemble.grid, ensemble.noise
    n, m = ensemble.n_particles, grid.n_steps
    d = coeffs.dims
    if noise.dw != d.w:
        raise DimensionMismatchError(f"ensemble dw={noise.dw} but coefficients need {d.w}")
    if noise.n_marks != d.marks:
        raise DimensionMismatchError(
            f"ensemble marks={noise.n_marks} but coefficients need {d.marks}"
        )
    if backward is None:
        ys, zs, ks = _zeros_backward(n, coeffs, grid)
    else:
        ys, zs, ks = backward.Y, backward.Z, backward.K
    dt = grid.dt
    times = grid.times
    comp = ensemble.compensated_counts()
    x = np.empty((n, m + 1, d.x))
    x[:, 0, :] = _initial_states(coeffs, n, ensemble.master_seed)
    point_law = EmpiricalLaw.point_mass(np.zeros(d.x + d.y))
    for i in range(m):
        law_i = laws[i] if laws is not None else point_law
        xi = x[:, i, :]
        yi, zi, ki = ys[:, i, :], zs[:, i, :, :], ks[:, i, :, :]
        t = float(times[i])
        b = coeffs.drift(t, xi, yi, zi, ki, law_i)
        sig = coeffs.diffusion(t, xi, yi, zi, ki, law_i)
        if drift_shift is not None:
            b = b + drift_shift[:, i, :]
        if diffusion_shift is not None:
            sig = sig + diffusion_shift[:, i, :, None]
        nxt = xi + b * dt + np.einsum("nxw,nw->nx", sig, ensemble.dW[:, i, :])
        if d.marks:
            for j, e in enumerate(noise.intensity.marks):
                beta = coeffs.jump(t, xi, yi, zi, ki, law_i, float(e))
                if jump_shift is not None:
                    beta = beta + jump_shift[:, i, j, :]
                nxt = nxt + beta * comp[:, i, j][:, None]
        if not np.all(np.isfinite(nxt)) or np.any(np.abs(nxt) > DIVERGENCE_CAP):
            bad = np.where(~np.isfinite(nxt).all(axis=1) | (np.abs(nxt) > DIVERGENCE_CAP).any(axis=1))[0]
            p = int(bad[0])
            raise DivergenceError(
                f"forward state diverged at particle {p}, step {i + 1}", particle=p, step=i + 1
            )
        x[:, i + 1, :] = nxt
    return ensemble.with_states(x)


CoefOrFn = float | Callable[[float, np.ndarray], np.ndarray]


def _eval_coef(c: CoefOrFn, t: float, q: np.ndarray) -> np.ndarray:
    if callable(c):
        return np.asarray(c(t, q), dtype=float)
    return np.full_like(q, float(c))


@dataclass(frozen=True)
class RegionProduction:
    """Production dynamics of one region's nodes.

    ``mu``/``sigma``/``sigma_common`` may be floats or callables (t, q);
    jump sizes are ``beta_scale * e`` against the idiosyncratic train and
    ``beta_common_scale * e`` against the common train.
    """

    mu: CoefOrFn = 0.0
    sigma: CoefOrFn = 0.0
    sigma_common: CoefOrFn = 0.0
    beta_scale: float = 0.0
    beta_common_scale: float = 0.0
    q0: float = 0.0

    @property
    def common_noise_free(self) -> bool:
        sc = self.sigma_common
        return (not callable(sc)) and sc == 0.0 and self.beta_common_scale == 0.0


@dataclass(frozen=True)
class WorldProduction:
    """Rest-of-world net production, driven by the common streams only."""

    mu: CoefOrFn = 0.0
    sigma: CoefOrFn = 0.0
    beta_scale: float = 0.0
    q0: float = 0.0


def assign_regions(n: int, weights: np.ndarray) -> np.ndarray:
    """Deterministic proportional particle-to-region assignment."""
    bounds = np.floor(np.cumsum(weights) * n + 0.5).astype(int)
    bounds[-1] = n
    region_of = np.zeros(n, dtype=np.int64)
    lo = 0
    for g, hi in enumerate(bounds):
        region_of[lo:hi] = g
        lo = hi
    return region_of


def simulate_production(
    regions: list[RegionProduction],
    world: WorldProduction,
    ensemble: PathEnsemble,
    weights: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Euler paths of the per-node and rest-of-world production processes.

    Every node is driven by its own Brownian/jump streams plus the common
    ones; the rest-of-world path is driven by the common streams only.
    Returns (Q, Q0, region_of) with Q of shape (N, M+1) and Q0 of (M+1,).
    """
    grid, noise = ensemble.grid, ensemble.noise
    n, m = ensemble.n_particles, grid.n_steps
    if weights is None:
        weights = np.full(len(regions), 1.0 / len(regions))
    region_of = assign_regions(n, np.asarray(weights, dtype=float))
    dt = grid.dt
    times = grid.times
    comp = ensemble.compensated_counts()
    common_comp = ensemble.common_counts.copy()
    if noise.common_intensity is not None:
        common_comp -= noise.common_intensity.rates[None, :] * dt

    q = np.empty((n, m + 1))
    for g, spec in enumerate(regions):
        q[region_of == g, 0] = spec.q0
    q0 = np.empty(m + 1)
    q0[0] = world.q0

    mu_g = np.empty(n)
    sg = np.empty(n)
    sg0 = np.empty(n)
    for i in range(m):
        t = float(times[i])
        qi = q[:, i]
        for g, spec in enumerate(regions):
            sel = region_of == g
            mu_g[sel] = _eval_coef(spec.mu, t, qi[sel])
            sg[sel] = _eval_coef(spec.sigma, t, qi[sel])
            sg0[sel] = _eval_coef(spec.sigma_common, t, qi[sel])
        nxt = qi + mu_g * dt + sg * ensemble.dW[:, i, 0] + sg0 * ensemble.common_dW[i, 0]
        if noise.intensity is not None:
            scales = np.array([regions[g].beta_scale for g in range(len(regions))])
            jump = comp[:, i, :] @ noise.intensity.marks
            nxt = nxt + scales[region_of] * jump
        if noise.common_intensity is not None:
            scales0 = np.array([regions[g].beta_common_scale for g in range(len(regions))])
            jump0 = float(common_comp[i, :] @ noise.common_intensity.marks)
            nxt = nxt + scales0[region_of] * jump0
        if not np.all(np.isfinite(nxt)) or np.any(np.abs(nxt) > DIVERGENCE_CAP):
            p = int(np.where(~np.isfinite(nxt) | (np.abs(nxt) > DIVERGENCE_CAP))[0][0])
            raise DivergenceError(
                f"production diverged at particle {p}, step {i + 1}", particle=p, step=i + 1
            )
        q[:, i + 1] = nxt

        mu0 = float(_eval_coef(world.mu, t, np.array([q0[i]]))[0])
        s0 = float(_eval_coef(world.sigma, t, np.array([q0[i]]))[0])
        inc0 = mu0 * dt + s0 * ensemble.common_dW[i, 0]
        if noise.common_intensity is not None:
            inc0 += world.beta_scale * float(common_comp[i, :] @ noise.common_intensity.marks)
        q0[i + 1] = q0[i] + inc0
    return q, q0, region_of
