"""Power-network storage model: prices, costs, coupling residuals, assembly.

A :class:`GridModel` describes regions of identical nodes (production
dynamics, transmission cost, weight), the rest-of-world production, the
inverse demand curve, and the storage cost structure.  The two coupling
conditions (node best response against an exogenous aggregate, and the
centrally controlled variant with its price-impact term) are exposed as
residuals and, for the quadratic family, eliminated in closed form to
assemble a coefficient set the coupled solver can run.

Aggregate (conditional-mean) quantities are cross-particle means over the
particles sharing the common stream; with the common noise switched off,
the default for benchmarks, these are plain means.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .coefficients import CoefficientSet, Dims
from .errors import AssemblyError, DifferentiabilityError, DimensionMismatchError, RootFindingError
from .forward_sim import (
    PathEnsemble,
    RegionProduction,
    TimeGrid,
    WorldProduction,
    simulate_production,
)
from .lq_benchmark import LQParams, NodeSolution, step2_node_solution
from .measure import EmpiricalLaw
from .random_measure import JumpIntensity

_WEIGHT_TOL = 1e-12


@dataclass(frozen=True)
class PriceCurve:
    """Inverse demand curve; nondecreasing, with an optional derivative.

    ``fn`` maps net demand to the spot price.  ``derivative`` is required
    only by the centrally-controlled coupling (price impact term).
    """

    fn: Callable[[np.ndarray], np.ndarray]
    derivative: Callable[[np.ndarray], np.ndarray] | None = None
    intercept: float | None = None
    slope: float | None = None

    @staticmethod
    def linear(intercept: float, slope: float) -> "PriceCurve":
        if slope < 0.0:
            raise ValueError("price curve must be nondecreasing")
        return PriceCurve(
            fn=lambda x: intercept + slope * np.asarray(x, dtype=float),
            derivative=lambda x: np.full_like(np.asarray(x, dtype=float), slope),
            intercept=intercept,
            slope=slope,
        )

    @property
    def is_linear(self) -> bool:
        return self.intercept is not None and self.slope is not None

    def __call__(self, x):
        return self.fn(np.asarray(x, dtype=float))

    def diff(self, x):
        if self.derivative is None:
            raise DifferentiabilityError("price curve has no derivative")
        return self.derivative(np.asarray(x, dtype=float))


@dataclass(frozen=True)
class StorageCost:
    """Running storage cost a1 s + a2/2 s^2 + c/2 alpha^2 with a1<0, a2>0, c<0."""

    a1: float = -0.5
    a2: float = 1.0
    c: float = -0.5

    def __call__(self, s, alpha):
        return self.a1 * s + 0.5 * self.a2 * s**2 + 0.5 * self.c * alpha**2

    def d_alpha(self, s, alpha):
        del s
        return self.c * alpha

    def d_s(self, s, alpha):
        del alpha
        return self.a1 + self.a2 * s


@dataclass(frozen=True)
class TerminalCost:
    """Terminal storage cost b2/2 (s - b1/b2)^2 with b2 > 0."""

    b1: float = 1.5
    b2: float = 0.5

    def __call__(self, s):
        return 0.5 * self.b2 * (s - self.b1 / self.b2) ** 2

    def d_s(self, s):
        return self.b2 * s - self.b1


@dataclass(frozen=True)
class Region:
    """One region: production dynamics, economics, and its aggregate target."""

    production: RegionProduction = RegionProduction()
    weight: float = 1.0
    k_transmission: float = 1.0
    s0: float = 0.0
    nu_bar: float = 0.0

    def __post_init__(self):
        if self.k_transmission <= 0.0:
            raise ValueError("transmission constant must be positive")
        if not (0.0 < self.weight <= 1.0):
            raise ValueError("region weight must lie in (0, 1]")

    def transmission_cost(self, q, alpha):
        return 0.5 * self.k_transmission * (q - alpha) ** 2

    def d_alpha_transmission(self, q, alpha):
        return -self.k_transmission * (q - alpha)


@dataclass(frozen=True)
class GridModel:
    """Full description of the storage network."""

    regions: tuple[Region, ...] = (Region(),)
    world: WorldProduction = WorldProduction(q0=0.5)
    price: PriceCurve = field(default_factory=lambda: PriceCurve.linear(2.0, 0.5))
    storage: StorageCost = StorageCost()
    terminal: TerminalCost = TerminalCost()
    s_max: float = 1.0
    k_world: float = 0.0
    intensity: JumpIntensity | None = None
    common_intensity: JumpIntensity | None = None

    def __post_init__(self):
        w = sum(r.weight for r in self.regions)
        if abs(w - 1.0) > _WEIGHT_TOL:
            raise ValueError(f"region weights sum to {w!r}, expected 1")
        if self.s_max <= 0.0:
            raise ValueError("s_max must be positive")
        if self.storage.a2 <= 0.0 or self.terminal.b2 <= 0.0:
            raise ValueError("a2 and b2 must be positive")

    @property
    def weights(self) -> np.ndarray:
        return np.array([r.weight for r in self.regions])

    @property
    def n_regions(self) -> int:
        return len(self.regions)

    def world_transmission_cost(self, q):
        return 0.5 * self.k_world * q**2


@dataclass(frozen=True)
class GridPaths:
    """Simulated production paths plus the particle-to-region map."""

    q: np.ndarray
    q0: np.ndarray
    region_of: np.ndarray

    def conditional_means(self, n_regions: int) -> np.ndarray:
        """Per-region cross-particle means of Q, shape (n_regions, M+1)."""
        out = np.empty((n_regions, self.q.shape[1]))
        for g in range(n_regions):
            out[g] = self.q[self.region_of == g].mean(axis=0)
        return out


def simulate_grid(grid: GridModel, ensemble: PathEnsemble) -> GridPaths:
    """Run the production dynamics of every node and the rest of the world."""
    q, q0, region_of = simulate_production(
        [r.production for r in grid.regions], grid.world, ensemble, grid.weights
    )
    return GridPaths(q=q, q0=q0, region_of=region_of)


def spot_price_mf(
    q0_t: float,
    conditional_means,
    nu_bar,
    price: PriceCurve,
    weights=None,
) -> float:
    """Spot price p(-Q0 - sum_g w_g (E[Q^g | common] - nu_bar^g))."""
    means = np.atleast_1d(np.asarray(conditional_means, dtype=float))
    targets = np.atleast_1d(np.asarray(nu_bar, dtype=float))
    if means.shape != targets.shape:
        raise DimensionMismatchError("one aggregate target per region required")
    w = np.full(means.shape, 1.0 / means.size) if weights is None else np.asarray(weights, float)
    demand = -float(q0_t) - float(w @ (means - targets))
    return float(price(demand))


def spot_price_finite(
    q0_t: float,
    q_nodes,
    alpha_nodes,
    price: PriceCurve,
    eta: float | None = None,
) -> float:
    """Finite-population spot price p(-Q0 - eta sum_i (Q^i - alpha^i)).

    ``eta`` defaults to 1/N, the averaged-net-injection weighting whose
    large-N limit is :func:`spot_price_mf`.
    """
    q = np.asarray(q_nodes, dtype=float).reshape(-1)
    a = np.asarray(alpha_nodes, dtype=float).reshape(-1)
    if q.shape != a.shape:
        raise DimensionMismatchError("one control per node required")
    weight = 1.0 / q.size if eta is None else float(eta)
    demand = -float(q0_t) - weight * float(np.sum(q - a))
    return float(price(demand))


def _storage_from_control(alpha: np.ndarray, s0: np.ndarray | float, dt: float) -> np.ndarray:
    """Cumulative trapezoid of nodal control values: S_t = s0 + int alpha."""
    inc = 0.5 * (alpha[:, :-1] + alpha[:, 1:]) * dt
    s = np.concatenate([np.zeros((alpha.shape[0], 1)), np.cumsum(inc, axis=1)], axis=1)
    return s + np.atleast_1d(s0)[:, None] if np.ndim(s0) else s + s0


def _nu_bar_paths(grid: GridModel, n_steps: int) -> np.ndarray:
    return np.tile(np.array([r.nu_bar for r in grid.regions])[:, None], (1, n_steps + 1))


def cost_region(
    alpha: np.ndarray,
    nu_bar: np.ndarray | None,
    grid: GridModel,
    paths: GridPaths,
    time_grid: TimeGrid,
    region: int = 0,
) -> float:
    """Monte Carlo node cost for one region against an exogenous aggregate.

    ``alpha`` holds per-node nodal control values (N, M+1); ``nu_bar`` is
    the per-region aggregate path (n_regions, M+1), defaulting to the
    model's constant targets.  Time integration is trapezoidal.
    """
    if nu_bar is None:
        nu_bar = _nu_bar_paths(grid, time_grid.n_steps)
    sel = paths.region_of == region
    reg = grid.regions[region]
    q_sel = paths.q[sel]
    a_sel = alpha[sel]
    s = _storage_from_control(a_sel, reg.s0, time_grid.dt)
    means = paths.conditional_means(grid.n_regions)
    prices = np.array(
        [
            spot_price_mf(paths.q0[i], means[:, i], nu_bar[:, i], grid.price, grid.weights)
            for i in range(time_grid.n_steps + 1)
        ]
    )
    integrand = (
        prices[None, :] * (a_sel - q_sel)
        + reg.transmission_cost(q_sel, a_sel)
        + grid.storage(s, a_sel)
    )
    node_mean = integrand.mean(axis=0)
    running = float(np.trapezoid(node_mean, dx=time_grid.dt))
    return running + float(grid.terminal(s[:, -1]).mean())


def cost_central(
    alphas: np.ndarray,
    grid: GridModel,
    paths: GridPaths,
    time_grid: TimeGrid,
) -> float:
    """Central cost: world energy and transmission plus weighted node costs.

    The aggregate entering the price is the per-region cross-particle mean
    of the control itself.
    """
    means_q = paths.conditional_means(grid.n_regions)
    alpha_bar = np.empty((grid.n_regions, time_grid.n_steps + 1))
    for g in range(grid.n_regions):
        alpha_bar[g] = alphas[paths.region_of == g].mean(axis=0)
    prices = np.array(
        [
            spot_price_mf(paths.q0[i], means_q[:, i], alpha_bar[:, i], grid.price, grid.weights)
            for i in range(time_grid.n_steps + 1)
        ]
    )
    world_integrand = -prices * paths.q0 + grid.world_transmission_cost(paths.q0)
    total = float(np.trapezoid(world_integrand, dx=time_grid.dt))
    for g, region in enumerate(grid.regions):
        total += region.weight * cost_region(alphas, alpha_bar, grid, paths, time_grid, region=g)
    return total


def nash_residual(y, price, q, s, alpha, grid: GridModel, region: int = 0):
    """Best-response stationarity: y + price - k (q - alpha) + c alpha."""
    del s  # the storage marginal cost has no control term beyond c*alpha
    reg = grid.regions[region]
    return (
        np.asarray(y, dtype=float)
        + np.asarray(price, dtype=float)
        + reg.d_alpha_transmission(np.asarray(q, dtype=float), np.asarray(alpha, dtype=float))
        + grid.storage.d_alpha(0.0, np.asarray(alpha, dtype=float))
    )


def mfc_residual(y, q0, qbar, alpha_bar, q, s, alpha, grid: GridModel, region: int = 0):
    """Central-control stationarity with the price-impact correction.

    The price slot carries the impact-adjusted curve p(x) + p'(x) x (for a
    linear curve, the intercept plus twice the slope times demand), from
    which the displayed p'(x) x term is subtracted.
    """
    del s
    reg = grid.regions[region]
    w = grid.weights
    qbar = np.asarray(qbar, dtype=float)
    abar = np.asarray(alpha_bar, dtype=float)
    demand = -np.asarray(q0, dtype=float) - np.einsum("g,g...->...", w, qbar - abar)
    slope = grid.price.diff(demand)
    adjusted_price = grid.price(demand) + slope * demand
    return (
        np.asarray(y, dtype=float)
        + reg.d_alpha_transmission(np.asarray(q, dtype=float), np.asarray(alpha, dtype=float))
        + grid.storage.d_alpha(0.0, np.asarray(alpha, dtype=float))
        + adjusted_price
        - slope * demand
    )


@dataclass(frozen=True)
class BatteryReport:
    """How often and how far storage paths leave [0, s_max]."""

    violation_fraction: float
    max_excursion: float


def battery_constraint_report(s_paths: np.ndarray, s_max: float) -> BatteryReport:
    """Constraint monitoring only; trajectories are never clipped."""
    s = np.asarray(s_paths, dtype=float)
    outside = (s < 0.0) | (s > s_max)
    excursion = np.maximum(np.maximum(s - s_max, -s), 0.0)
    return BatteryReport(
        violation_fraction=float(outside.mean()),
        max_excursion=float(excursion.max()),
    )


def _solve_alpha_scalar(residual, lo: float = -1.0, hi: float = 1.0, tol: float = 1e-12):
    """Newton with bisection fallback for a strictly monotone scalar residual."""
    flo, fhi = residual(lo), residual(hi)
    grow = 0
    while flo * fhi > 0.0 and grow < 60:
        lo, hi = 2.0 * lo, 2.0 * hi
        flo, fhi = residual(lo), residual(hi)
        grow += 1
    if flo * fhi > 0.0:
        raise RootFindingError("could not bracket the coupling root")
    x = 0.5 * (lo + hi)
    for _ in range(100):
        fx = residual(x)
        if abs(fx) < tol:
            return x
        if flo * fx <= 0.0:
            hi = x
        else:
            lo, flo = x, fx
        h = max(1e-7, 1e-7 * abs(x))
        slope = (residual(x + h) - fx) / h
        cand = x - fx / slope if slope != 0.0 else 0.5 * (lo + hi)
        x = cand if lo < cand < hi else 0.5 * (lo + hi)
    raise RootFindingError("coupling root solve did not converge in 100 iterations")


def _world_path(grid: GridModel, horizon: float, n: int = 1024):
    """Deterministic rest-of-world path (RK4 on the drift); common noise must be off."""
    w = grid.world
    if (callable(w.sigma) or w.sigma != 0.0) or w.beta_scale != 0.0:
        raise AssemblyError("assembled instances require a noiseless rest-of-world")
    ts = np.linspace(0.0, horizon, n + 1)
    h = horizon / n
    vals = np.empty(n + 1)
    vals[0] = w.q0

    def mu(t, q):
        return float(w.mu(t, np.array([q]))[0]) if callable(w.mu) else float(w.mu)

    for i in range(n):
        t, q = ts[i], vals[i]
        k1 = mu(t, q)
        k2 = mu(t + 0.5 * h, q + 0.5 * h * k1)
        k3 = mu(t + 0.5 * h, q + 0.5 * h * k2)
        k4 = mu(t + h, q + h * k3)
        vals[i + 1] = q + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)

    def path(t: float) -> float:
        return float(np.interp(t, ts, vals))

    return path


def assemble_mfc_fbsde(grid: GridModel, mode: str, horizon: float = 1.0) -> CoefficientSet:
    """Coefficient set of the coupled storage system, state (S, Q).

    The forward drift of S is the control eliminated pointwise from the
    selected coupling condition; the backward driver and terminal map are
    the storage marginal costs.  ``mode='mfc'`` computes the aggregate
    control from the frozen law (closed form for a linear curve, scalar
    root solve otherwise) and then eliminates node-by-node; ``mode='nash'``
    prices against the model's exogenous aggregate targets.  Requires one
    region and no common noise.
    """
    if mode not in ("nash", "mfc"):
        raise AssemblyError(f"unknown mode {mode!r}")
    if grid.n_regions != 1:
        raise AssemblyError("assembly supports exactly one region")
    region = grid.regions[0]
    prod = region.production
    if not prod.common_noise_free:
        raise AssemblyError("assembled instances require the no-common-noise mode")
    k_t, c_a = region.k_transmission, grid.storage.c
    if k_t + c_a == 0.0:
        raise AssemblyError("degenerate coupling: k + c = 0")
    price = grid.price
    if mode == "mfc" and price.is_linear and k_t + c_a + price.slope == 0.0:
        raise AssemblyError("degenerate coupling: k + c + p1 = 0")
    q0_of_t = _world_path(grid, horizon)

    def aggregate_control(t: float, qbar: float, ybar: float) -> float:
        q0_t = q0_of_t(t)
        if price.is_linear:
            p0, p1 = price.intercept, price.slope
            b_t = p0 - p1 * q0_t - (p1 + k_t) * qbar
            return -(ybar + b_t) / (k_t + c_a + p1)

        def residual(a: float) -> float:
            demand = -q0_t - (qbar - a)
            return ybar - k_t * (qbar - a) + c_a * a + float(price(demand))

        return _solve_alpha_scalar(residual)

    def control(t, x, y, law: EmpiricalLaw) -> np.ndarray:
        q = x[:, 1]
        yv = y[:, 0]
        qbar = float(law.mean()[1])
        q0_t = q0_of_t(t)
        if mode == "nash":
            p_t = spot_price_mf(q0_t, [qbar], [region.nu_bar], price, grid.weights)
        else:
            ybar = float(law.mean()[2])
            abar = aggregate_control(t, qbar, ybar)
            p_t = float(price(-q0_t - (qbar - abar)))
        return (k_t * q - yv - p_t) / (k_t + c_a)

    marks = 0 if grid.intensity is None else grid.intensity.n_marks
    dims = Dims(x=2, y=1, w=1, marks=marks)
    x0 = EmpiricalLaw.point_mass([region.s0, prod.q0])

    def drift(t, x, y, z, k, law):
        del z, k
        q = x[:, 1]
        mu = prod.mu(t, q) if callable(prod.mu) else np.full_like(q, float(prod.mu))
        return np.stack([control(t, x, y, law), mu], axis=1)

    def diffusion(t, x, y, z, k, law):
        del y, z, k, law
        q = x[:, 1]
        sig = prod.sigma(t, q) if callable(prod.sigma) else np.full_like(q, float(prod.sigma))
        out = np.zeros(x.shape + (1,))
        out[:, 1, 0] = sig
        return out

    def jump(t, x, y, z, k, law, e):
        del t, y, z, k, law
        out = np.zeros_like(x)
        out[:, 1] = prod.beta_scale * float(e)
        return out

    def driver(t, x, y, z, k, law):
        del t, y, z, k, law
        s = x[:, 0]
        return grid.storage.d_s(s, 0.0)[:, None]

    def terminal(x, law):
        del law
        return grid.terminal.d_s(x[:, 0])[:, None]

    return CoefficientSet(
        drift=drift,
        diffusion=diffusion,
        jump=jump if marks else None,
        driver=driver,
        terminal=terminal,
        dims=dims,
        initial_law=x0,
    )


def nash_response_iteration(
    grid: GridModel,
    params: LQParams,
    n_iterations: int = 10,
    n_nodes: int = 101,
) -> tuple[np.ndarray, np.ndarray, list[NodeSolution]]:
    """Experimental aggregate fixed-point iteration (no convergence claim).

    In the deterministic regime, repeatedly solves the node best response
    against the current per-time aggregate target via the node-level closed
    form and replaces the target by the resulting control path.  Returns
    (times, target-path history, node solutions).
    """
    if grid.n_regions != 1:
        raise AssemblyError("the aggregate iteration supports exactly one region")
    params.validate_step2()
    region = grid.regions[0]
    ts = np.linspace(0.0, params.horizon, n_nodes)
    qbar = np.full(n_nodes, float(region.production.q0))
    q0_of_t = _world_path(grid, params.horizon)
    q0_vals = np.array([q0_of_t(float(t)) for t in ts])
    nu = np.full(n_nodes, region.nu_bar)
    history = [nu.copy()]
    solutions: list[NodeSolution] = []
    for _ in range(n_iterations):
        nu_now = nu.copy()

        def price_path(u, nu_ref=nu_now):
            u_arr = np.atleast_1d(np.asarray(u, dtype=float))
            target = np.interp(u_arr, ts, nu_ref)
            qb = np.interp(u_arr, ts, qbar)
            qz = np.interp(u_arr, ts, q0_vals)
            vals = np.asarray(grid.price(-qz - (qb - target)), dtype=float)
            return vals if np.ndim(u) else float(vals[0])

        node = step2_node_solution(params, s0=region.s0, price=price_path)
        solutions.append(node)
        scale = node.scale
        alpha = np.empty(n_nodes)
        for i, t in enumerate(ts):
            y_t = float(node.phi(t)) * node.storage(float(t)) + node.psi(float(t))
            sing = 0.0 if params.a1 == 0.0 else params.a1 / (scale * float(node.phi(t)))
            alpha[i] = -scale * (y_t + price_path(float(t)) + sing)
        nu = alpha
        history.append(nu.copy())
    return ts, np.array(history), solutions
