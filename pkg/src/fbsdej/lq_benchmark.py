"""Closed-form linear-quadratic benchmark used as the correctness oracle.

In the deterministic benchmark regime (all production noises zero and
exogenous deterministic production paths) every object of the one-region
linear-quadratic storage problem is a deterministic integral: the scalar
Riccati function has a closed form, the intercept solves a linear ODE, and
the optimal storage trajectory follows by quadrature.  A backward RK4
integrator for the Riccati equation serves as the independent oracle for
the closed form.

Two parameter branches exist and are validated separately: the aggregate
one (scale 1/(k + c + p1)) and the node-level one (scale -1/(k + c)); the
declared cost signs can make either invalid, in which case the request is
refused rather than patched.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.interpolate import CubicSpline

from .errors import DivergenceError, ParameterDomainError, SingularityError

PathLike = float | Callable[[np.ndarray], np.ndarray]

_RICCATI_CAP = 1e8


def _eval_path(p: PathLike, t: np.ndarray) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    if callable(p):
        return np.broadcast_to(np.asarray(p(t), dtype=float), t.shape).astype(float)
    return np.full_like(t, float(p))


@dataclass(frozen=True)
class LQParams:
    """Scalar parameters of the one-region linear-quadratic storage problem.

    ``p0``/``p1`` are the linear price intercept and slope; ``a1 < 0``,
    ``a2 > 0`` and ``c < 0`` weight the running storage cost, ``k > 0`` the
    transmission cost, ``b1``/``b2 > 0`` the terminal cost.  ``q0_path``
    and ``qbar_path`` are the deterministic rest-of-world and aggregate
    production paths of the benchmark regime (floats or callables of t).
    """

    p0: float = 2.0
    p1: float = 0.5
    a1: float = -0.5
    a2: float = 1.0
    c: float = -0.5
    k: float = 1.0
    b1: float = 1.5
    b2: float = 0.5
    horizon: float = 1.0
    s0: float = 0.0
    q0_path: PathLike = 0.5
    qbar_path: PathLike = 0.7
    resolution: int = 400

    def __post_init__(self):
        if self.horizon <= 0.0:
            raise ParameterDomainError("horizon must be positive")
        if self.resolution < 4:
            raise ParameterDomainError("resolution must be at least 4")

    @property
    def step1_scale(self) -> float:
        """Aggregate coupling scale 1/(k + c + p1)."""
        den = self.k + self.c + self.p1
        if den == 0.0 or not np.isfinite(den):
            raise ParameterDomainError("k + c + p1 must be nonzero and finite")
        return 1.0 / den

    @property
    def step2_scale(self) -> float:
        """Node-level coupling scale -1/(k + c)."""
        den = self.k + self.c
        if den == 0.0 or not np.isfinite(den):
            raise ParameterDomainError("k + c must be nonzero and finite")
        return -1.0 / den

    def validate_step1(self) -> None:
        scale = self.step1_scale
        if self.a2 != 0.0 and self.a2 * scale <= 0.0:
            raise ParameterDomainError(
                f"a2/(k+c+p1) = {self.a2 * scale!r} <= 0: aggregate branch invalid"
            )

    def validate_step2(self) -> None:
        scale = self.step2_scale
        if self.a2 * scale <= 0.0:
            raise ParameterDomainError(
                f"-a2/(k+c) = {self.a2 * scale!r} <= 0: node-level branch invalid"
            )


def _phi_closed(t, horizon: float, scale: float, a2: float, b2: float):
    """Closed-form Riccati solution for dphi/dt = scale phi^2 - a2, phi(T) = b2."""
    t_arr = np.asarray(t, dtype=float)
    tau = horizon - t_arr
    if a2 == 0.0:
        den = 1.0 + b2 * scale * tau
        if np.any(den == 0.0):
            bad = float(np.atleast_1d(t_arr)[np.atleast_1d(den) == 0.0][0])
            raise SingularityError(f"degenerate branch denominator vanishes at t={bad}", t=bad)
        out = b2 / den
    else:
        rho = np.sqrt(a2 * scale)
        em = np.exp(-rho * tau)
        ep = np.exp(rho * tau)
        num = em * (-b2 * scale + rho) - ep * (b2 * scale + rho)
        den = em * (-b2 * scale + rho) + ep * (b2 * scale + rho)
        if np.any(den == 0.0):
            bad = float(np.atleast_1d(t_arr)[np.atleast_1d(den) == 0.0][0])
            raise SingularityError(f"closed-form denominator vanishes at t={bad}", t=bad)
        out = -(rho / scale) * num / den
    # pin the terminal condition exactly (the quotient is off by an ulp)
    out = np.where(tau == 0.0, b2, out)
    return out if np.ndim(t) else float(out)


def phi_bar(t, params: LQParams):
    """Aggregate Riccati function; exact terminal value b2 at t = T."""
    params.validate_step1()
    return _phi_closed(t, params.horizon, params.step1_scale, params.a2, params.b2)


def riccati_rk4(params: LQParams, n_steps: int = 1000) -> tuple[np.ndarray, np.ndarray]:
    """Backward RK4 integration of the Riccati equation (independent oracle).

    Returns (times, values) on the uniform grid, integrating
    dphi/dt = scale phi^2 - a2 from phi(T) = b2.  Blows up loudly past 1e8.
    """
    if n_steps < 100:
        raise ValueError("use at least 100 steps for the oracle")
    params.validate_step1()
    scale, a2 = params.step1_scale, params.a2
    horizon = params.horizon
    h = horizon / n_steps

    def f(phi: float) -> float:
        return scale * phi * phi - a2

    values = np.empty(n_steps + 1)
    values[-1] = params.b2
    phi = params.b2
    for i in range(n_steps, 0, -1):
        k1 = f(phi)
        k2 = f(phi - 0.5 * h * k1)
        k3 = f(phi - 0.5 * h * k2)
        k4 = f(phi - h * k3)
        phi = phi - h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if not np.isfinite(phi) or abs(phi) > _RICCATI_CAP:
            raise DivergenceError(f"Riccati integration blew up near t={(i - 1) * h}")
        values[i - 1] = phi
    return np.linspace(0.0, horizon, n_steps + 1), values


def b_path(t, params: LQParams):
    """Exogenous drift of the effective price: p0 - p1 Q0(t) - (p1 + k) Qbar(t)."""
    t_arr = np.asarray(t, dtype=float)
    out = (
        params.p0
        - params.p1 * _eval_path(params.q0_path, t_arr)
        - (params.p1 + params.k) * _eval_path(params.qbar_path, t_arr)
    )
    return out if np.ndim(t) else float(out)


def price_bar(t, params: LQParams, phi=None):
    """Benchmark price -a1/(scale phi(t)) + b(t); refuses a vanishing phi."""
    scale = params.step1_scale
    phi_fn = (lambda u: phi_bar(u, params)) if phi is None else phi
    t_arr = np.asarray(t, dtype=float)
    phi_t = np.asarray(phi_fn(t_arr), dtype=float)
    if params.a1 != 0.0 and np.any(phi_t == 0.0):
        bad = float(np.atleast_1d(t_arr)[np.atleast_1d(phi_t) == 0.0][0])
        raise SingularityError(f"phi vanishes at t={bad}", t=bad)
    core = 0.0 if params.a1 == 0.0 else -params.a1 / (scale * phi_t)
    out = core + b_path(t_arr, params)
    return out if np.ndim(t) else float(out)


def _simpson_cumulative(fn, a: float, b: float, n: int):
    """Cumulative integral of fn at the n+1 uniform nodes of [a, b].

    Per-interval Simpson with midpoint evaluation (composite Simpson at
    half-step refinement), prefix-summed so every node gets a value.
    """
    xs = np.linspace(a, b, n + 1)
    mid = 0.5 * (xs[:-1] + xs[1:])
    fx = np.asarray(fn(xs), dtype=float)
    fm = np.asarray(fn(mid), dtype=float)
    h = (b - a) / n
    inc = h / 6.0 * (fx[:-1] + 4.0 * fm + fx[1:])
    return xs, np.concatenate([[0.0], np.cumsum(inc)])


def _simpson_total(values: np.ndarray, width: float) -> float:
    """Composite Simpson over coarse intervals given half-grid samples."""
    return float(width / 6.0 * np.sum(values[0:-1:2] + 4.0 * values[1::2] + values[2::2]))


def _intercept_generic(
    t: float,
    horizon: float,
    terminal: float,
    scale: float,
    phi_fn,
    price_fn,
    resolution: int,
) -> float:
    """-terminal e^{-int_t^T scale phi} - int_t^T scale phi e^{-int_t^u scale phi} price du."""
    m = max(2, int(np.ceil(resolution * max(horizon - t, 0.0) / horizon)))
    xs, acc = _simpson_cumulative(lambda u: scale * np.asarray(phi_fn(u), dtype=float), t, horizon, 2 * m)
    integrand = scale * np.asarray(phi_fn(xs), dtype=float) * np.exp(-acc) * np.asarray(
        price_fn(xs), dtype=float
    )
    outer = _simpson_total(integrand, (horizon - t) / m)
    return -terminal * float(np.exp(-acc[-1])) - outer


def _storage_generic(
    t: float,
    s0: float,
    a1: float,
    scale: float,
    phi_fn,
    price_fn,
    psi_fn,
    resolution: int,
    horizon: float,
) -> float:
    """s0 e^{-int_0^t scale phi} - scale int_0^t e^{-int_u^t scale phi} (price + psi + a1/(scale phi)) du."""
    if t <= 0.0:
        return float(s0)
    m = max(2, int(np.ceil(resolution * t / horizon)))
    xs, acc = _simpson_cumulative(lambda u: scale * np.asarray(phi_fn(u), dtype=float), 0.0, t, 2 * m)
    phi_u = np.asarray(phi_fn(xs), dtype=float)
    if a1 == 0.0:
        sing = np.zeros_like(phi_u)
    else:
        if np.any(phi_u == 0.0):
            bad = float(xs[np.atleast_1d(phi_u) == 0.0][0])
            raise SingularityError(f"phi vanishes at t={bad}", t=bad)
        sing = a1 / (scale * phi_u)
    psi_u = np.array([float(psi_fn(u)) for u in xs])
    integrand = (np.asarray(price_fn(xs), dtype=float) + psi_u + sing) * np.exp(acc)
    outer = _simpson_total(integrand, t / m)
    damp = float(np.exp(-acc[-1]))
    return s0 * damp - scale * damp * outer


def psi_bar(t: float, params: LQParams, phi=None, price=None, resolution: int | None = None) -> float:
    """Deterministic intercept of the affine value, by Simpson quadrature.

    Equals -b1 exactly at t = T (both integrals are empty).
    """
    phi_fn = (lambda u: phi_bar(u, params)) if phi is None else phi
    price_fn = (lambda u: price_bar(u, params, phi=phi)) if price is None else price
    res = params.resolution if resolution is None else resolution
    return _intercept_generic(
        float(t), params.horizon, params.b1, params.step1_scale, phi_fn, price_fn, res
    )


def s_bar(
    t: float,
    params: LQParams,
    phi=None,
    price=None,
    psi=None,
    resolution: int | None = None,
) -> float:
    """Optimal aggregate storage trajectory; starts at 0 exactly."""
    phi_fn = (lambda u: phi_bar(u, params)) if phi is None else phi
    price_fn = (lambda u: price_bar(u, params, phi=phi)) if price is None else price
    res = params.resolution if resolution is None else resolution
    psi_fn = (
        (lambda u: psi_bar(u, params, phi=phi, price=price, resolution=res)) if psi is None else psi
    )
    return _storage_generic(
        float(t), 0.0, params.a1, params.step1_scale, phi_fn, price_fn, psi_fn, res, params.horizon
    )


def y_bar(t: float, params: LQParams, resolution: int | None = None) -> float:
    """Affine value along the optimum: phi(t) S(t) + psi(t)."""
    return float(
        phi_bar(t, params) * s_bar(t, params, resolution=resolution)
        + psi_bar(t, params, resolution=resolution)
    )


def alpha_bar(t: float, params: LQParams, resolution: int | None = None) -> float:
    """Optimal aggregate control -scale (Y(t) + b(t))."""
    return float(-params.step1_scale * (y_bar(t, params, resolution=resolution) + b_path(t, params)))


def alpha_bar_diagnostics(
    t: float, params: LQParams, fd_step: float = 1e-4, resolution: int | None = None
) -> dict[str, float]:
    """Both control expressions plus the finite-difference storage slope.

    The two closed forms agree by the price identity; the slope check
    exercises the full quadrature pipeline.
    """
    primary = alpha_bar(t, params, resolution=resolution)
    y_val = y_bar(t, params, resolution=resolution)
    price_form = float(
        -params.step1_scale
        * (
            y_val
            + price_bar(t, params)
            + (0.0 if params.a1 == 0.0 else params.a1 / (params.step1_scale * phi_bar(t, params)))
        )
    )
    lo = max(t - fd_step, 0.0)
    hi = min(t + fd_step, params.horizon)
    slope = (
        s_bar(hi, params, resolution=resolution) - s_bar(lo, params, resolution=resolution)
    ) / (hi - lo)
    return {
        "alpha": primary,
        "alpha_price_form": price_form,
        "storage_slope_fd": slope,
        "form_gap": abs(primary - price_form),
        "slope_gap": abs(primary - slope),
    }


@dataclass(frozen=True)
class ClosedFormSolution:
    """Tabulated benchmark trajectories on a uniform output grid."""

    params: LQParams
    times: np.ndarray
    phi: np.ndarray
    psi: np.ndarray
    price: np.ndarray
    storage: np.ndarray
    alpha: np.ndarray
    value: np.ndarray


def _pairwise_simpson_prefix(values: np.ndarray, width: float) -> np.ndarray:
    """Prefix Simpson sums over consecutive point pairs of a refined grid.

    ``values`` samples a grid twice as fine as the target one; entry i of
    the result is the composite Simpson integral up to target node i.
    """
    inc = width / 6.0 * (values[0:-1:2] + 4.0 * values[1::2] + values[2::2])
    return np.concatenate([[0.0], np.cumsum(inc)])


def tabulate_solution(params: LQParams, n_nodes: int = 201) -> ClosedFormSolution:
    """Evaluate the Step-1 objects on a uniform grid of ``n_nodes`` points.

    Runs the same composite-Simpson quadratures as the pointwise operations
    but shares the cumulative integrals across all nodes, so the whole
    table costs O(resolution) instead of O(n_nodes * resolution^2).
    """
    if n_nodes < 2:
        raise ValueError("need at least two output nodes")
    horizon = params.horizon
    scale = params.step1_scale
    per = max(1, int(np.ceil(params.resolution / (n_nodes - 1))))
    n_master = (n_nodes - 1) * per
    # exponent integral on the quarter grid so every later level has midpoints
    _, acc_q = _simpson_cumulative(
        lambda u: scale * np.asarray(phi_bar(u, params), dtype=float), 0.0, horizon, 4 * n_master
    )
    xs_half = np.linspace(0.0, horizon, 2 * n_master + 1)
    acc_half = acc_q[0::2]
    phi_q = np.asarray(phi_bar(np.linspace(0.0, horizon, 4 * n_master + 1), params), dtype=float)
    price_q = np.asarray(
        price_bar(np.linspace(0.0, horizon, 4 * n_master + 1), params), dtype=float
    )
    # intercept: tail integral of scale*phi*exp(-acc)*price, cumulated on the half grid
    f_q = scale * phi_q * np.exp(-acc_q) * price_q
    cum_f_half = _pairwise_simpson_prefix(f_q, horizon / (2 * n_master))
    tail_f = cum_f_half[-1] - cum_f_half
    psi_half = -params.b1 * np.exp(-(acc_half[-1] - acc_half)) + (-np.exp(acc_half) * tail_f)
    # storage: forward integral of (price + psi + a1/(scale*phi)) * exp(acc)
    phi_half = phi_q[0::2]
    price_half = price_q[0::2]
    if params.a1 == 0.0:
        sing_half = np.zeros_like(phi_half)
    else:
        if np.any(phi_half == 0.0):
            bad = float(xs_half[phi_half == 0.0][0])
            raise SingularityError(f"phi vanishes at t={bad}", t=bad)
        sing_half = params.a1 / (scale * phi_half)
    g_half = (price_half + psi_half + sing_half) * np.exp(acc_half)
    cum_g = _pairwise_simpson_prefix(g_half, horizon / n_master)
    acc_master = acc_half[0::2]
    storage_master = -scale * np.exp(-acc_master) * cum_g

    sel = slice(0, n_master + 1, per)
    ts = np.linspace(0.0, horizon, n_nodes)
    phi = phi_half[0::2][sel]
    psi = psi_half[0::2][sel]
    price = price_half[0::2][sel]
    storage = storage_master[sel]
    value = phi * storage + psi
    alpha = -scale * (value + np.asarray(b_path(ts, params), dtype=float))
    return ClosedFormSolution(
        params=params, times=ts, phi=phi, psi=psi, price=price, storage=storage,
        alpha=alpha, value=value,
    )


@dataclass(frozen=True)
class NodeSolution:
    """Node-level closed-form objects (phi, psi, storage) as callables."""

    scale: float
    phi: Callable[[np.ndarray], np.ndarray]
    psi: Callable[[float], float]
    storage: Callable[[float], float]


def step2_node_solution(
    params: LQParams,
    s0: float | None = None,
    price=None,
    resolution: int | None = None,
) -> NodeSolution:
    """Node-level solution with the -1/(k + c) coupling scale.

    The price path defaults to the node-level expression built from the
    aggregate optimum, p0 - k qbar - 2 p1 (q0 + qbar - alpha) - a1/(scale phi);
    pass ``price`` to override (the aggregate price recovers the Step-1
    trajectories when the two scales coincide numerically).
    """
    params.validate_step2()
    scale = params.step2_scale
    res = params.resolution if resolution is None else resolution
    start = params.s0 if s0 is None else float(s0)

    def phi_fn(u):
        return _phi_closed(u, params.horizon, scale, params.a2, params.b2)

    if price is None:
        params.validate_step1()
        # tabulate the aggregate optimum once; a cubic fit keeps the price
        # path smooth at quadrature accuracy
        table = tabulate_solution(params, res + 1)
        alpha_fit = CubicSpline(table.times, table.alpha)

        def price_fn(u):
            u_arr = np.asarray(u, dtype=float)
            alpha = alpha_fit(u_arr)
            qbar = _eval_path(params.qbar_path, u_arr)
            q0 = _eval_path(params.q0_path, u_arr)
            phi_u = np.asarray(phi_fn(u_arr), dtype=float)
            sing = 0.0 if params.a1 == 0.0 else params.a1 / (scale * phi_u)
            return params.p0 - params.k * qbar - 2.0 * params.p1 * (q0 + qbar - alpha) - sing
    else:
        price_fn = price

    def psi_fn(t: float) -> float:
        return _intercept_generic(float(t), params.horizon, params.b1, scale, phi_fn, price_fn, res)

    def storage_fn(t: float) -> float:
        return _storage_generic(
            float(t), start, params.a1, scale, phi_fn, price_fn, psi_fn, res, params.horizon
        )

    return NodeSolution(scale=scale, phi=phi_fn, psi=psi_fn, storage=storage_fn)
