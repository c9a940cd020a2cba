"""Coefficient sets, monotonicity checking, and contraction certificates.

One :class:`CoefficientSet` fully describes a coupled forward-backward
instance: drift/diffusion/jump for the forward state, driver and terminal
map for the backward value, plus declared dimensions and the initial law.
Evaluators are black boxes operating on particle batches; Lipschitz
constants are user-declared (optionally audited by sampled difference
quotients) because global constants cannot be extracted from black boxes.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .errors import DimensionMismatchError
from .measure import EmpiricalLaw
from .random_measure import JumpIntensity

Evaluator = Callable[..., np.ndarray]


@dataclass(frozen=True)
class Dims:
    """Array dimensions of one instance: state, value, Brownian, mark count."""

    x: int
    y: int
    w: int
    marks: int = 0

    def __post_init__(self):
        if min(self.x, self.y, self.w) < 1 or self.marks < 0:
            raise DimensionMismatchError("dims must satisfy x,y,w >= 1 and marks >= 0")


@dataclass(frozen=True)
class CoefficientSet:
    """Black-box evaluators for one instance.

    Shapes (batched over ``n`` particles):

    - ``drift(t, x, y, z, k, law) -> (n, dx)``
    - ``diffusion(t, x, y, z, k, law) -> (n, dx, dw)``
    - ``jump(t, x, y, z, k, law, e) -> (n, dx)`` for a single mark value ``e``
    - ``driver(t, x, y, z, k, law) -> (n, dy)``
    - ``terminal(x, law) -> (n, dy)``

    with ``x: (n, dx)``, ``y: (n, dy)``, ``z: (n, dy, dw)``,
    ``k: (n, dy, marks)``.  Evaluators must be deterministic and total.
    """

    drift: Evaluator
    diffusion: Evaluator
    driver: Evaluator
    terminal: Evaluator
    dims: Dims
    jump: Evaluator | None = None
    initial_law: EmpiricalLaw = field(default_factory=lambda: EmpiricalLaw.point_mass([0.0]))

    def __post_init__(self):
        if self.initial_law.dim != self.dims.x:
            raise DimensionMismatchError(
                f"initial law dim {self.initial_law.dim} != state dim {self.dims.x}"
            )
        if self.dims.marks > 0 and self.jump is None:
            raise DimensionMismatchError("marks declared but no jump evaluator")


@dataclass(frozen=True)
class LipschitzProfile:
    """Declared Lipschitz constants of one coefficient in each argument."""

    x: float = 0.0
    y: float = 0.0
    z: float = 0.0
    k: float = 0.0
    law: float = 0.0

    def __post_init__(self):
        for name in ("x", "y", "z", "k", "law"):
            if getattr(self, name) < 0.0:
                raise ValueError(f"Lipschitz constant {name} must be nonnegative")


@dataclass(frozen=True)
class LipschitzConstants:
    """Declared constants of one instance.

    ``operator_decay`` and ``terminal_growth`` are the two monotonicity
    strengths; ``a_priori_bound`` is the generic estimate constant used to
    default the perturbation weight of the decoupled scheme.
    """

    drift: LipschitzProfile = LipschitzProfile()
    driver: LipschitzProfile = LipschitzProfile()
    diffusion: LipschitzProfile = LipschitzProfile()
    jump: LipschitzProfile = LipschitzProfile()
    terminal_x: float = 0.0
    terminal_law: float = 0.0
    operator_decay: float = 1.0
    terminal_growth: float = 1.0
    a_priori_bound: float = 1.0

    def __post_init__(self):
        if min(self.terminal_x, self.terminal_law) < 0.0:
            raise ValueError("terminal constants must be nonnegative")
        if min(self.operator_decay, self.terminal_growth, self.a_priori_bound) <= 0.0:
            raise ValueError("monotonicity and estimate constants must be positive")


@dataclass(frozen=True)
class ContractionConstants:
    """Certificate emitted by the contraction-constant computations.

    The ``theta*`` block comes with the strong-monotonicity estimates, the
    ``upsilon*`` block with the weak ones.  ``gamma``/``theta`` are the scheme
    constants from the perturbation argument; the free parameters minimizing
    ``theta/gamma`` are recorded.  ``valid`` requires ``gamma > 0`` and
    ``theta < gamma`` (strong case) or all uniqueness thresholds satisfied
    (weak case).
    """

    theta1: float | None = None
    theta2: float | None = None
    theta1_bar: float | None = None
    theta2_bar: float | None = None
    upsilon1: float | None = None
    upsilon2: float | None = None
    upsilon3: float | None = None
    upsilon4: float | None = None
    upsilon_nu: float | None = None
    gamma: float | None = None
    theta: float | None = None
    epsilon: float | None = None
    epsilon_tilde: float | None = None
    kappa: float | None = None
    alpha_y: float | None = None
    rho_y: float | None = None
    delta: float | None = None
    ratio: float | None = None
    growth_factor: float | None = None
    growth_factor_standard: float | None = None
    threshold_y: bool | None = None
    threshold_z: bool | None = None
    threshold_k: bool | None = None
    terminal_gap: float | None = None
    valid: bool = False


@dataclass(frozen=True)
class SamplerConfig:
    """Randomized falsification settings for the assumption checks."""

    n_samples: int = 200
    box: float = 2.0
    law_points: int = 8
    seed: int = 0
    slack: float = 1e-9


@dataclass(frozen=True)
class CheckReport:
    """Outcome of a sampled assumption check.

    A pass is falsification-based evidence on the drawn samples, not a
    proof.  Margins are signed so that nonpositive means satisfied.
    """

    assumption: str
    passed: bool
    operator_margin: float
    terminal_margin: float
    n_samples: int
    n_failures: int
    notes: tuple[str, ...] = ()


def _as_batch(u, dims: Dims):
    x, y, z, k = u
    x = np.asarray(x, dtype=float).reshape(1, dims.x)
    y = np.asarray(y, dtype=float).reshape(1, dims.y)
    z = np.asarray(z, dtype=float).reshape(1, dims.y, dims.w)
    k = np.asarray(k, dtype=float).reshape(1, dims.y, max(dims.marks, 0))
    return x, y, z, k


def monotonicity_operator(
    t: float,
    u,
    u_prime,
    nu: EmpiricalLaw,
    coeffs: CoefficientSet,
    intensity: JumpIntensity | None = None,
) -> float:
    """Pairing of coefficient differences with state differences.

    For ``u = (x, y, z, k)`` and ``u' = (x', y', z', k')`` evaluated at the
    shared ``(t, nu)``:

        [b(u)-b(u')].(y-y') + [h(u)-h(u')].(x-x') + [sigma(u)-sigma(u')].(z-z')
        + sum_j [beta(u,e_j)-beta(u',e_j)].(k-k')(e_j) rate_j

    The state and value dimensions must agree for the pairings to typecheck.
    """
    dims = coeffs.dims
    if dims.x != dims.y:
        raise DimensionMismatchError("the operator pairing requires dx == dy")
    xa, ya, za, ka = _as_batch(u, dims)
    xb, yb, zb, kb = _as_batch(u_prime, dims)
    args_a = (t, xa, ya, za, ka, nu)
    args_b = (t, xb, yb, zb, kb, nu)
    db = coeffs.drift(*args_a) - coeffs.drift(*args_b)
    dh = coeffs.driver(*args_a) - coeffs.driver(*args_b)
    ds = coeffs.diffusion(*args_a) - coeffs.diffusion(*args_b)
    total = float(db[0] @ (ya - yb)[0])
    total += float(dh[0] @ (xa - xb)[0])
    total += float(np.sum(ds[0] * (za - zb)[0]))
    if dims.marks and intensity is not None and coeffs.jump is not None:
        for j, (e, rate) in enumerate(zip(intensity.marks, intensity.rates)):
            dbeta = coeffs.jump(*args_a, e) - coeffs.jump(*args_b, e)
            total += float(dbeta[0] @ (ka - kb)[0, :, j]) * float(rate)
    return total


def _k_seminorm(dk: np.ndarray, intensity: JumpIntensity | None) -> float:
    """Rate-weighted mark norm |k|_t = sqrt(sum_j |k(e_j)|^2 rate_j)."""
    if intensity is None or dk.size == 0:
        return 0.0
    return float(np.sqrt(np.sum(np.sum(dk**2, axis=0) * intensity.rates)))


def _draw_samples(coeffs: CoefficientSet, sampler: SamplerConfig):
    dims = coeffs.dims
    rng = np.random.Generator(np.random.Philox(key=[sampler.seed, 0]))
    box = sampler.box
    for _ in range(sampler.n_samples):
        t = float(rng.uniform(0.0, 1.0))
        cloud = rng.uniform(-box, box, size=(sampler.law_points, dims.x + dims.y))
        nu = EmpiricalLaw(cloud)
        def one():
            return (
                rng.uniform(-box, box, size=dims.x),
                rng.uniform(-box, box, size=dims.y),
                rng.uniform(-box, box, size=(dims.y, dims.w)),
                rng.uniform(-box, box, size=(dims.y, dims.marks)),
            )
        yield t, one(), one(), nu


def _run_check(
    assumption: str,
    coeffs: CoefficientSet,
    constants: LipschitzConstants,
    sampler: SamplerConfig,
    intensity: JumpIntensity | None,
    extra_samples: Sequence | None,
    notes: tuple[str, ...],
) -> CheckReport:
    k_dec = constants.operator_decay
    k_term = constants.terminal_growth
    worst_op = -np.inf
    worst_term = np.inf
    failures = 0
    samples = list(_draw_samples(coeffs, sampler))
    if extra_samples:
        samples.extend(extra_samples)
    for t, u, up, nu in samples:
        a_val = monotonicity_operator(t, u, up, nu, coeffs, intensity)
        dx = np.asarray(u[0], dtype=float) - np.asarray(up[0], dtype=float)
        if assumption == "H1":
            margin = a_val + k_dec * float(dx @ dx)
        else:
            dy = np.asarray(u[1], dtype=float) - np.asarray(up[1], dtype=float)
            dz = np.asarray(u[2], dtype=float) - np.asarray(up[2], dtype=float)
            dk = np.asarray(u[3], dtype=float) - np.asarray(up[3], dtype=float)
            decay = (
                float(dx @ dx)
                + float(dy @ dy)
                + float(np.sum(dz**2))
                + _k_seminorm(dk, intensity)  # unsquared mark term, as stated
            )
            margin = a_val + k_dec * decay
        worst_op = max(worst_op, margin)
        if margin > sampler.slack:
            failures += 1
        xa = np.asarray(u[0], dtype=float).reshape(1, -1)
        xb = np.asarray(up[0], dtype=float).reshape(1, -1)
        mu = EmpiricalLaw(nu.points[:, : coeffs.dims.x])
        gap = float((coeffs.terminal(xa, mu) - coeffs.terminal(xb, mu))[0] @ dx)
        if assumption == "H1":
            tmargin = gap - k_term * float(dx @ dx)  # needs >= 0
            worst_term = min(worst_term, tmargin)
            if tmargin < -sampler.slack:
                failures += 1
        else:
            tmargin = k_term * float(dx @ dx) - gap  # upper bound instead
            worst_term = min(worst_term, tmargin)
            if tmargin < -sampler.slack:
                failures += 1
    return CheckReport(
        assumption=assumption,
        passed=failures == 0,
        operator_margin=float(worst_op),
        terminal_margin=float(worst_term),
        n_samples=len(samples),
        n_failures=failures,
        notes=notes,
    )


def check_h1(
    coeffs: CoefficientSet,
    constants: LipschitzConstants,
    sampler: SamplerConfig = SamplerConfig(),
    intensity: JumpIntensity | None = None,
    extra_samples: Sequence | None = None,
) -> CheckReport:
    """Sampled falsification of the strong monotonicity assumption.

    Requires the operator to decay at least like ``-operator_decay |dx|^2``
    and the terminal map to grow at least like ``terminal_growth |dx|^2``.
    """
    return _run_check("H1", coeffs, constants, sampler, intensity, extra_samples, ())


def check_h2(
    coeffs: CoefficientSet,
    constants: LipschitzConstants,
    sampler: SamplerConfig = SamplerConfig(),
    intensity: JumpIntensity | None = None,
    extra_samples: Sequence | None = None,
) -> CheckReport:
    """Sampled falsification of the weak (all-component) monotonicity assumption."""
    notes = (
        "mark-component decay uses the unsquared seminorm |k-k'|_t, as stated",
    )
    return _run_check("H2", coeffs, constants, sampler, intensity, extra_samples, notes)


def _theta_block(c: LipschitzConstants, horizon: float):
    h = c.driver
    growth = h.x + h.z**2 + h.k**2 + 2.0 * h.law + 2.0 * h.y
    theta1 = np.exp(growth * horizon) * (c.terminal_x + c.terminal_law) ** 2
    theta2 = np.exp(growth * horizon) * (h.x + h.law)
    theta1_bar = 2.0 * growth * theta1 + 2.0 * (c.terminal_x + c.terminal_law) ** 2
    theta2_bar = 2.0 * growth * theta2 + 2.0 * (h.x + h.law)
    return float(theta1), float(theta2), float(theta1_bar), float(theta2_bar)


_GRID_FREE = np.logspace(-3.0, 3.0, 25)
_GRID_DELTA = np.logspace(-3.0, 0.0, 25)


def contraction_constants_h1(
    constants: LipschitzConstants, horizon: float
) -> ContractionConstants:
    """Scheme constants under strong monotonicity, free parameters grid-searched.

    ``gamma`` collects the coercive coefficients of the perturbation
    estimate, ``theta`` the carry-over coefficients; free parameters
    ``(epsilon, epsilon_tilde, kappa, delta)`` are chosen on a coarse
    log-spaced grid to minimize ``theta/gamma``.  A certificate with
    ``theta >= gamma`` is returned with ``valid=False`` rather than raised.
    """
    if horizon <= 0.0:
        raise ValueError("horizon must be positive")
    theta1, theta2, theta1_bar, theta2_bar = _theta_block(constants, horizon)
    k_dec = constants.operator_decay
    k_term = constants.terminal_growth
    c_g = constants.terminal_law
    c_h, c_f = constants.driver.law, constants.drift.law
    c_s, c_b = constants.diffusion.law, constants.jump.law
    nu_sum = c_h + c_f + c_s + c_b

    def scheme_constants(eps, epst, kap, dlt):
        damp = dlt * (1.0 - kap / 2.0)
        terms = np.broadcast_arrays(
            k_term - c_g * eps / 2.0,
            k_dec - epst * c_h / 2.0,
            damp - epst * c_f / 2.0,
            damp - epst * c_s / 2.0,
            damp - epst * c_b / 2.0,
        )
        gamma = np.minimum.reduce(np.stack(terms))
        theta = np.maximum(
            c_g / (2.0 * eps),
            -nu_sum / (2.0 * eps) + dlt / (2.0 * kap),  # sign as stated
        )
        return gamma, theta

    shape = (_GRID_FREE.size, _GRID_FREE.size, _GRID_FREE.size, _GRID_DELTA.size)
    gamma, theta = scheme_constants(
        _GRID_FREE[:, None, None, None],
        _GRID_FREE[None, :, None, None],
        _GRID_FREE[None, None, :, None],
        _GRID_DELTA[None, None, None, :],
    )
    gamma = np.broadcast_to(gamma, shape)
    theta = np.broadcast_to(theta, shape)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(gamma > 0.0, theta / gamma, np.inf)
    idx = np.unravel_index(int(np.argmin(ratio)), shape)
    best_ratio = float(ratio[idx])
    best = dict(
        epsilon=float(_GRID_FREE[idx[0]]),
        epsilon_tilde=float(_GRID_FREE[idx[1]]),
        kappa=float(_GRID_FREE[idx[2]]),
        delta=float(_GRID_DELTA[idx[3]]),
    )
    g, th = scheme_constants(best["epsilon"], best["epsilon_tilde"], best["kappa"], best["delta"])
    g, th = float(g), float(th)
    return ContractionConstants(
        theta1=theta1,
        theta2=theta2,
        theta1_bar=theta1_bar,
        theta2_bar=theta2_bar,
        gamma=g,
        theta=th,
        ratio=best_ratio if np.isfinite(best_ratio) else None,
        valid=bool(g > 0.0 and th < g),
        **best,
    )


def _growth_factor(upsilon1: float, horizon: float) -> tuple[float, float]:
    """Printed factor (e^{T u} - u)/u and the standard (e^{T u} - 1)/u.

    Both degenerate at u = 0; the limit of the standard factor, T, is
    returned for each (the printed form has no finite limit there).
    """
    if upsilon1 == 0.0:
        return horizon, horizon
    printed = (np.exp(horizon * upsilon1) - upsilon1) / upsilon1
    standard = (np.exp(horizon * upsilon1) - 1.0) / upsilon1
    return float(printed), float(standard)


def contraction_constants_h2(
    constants: LipschitzConstants, horizon: float
) -> ContractionConstants:
    """Growth constants and uniqueness thresholds under weak monotonicity.

    Computes the four growth coefficients, the law-coupling coefficient,
    the Gronwall factor (as stated, with the standard variant alongside),
    and evaluates the three decay thresholds plus the terminal gap; the
    certificate is valid when all four hold.
    """
    if horizon <= 0.0:
        raise ValueError("horizon must be positive")
    f, s, b = constants.drift, constants.diffusion, constants.jump
    u1 = (
        2.0 * f.x + f.y + f.z + f.k
        + 5.0 * s.x**2 + 5.0 * b.x**2
        + 2.0 * f.law + 5.0 * s.law**2 + 5.0 * b.law**2
    )
    u2 = f.y + 5.0 * s.y**2 + 5.0 * b.y**2 + f.law + 5.0 * s.law**2 + 5.0 * b.law**2
    u3 = f.z + 5.0 * s.z**2 + 5.0 * b.x**2  # x-constant in the jump term, as stated
    u4 = f.k + 5.0 * s.k**2 + 5.0 * b.k**2
    u_nu = constants.driver.law + 0.5 * (f.law + s.law + b.law)
    printed, standard = _growth_factor(u1, horizon)
    k_dec = constants.operator_decay
    thr_y = k_dec > u_nu * printed * u2 + (f.law + 0.5 * (constants.driver.law + s.law + b.law))
    thr_z = k_dec > u_nu * printed * u3 + s.law / 2.0
    thr_k = k_dec > u_nu * printed * u4 + b.law / 2.0
    gap = constants.terminal_growth - constants.terminal_law
    return ContractionConstants(
        upsilon1=float(u1),
        upsilon2=float(u2),
        upsilon3=float(u3),
        upsilon4=float(u4),
        upsilon_nu=float(u_nu),
        growth_factor=printed,
        growth_factor_standard=standard,
        threshold_y=bool(thr_y),
        threshold_z=bool(thr_z),
        threshold_k=bool(thr_k),
        terminal_gap=float(gap),
        valid=bool(thr_y and thr_z and thr_k and gap > 0.0),
    )


def audit_lipschitz(
    coeffs: CoefficientSet,
    constants: LipschitzConstants,
    sampler: SamplerConfig = SamplerConfig(),
    intensity: JumpIntensity | None = None,
) -> dict[str, dict[str, tuple[float, float]]]:
    """Max observed difference quotient vs declared constant, per argument.

    Sampling evidence only; quotients can exceed declared constants when a
    declaration is wrong, never prove it right.
    """
    dims = coeffs.dims
    rng = np.random.Generator(np.random.Philox(key=[sampler.seed, 1]))
    box = sampler.box
    names = {"drift": coeffs.drift, "driver": coeffs.driver, "diffusion": coeffs.diffusion}
    declared = {
        "drift": constants.drift,
        "driver": constants.driver,
        "diffusion": constants.diffusion,
    }
    observed: dict[str, dict[str, float]] = {n: {a: 0.0 for a in "xyzk"} for n in names}
    for _ in range(sampler.n_samples):
        t = float(rng.uniform(0.0, 1.0))
        nu = EmpiricalLaw(rng.uniform(-box, box, size=(sampler.law_points, dims.x + dims.y)))
        base = (
            rng.uniform(-box, box, size=(1, dims.x)),
            rng.uniform(-box, box, size=(1, dims.y)),
            rng.uniform(-box, box, size=(1, dims.y, dims.w)),
            rng.uniform(-box, box, size=(1, dims.y, dims.marks)),
        )
        for slot, arg in enumerate("xyzk"):
            bumped = list(base)
            step = rng.uniform(-box, box, size=base[slot].shape)
            bumped[slot] = base[slot] + step
            denom = float(np.linalg.norm(step))
            if denom == 0.0:
                continue
            for name, fn in names.items():
                d = fn(t, *base, nu) - fn(t, *bumped, nu)
                q = float(np.linalg.norm(d)) / denom
                observed[name][arg] = max(observed[name][arg], q)
    report: dict[str, dict[str, tuple[float, float]]] = {}
    for name in names:
        prof = declared[name]
        report[name] = {
            arg: (observed[name][arg], getattr(prof, arg)) for arg in "xyzk"
        }
    return report


def with_initial_law(coeffs: CoefficientSet, law: EmpiricalLaw) -> CoefficientSet:
    return replace(coeffs, initial_law=law)
