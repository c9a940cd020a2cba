"""Built-in coefficient families selectable from run configs.

Each builder returns a :class:`CoefficientSet` plus the declared constants
used by the assumption checks and certificates.  Declared law-Lipschitz
constants are upper bounds; coefficients that ignore the law satisfy any
nonnegative bound, which lets one instance double as a certificate example
without changing its dynamics.
"""
from __future__ import annotations

import numpy as np

from .coefficients import CoefficientSet, Dims, LipschitzConstants, LipschitzProfile
from .forward_sim import RegionProduction, WorldProduction
from .lq_benchmark import LQParams
from .measure import EmpiricalLaw
from .smart_grid import (
    GridModel,
    PriceCurve,
    Region,
    StorageCost,
    TerminalCost,
    assemble_mfc_fbsde,
)


def zero_instance() -> tuple[CoefficientSet, LipschitzConstants]:
    """Everything zero; the damped iterations converge in one step."""
    dims = Dims(x=1, y=1, w=1, marks=0)

    def zfwd(t, x, y, z, k, law):
        del t, y, z, k, law
        return np.zeros_like(x)

    def zdiff(t, x, y, z, k, law):
        del t, y, z, k, law
        return np.zeros(x.shape + (1,))

    def zdrv(t, x, y, z, k, law):
        del t, x, z, k, law
        return np.zeros_like(y)

    def zterm(x, law):
        del law
        return np.zeros_like(x)

    coeffs = CoefficientSet(
        drift=zfwd, diffusion=zdiff, driver=zdrv, terminal=zterm, dims=dims,
        initial_law=EmpiricalLaw.point_mass([0.0]),
    )
    return coeffs, LipschitzConstants()


def linear_monotone_instance(
    sigma: float = 0.1,
    x0: float = 1.0,
    mf_drift: float = 0.2,
    declared_law_lip: float = 0.5,
    declared_terminal_law_lip: float = 0.1,
) -> tuple[CoefficientSet, LipschitzConstants]:
    """Scalar instance with drift -y + mf_drift E[x], driver -x, terminal x.

    Strongly monotone with unit decay and growth constants: the operator
    evaluates to -(dy^2 + dx^2) at a shared law, and the terminal map is
    the identity.  The declared law constants cover the mean coupling and
    feed the contraction certificate.
    """
    if abs(mf_drift) > declared_law_lip:
        raise ValueError("declared law constant must dominate the mean coupling")
    dims = Dims(x=1, y=1, w=1, marks=0)

    def drift(t, x, y, z, k, law):
        del t, x, z, k
        return -y + mf_drift * float(law.mean()[0])

    def diffusion(t, x, y, z, k, law):
        del t, y, z, k, law
        return np.full(x.shape + (1,), sigma)

    def driver(t, x, y, z, k, law):
        del t, y, z, k, law
        return -x

    def terminal(x, law):
        del law
        return x.copy()

    coeffs = CoefficientSet(
        drift=drift, diffusion=diffusion, driver=driver, terminal=terminal, dims=dims,
        initial_law=EmpiricalLaw.point_mass([x0]),
    )
    constants = LipschitzConstants(
        drift=LipschitzProfile(y=1.0, law=declared_law_lip),
        driver=LipschitzProfile(x=1.0, law=declared_law_lip),
        diffusion=LipschitzProfile(law=declared_law_lip),
        jump=LipschitzProfile(law=declared_law_lip),
        terminal_x=1.0,
        terminal_law=declared_terminal_law_lip,
        operator_decay=1.0,
        terminal_growth=1.0,
        a_priori_bound=2.0,
    )
    return coeffs, constants


def weak_monotone_instance(sigma_slope: float = -0.5) -> tuple[CoefficientSet, LipschitzConstants]:
    """Scalar instance whose diffusion leans on z, decaying in all components.

    With drift -y, driver -x and diffusion ``sigma_slope * z`` the operator
    equals -(dx^2 + dy^2) + sigma_slope |dz|^2, so the all-component decay
    holds with constant min(1, -sigma_slope).
    """
    if sigma_slope >= 0.0:
        raise ValueError("sigma_slope must be negative for all-component decay")
    dims = Dims(x=1, y=1, w=1, marks=0)

    def drift(t, x, y, z, k, law):
        del t, x, z, k, law
        return -y

    def diffusion(t, x, y, z, k, law):
        del t, x, y, k, law
        return sigma_slope * z

    def driver(t, x, y, z, k, law):
        del t, y, z, k, law
        return -x

    def terminal(x, law):
        del law
        return x.copy()

    coeffs = CoefficientSet(
        drift=drift, diffusion=diffusion, driver=driver, terminal=terminal, dims=dims,
        initial_law=EmpiricalLaw.point_mass([1.0]),
    )
    constants = LipschitzConstants(
        drift=LipschitzProfile(y=1.0),
        driver=LipschitzProfile(x=1.0),
        diffusion=LipschitzProfile(z=abs(sigma_slope)),
        terminal_x=1.0,
        operator_decay=min(1.0, -sigma_slope),
        terminal_growth=1.0,
        a_priori_bound=2.0,
    )
    return coeffs, constants


def appendix_ode_instance(x0: float = 1.0) -> tuple[CoefficientSet, LipschitzConstants]:
    """Law-free deterministic instance: drift -y, driver -x, terminal x.

    Its limit solves the two-point system x' = -y, y' = x with y(T) = x(T),
    which a shooting method integrates independently.
    """
    dims = Dims(x=1, y=1, w=1, marks=0)

    def drift(t, x, y, z, k, law):
        del t, x, z, k, law
        return -y

    def diffusion(t, x, y, z, k, law):
        del t, y, z, k, law
        return np.zeros(x.shape + (1,))

    def driver(t, x, y, z, k, law):
        del t, y, z, k, law
        return -x

    def terminal(x, law):
        del law
        return x.copy()

    coeffs = CoefficientSet(
        drift=drift, diffusion=diffusion, driver=driver, terminal=terminal, dims=dims,
        initial_law=EmpiricalLaw.point_mass([x0]),
    )
    constants = LipschitzConstants(
        drift=LipschitzProfile(y=1.0),
        driver=LipschitzProfile(x=1.0),
        terminal_x=1.0,
        operator_decay=1.0,
        terminal_growth=1.0,
        a_priori_bound=2.0,
    )
    return coeffs, constants


def lq_grid_model(params: LQParams) -> GridModel:
    """One-region noiseless grid model matching the benchmark parameters."""
    q0 = params.q0_path
    qbar = params.qbar_path
    if callable(q0) or callable(qbar):
        raise ValueError("the benchmark grid model needs constant production paths")
    return GridModel(
        regions=(
            Region(
                production=RegionProduction(q0=float(qbar)),
                weight=1.0,
                k_transmission=params.k,
                s0=params.s0,
            ),
        ),
        world=WorldProduction(q0=float(q0)),
        price=PriceCurve.linear(params.p0, params.p1),
        storage=StorageCost(a1=params.a1, a2=params.a2, c=params.c),
        terminal=TerminalCost(b1=params.b1, b2=params.b2),
        s_max=1.0,
    )


def lq_benchmark_instance(params: LQParams) -> tuple[CoefficientSet, GridModel]:
    """Deterministic one-region coupled instance with the closed-form target."""
    grid = lq_grid_model(params)
    coeffs = assemble_mfc_fbsde(grid, mode="mfc", horizon=params.horizon)
    return coeffs, grid


BUILTIN_INSTANCES = ("zero", "linear", "weak", "appendix_ode", "lq")
