"""Particle solver for coupled mean-field forward-backward SDEs with jumps."""

__version__ = "0.1.0"

from .backward_solver import BasisSpec, IterateDistance, SolverIterate, l2_distance, solve_backward
from .coefficients import (
    CheckReport,
    CoefficientSet,
    ContractionConstants,
    Dims,
    LipschitzConstants,
    LipschitzProfile,
    SamplerConfig,
    check_h1,
    check_h2,
    contraction_constants_h1,
    contraction_constants_h2,
    monotonicity_operator,
)
from .forward_sim import (
    NoiseSpec,
    PathEnsemble,
    RegionProduction,
    TimeGrid,
    WorldProduction,
    make_ensemble,
    simulate_forward,
    simulate_production,
)
from .lq_benchmark import (
    ClosedFormSolution,
    LQParams,
    alpha_bar,
    b_path,
    phi_bar,
    price_bar,
    psi_bar,
    riccati_rk4,
    s_bar,
    step2_node_solution,
    tabulate_solution,
)
from .measure import EmpiricalLaw, moments, w2_coupled_bound, w2_exact_1d, w2_exact_small
from .mf_solver import (
    ConvergenceReport,
    PicardConfig,
    empirical_contraction_ratio,
    solve_coupled_appendix,
    solve_mf_h1,
    solve_mf_h2,
)
from .random_measure import (
    JumpIntensity,
    JumpTrain,
    compensated_integral,
    compensator_drift,
    sample_jump_train,
    sample_jump_trains,
)
from .smart_grid import (
    BatteryReport,
    GridModel,
    GridPaths,
    PriceCurve,
    Region,
    StorageCost,
    TerminalCost,
    assemble_mfc_fbsde,
    battery_constraint_report,
    cost_central,
    cost_region,
    mfc_residual,
    nash_residual,
    simulate_grid,
    spot_price_finite,
    spot_price_mf,
)

__all__ = [name for name in dir() if not name.startswith("_")]
