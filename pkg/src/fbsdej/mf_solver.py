"""Outer Picard drivers for the coupled mean-field system.

Three damped iterations share one engine:

- ``h1``: the forward equation carries ``-delta (Y^{n+1} - Y^n)`` in drift
  and diffusion and ``-delta (K^{n+1} - K^n)`` in the jump integrand;
- ``h2``: the backward equation carries ``+delta (X^{n+1} - X^n)`` in the
  terminal value and inside the time integral, forward untouched;
- ``appendix``: the decoupled (law-free) variant of ``h1`` with the step
  defaulted to min(decay, growth) / a_priori_bound.

Each outer step freezes the empirical laws at the previous iterate and
solves the perturbed coupled system by alternating forward simulation and
backward regression until the inner change stalls.  One sign convention
holds everywhere: value = terminal + integral of driver - martingale
terms, so the ``h2`` shifts enter the driver integral with a plus sign.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from .backward_solver import BasisSpec, IterateDistance, SolverIterate, l2_distance, solve_backward
from .coefficients import CoefficientSet, ContractionConstants, LipschitzConstants
from .errors import InsufficientDataError
from .forward_sim import PathEnsemble, simulate_forward
from .measure import EmpiricalLaw

SCHEMES = ("h1", "h2", "appendix")


@dataclass(frozen=True)
class PicardConfig:
    """Damping weight, stopping tolerances, and iteration caps.

    ``inner_relax`` is the starting under-relaxation of the inner
    alternation; it is halved automatically whenever the inner gap grows,
    which keeps strongly coupled instances from oscillating.  The inner
    fixed point is unaffected.
    """

    delta: float = 0.5
    outer_tol: float = 1e-6
    inner_tol: float | None = None
    max_outer: int = 50
    max_inner: int = 25
    scheme: str = "h1"
    inner_relax: float = 1.0

    def __post_init__(self):
        if not (0.0 < self.delta <= 1.0):
            raise ValueError("delta must lie in (0, 1]")
        if not (0.0 < self.inner_relax <= 1.0):
            raise ValueError("inner_relax must lie in (0, 1]")
        if self.outer_tol <= 0.0 or (self.inner_tol is not None and self.inner_tol <= 0.0):
            raise ValueError("tolerances must be positive")
        if self.max_outer < 1 or self.max_inner < 1:
            raise ValueError("iteration caps must be at least 1")
        if self.scheme not in SCHEMES:
            raise ValueError(f"scheme must be one of {SCHEMES}")

    @property
    def effective_inner_tol(self) -> float:
        return self.inner_tol if self.inner_tol is not None else 0.1 * self.outer_tol


@dataclass(frozen=True)
class ConvergenceReport:
    """Per-outer-iteration successive distances and derived diagnostics."""

    distances: tuple[IterateDistance, ...]
    inner_iterations: tuple[int, ...]
    converged: bool
    iterations: int
    predicted_ratio: float | None = None

    @property
    def totals(self) -> np.ndarray:
        return np.array([d.total for d in self.distances])

    @property
    def ratios(self) -> np.ndarray:
        tot = self.totals
        out = []
        for i in range(1, len(tot)):
            if tot[i - 1] > 0.0:
                out.append(tot[i] / tot[i - 1])
        return np.array(out)


def empirical_contraction_ratio(report: ConvergenceReport) -> float:
    """Median of successive distance ratios; needs at least three iterations."""
    if report.iterations < 3:
        raise InsufficientDataError(
            f"need >= 3 outer iterations for a ratio, got {report.iterations}"
        )
    ratios = report.ratios
    if ratios.size == 0:
        return 0.0
    return float(np.median(ratios))


def laws_from_iterate(it: SolverIterate) -> tuple[list[EmpiricalLaw], EmpiricalLaw]:
    """Per-node empirical laws of (X, Y) and the terminal law of X."""
    if it.X is None:
        raise ValueError("iterate carries no forward states")
    m1 = it.Y.shape[1]
    laws = [EmpiricalLaw(np.concatenate([it.X[:, i, :], it.Y[:, i, :]], axis=1)) for i in range(m1)]
    return laws, EmpiricalLaw(it.X[:, -1, :])


def _project(a: np.ndarray, width: int) -> np.ndarray:
    """First min(.,.) components, zero-padded to ``width`` (dims may differ)."""
    got = a.shape[-1]
    if got == width:
        return a
    out = np.zeros(a.shape[:-1] + (width,))
    c = min(got, width)
    out[..., :c] = a[..., :c]
    return out


_MIN_RELAX = 1.0 / 64.0


def _solve_perturbed(
    coeffs: CoefficientSet,
    ensemble: PathEnsemble,
    basis: BasisSpec,
    config: PicardConfig,
    prev: SolverIterate,
    laws,
    terminal_law,
    workers: int,
    start_relax: float,
) -> tuple[SolverIterate, int, float]:
    """Inner alternation for one outer step with the previous iterate frozen.

    Each pass simulates forward against the current backward estimate and
    re-solves backward; the estimate is under-relaxed toward the new pass,
    halving the relaxation whenever the pass-to-pass gap grows.  The final
    relaxation is handed back so the next outer step starts from it.
    """
    d = coeffs.dims
    m = ensemble.grid.n_steps
    delta = config.delta
    cur = prev
    candidate = prev
    relax = start_relax
    prev_gap = np.inf
    inner_used = 0
    for inner in range(config.max_inner):
        drift_shift = diffusion_shift = jump_shift = None
        if config.scheme in ("h1", "appendix"):
            dy_gap = cur.Y[:, :m, :] - prev.Y[:, :m, :]
            shift = -delta * _project(dy_gap, d.x)
            drift_shift = shift
            diffusion_shift = shift
            if d.marks:
                dk_gap = cur.K - prev.K  # (n, m, dy, marks)
                jump_shift = -delta * _project(np.moveaxis(dk_gap, 3, 2), d.x)
        sim = simulate_forward(
            coeffs,
            cur,
            laws,
            ensemble,
            drift_shift=drift_shift,
            diffusion_shift=diffusion_shift,
            jump_shift=jump_shift,
        )
        driver_shift = terminal_shift = None
        if config.scheme == "h2":
            x_gap = sim.X - (prev.X if prev.X is not None else 0.0)
            driver_shift = delta * _project(x_gap[:, :m, :], d.y)
            terminal_shift = delta * _project(x_gap[:, m, :], d.y)
        candidate = solve_backward(
            sim,
            coeffs,
            laws,
            basis,
            terminal_law=terminal_law,
            driver_shift=driver_shift,
            terminal_shift=terminal_shift,
            workers=workers,
        )
        gap = l2_distance(candidate, cur, ensemble).total
        inner_used = inner + 1
        if gap < config.effective_inner_tol:
            cur = candidate
            break
        if gap > prev_gap:
            relax = max(0.5 * relax, _MIN_RELAX)
        prev_gap = gap
        if relax >= 1.0:
            cur = candidate
        else:
            cur = SolverIterate(
                Y=relax * candidate.Y + (1.0 - relax) * cur.Y,
                Z=relax * candidate.Z + (1.0 - relax) * cur.Z,
                K=relax * candidate.K + (1.0 - relax) * cur.K,
                X=candidate.X,
            )
    else:
        # cap reached: hand back the last consistent forward/backward pair
        cur = candidate
    return cur, inner_used, relax


def _picard(
    coeffs: CoefficientSet,
    ensemble: PathEnsemble,
    basis: BasisSpec,
    config: PicardConfig,
    certificate: ContractionConstants | None,
    workers: int,
) -> tuple[SolverIterate, PathEnsemble, ConvergenceReport]:
    d = coeffs.dims
    n, m = ensemble.n_particles, ensemble.grid.n_steps
    prev = SolverIterate.zeros(n, m, d.y, d.w, d.marks, dx=d.x)
    distances: list[IterateDistance] = []
    inner_counts: list[int] = []
    converged = False
    iterations = 0
    final = prev
    relax = config.inner_relax
    for _ in range(config.max_outer):
        laws, terminal_law = laws_from_iterate(prev)
        cur, used, relax = _solve_perturbed(
            coeffs, ensemble, basis, config, prev, laws, terminal_law, workers, relax
        )
        dist = l2_distance(cur, prev, ensemble)
        distances.append(dist)
        inner_counts.append(used)
        iterations += 1
        final = cur
        if dist.total < config.outer_tol:
            converged = True
            break
        prev = cur
    report = ConvergenceReport(
        distances=tuple(distances),
        inner_iterations=tuple(inner_counts),
        converged=converged,
        iterations=iterations,
        predicted_ratio=None if certificate is None else certificate.ratio,
    )
    out_ensemble = ensemble.with_states(final.X)
    return final, out_ensemble, report


def solve_mf_h1(
    coeffs: CoefficientSet,
    ensemble: PathEnsemble,
    basis: BasisSpec,
    config: PicardConfig,
    certificate: ContractionConstants | None = None,
    workers: int = 1,
) -> tuple[SolverIterate, PathEnsemble, ConvergenceReport]:
    """Forward-perturbed damped iteration with laws frozen per outer step."""
    if config.scheme != "h1":
        raise ValueError("config.scheme must be 'h1'")
    return _picard(coeffs, ensemble, basis, config, certificate, workers)


def solve_mf_h2(
    coeffs: CoefficientSet,
    ensemble: PathEnsemble,
    basis: BasisSpec,
    config: PicardConfig,
    certificate: ContractionConstants | None = None,
    workers: int = 1,
) -> tuple[SolverIterate, PathEnsemble, ConvergenceReport]:
    """Backward-perturbed damped iteration with laws frozen per outer step."""
    if config.scheme != "h2":
        raise ValueError("config.scheme must be 'h2'")
    return _picard(coeffs, ensemble, basis, config, certificate, workers)


def solve_coupled_appendix(
    coeffs: CoefficientSet,
    ensemble: PathEnsemble,
    basis: BasisSpec,
    config: PicardConfig,
    constants: LipschitzConstants | None = None,
    workers: int = 1,
) -> tuple[SolverIterate, PathEnsemble, ConvergenceReport]:
    """Decoupled (law-free) forward-perturbed iteration.

    When declared constants are supplied the damping weight defaults to
    min(operator_decay, terminal_growth) / a_priori_bound, clipped into
    (0, 1].
    """
    if config.scheme != "appendix":
        raise ValueError("config.scheme must be 'appendix'")
    if constants is not None:
        delta = min(constants.operator_decay, constants.terminal_growth) / constants.a_priori_bound
        config = dataclasses.replace(config, delta=float(min(max(delta, 1e-12), 1.0)))
    return _picard(coeffs, ensemble, basis, config, None, workers)
