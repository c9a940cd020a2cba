"""Batch front door: TOML config in, manifest and CSV artifacts out.

Every run resolves its configuration, writes a manifest (full config,
seed, versions) before any compute starts, then emits headered CSV files
with floats at 17 significant digits so identical runs are byte-identical.

Exit codes: 0 success, 2 non-convergence or failed check (artifacts still
written), 1 configuration or runtime error.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np
import scipy

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

from . import __version__, instances
from .backward_solver import BasisSpec
from .coefficients import (
    SamplerConfig,
    check_h1,
    check_h2,
    contraction_constants_h1,
    contraction_constants_h2,
)
from .errors import ConfigError
from .forward_sim import NoiseSpec, RegionProduction, TimeGrid, WorldProduction, make_ensemble
from .lq_benchmark import LQParams, tabulate_solution
from .mf_solver import PicardConfig, solve_coupled_appendix, solve_mf_h1, solve_mf_h2
from .random_measure import JumpIntensity
from .smart_grid import (
    GridModel,
    PriceCurve,
    Region,
    StorageCost,
    TerminalCost,
    battery_constraint_report,
    cost_central,
    cost_region,
    simulate_grid,
    spot_price_mf,
)


def _fmt(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (float, np.floating)):
        return f"{float(value):.17g}"
    return str(value)


def write_csv(path: Path, header: list[str], rows: list[list]) -> None:
    lines = [",".join(header)]
    lines.extend(",".join(_fmt(v) for v in row) for row in rows)
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def _load_config(path: str | None) -> dict:
    if path is None:
        return {}
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        with p.open("rb") as fh:
            return tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"malformed config {path}: {exc}") from exc


def _write_manifest(out: Path, command: str, config: dict, seed: int, workers: int) -> None:
    out.mkdir(parents=True, exist_ok=True)
    manifest = {
        "command": command,
        "seed": seed,
        "workers": workers,
        "config": config,
        "versions": {
            "fbsdej": __version__,
            "python": sys.version.split()[0],
            "numpy": np.__version__,
            "scipy": scipy.__version__,
        },
    }
    (out / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True, default=str) + "\n", encoding="utf-8"
    )


def _lq_params(cfg: dict) -> LQParams:
    lq = cfg.get("lq", {})
    kwargs = {}
    for key in ("p0", "p1", "a1", "a2", "c", "k", "b1", "b2", "horizon", "s0", "resolution"):
        if key in lq:
            kwargs[key] = lq[key]
    if "q0" in lq:
        kwargs["q0_path"] = float(lq["q0"])
    if "qbar" in lq:
        kwargs["qbar_path"] = float(lq["qbar"])
    return LQParams(**kwargs)


def _build_instance(cfg: dict):
    section = cfg.get("instance", {})
    name = section.get("name", "linear")
    if name == "zero":
        return instances.zero_instance()
    if name == "linear":
        return instances.linear_monotone_instance(
            sigma=float(section.get("sigma", 0.1)),
            x0=float(section.get("x0", 1.0)),
            mf_drift=float(section.get("mf_drift", 0.2)),
        )
    if name == "weak":
        return instances.weak_monotone_instance(
            sigma_slope=float(section.get("sigma_slope", -0.5))
        )
    if name == "appendix_ode":
        return instances.appendix_ode_instance(x0=float(section.get("x0", 1.0)))
    if name == "lq":
        coeffs, _ = instances.lq_benchmark_instance(_lq_params(cfg))
        return coeffs, None
    raise ConfigError(f"unknown instance {name!r}; choose from {instances.BUILTIN_INSTANCES}")


def _numerics(cfg: dict) -> dict:
    num = cfg.get("numerics", {})
    try:
        return {
            "n_particles": int(num.get("n_particles", 64)),
            "n_steps": int(num.get("n_steps", 100)),
            "horizon": float(num.get("horizon", 1.0)),
            "basis_degree": int(num.get("basis_degree", 1)),
            "ridge": float(num.get("ridge", 0.0)),
            "outer_tol": float(num.get("outer_tol", 1e-6)),
            "inner_tol": (None if "inner_tol" not in num else float(num["inner_tol"])),
            "max_outer": int(num.get("max_outer", 40)),
            "max_inner": int(num.get("max_inner", 20)),
            "delta": float(num.get("delta", 0.5)),
            "scheme": str(num.get("scheme", "h1")),
        }
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid [numerics] entry: {exc}") from exc


def _solver_outputs(out: Path, iterate, report, grid: TimeGrid) -> None:
    rows = []
    for i, d in enumerate(report.distances):
        rows.append(
            [i + 1, d.y, d.z, d.k, d.x_terminal, d.total, report.inner_iterations[i]]
        )
    write_csv(
        out / "convergence.csv",
        ["iteration", "dist_y", "dist_z", "dist_k", "dist_x_terminal", "total", "inner_iterations"],
        rows,
    )
    times = grid.times
    y_mean = iterate.Y.mean(axis=0)
    x_mean = iterate.X.mean(axis=0)
    header = ["t"]
    header += [f"x{j}_mean" for j in range(x_mean.shape[1])]
    header += [f"y{j}_mean" for j in range(y_mean.shape[1])]
    rows = []
    for i, t in enumerate(times):
        rows.append([t, *x_mean[i], *y_mean[i]])
    write_csv(out / "solution.csv", header, rows)


def cmd_solve(cfg: dict, out: Path, seed: int, workers: int) -> int:
    num = _numerics(cfg)
    coeffs, constants = _build_instance(cfg)
    grid = TimeGrid(num["horizon"], num["n_steps"])
    noise = NoiseSpec(dw=coeffs.dims.w)
    ensemble = make_ensemble(num["n_particles"], grid, noise, master_seed=seed, workers=workers)
    basis = BasisSpec(degree=num["basis_degree"], ridge=num["ridge"])
    config = PicardConfig(
        delta=num["delta"],
        outer_tol=num["outer_tol"],
        inner_tol=num["inner_tol"],
        max_outer=num["max_outer"],
        max_inner=num["max_inner"],
        scheme=num["scheme"],
    )
    if num["scheme"] == "h1":
        iterate, _, report = solve_mf_h1(coeffs, ensemble, basis, config, workers=workers)
    elif num["scheme"] == "h2":
        iterate, _, report = solve_mf_h2(coeffs, ensemble, basis, config, workers=workers)
    else:
        iterate, _, report = solve_coupled_appendix(
            coeffs, ensemble, basis, config, constants, workers=workers
        )
    _solver_outputs(out, iterate, report, grid)
    return 0 if report.converged else 2


def cmd_check(cfg: dict, out: Path, seed: int, workers: int) -> int:
    del workers
    coeffs, constants = _build_instance(cfg)
    if constants is None:
        raise ConfigError("the selected instance does not declare constants to check")
    section = cfg.get("check", {})
    sampler = SamplerConfig(
        n_samples=int(section.get("n_samples", 200)),
        box=float(section.get("box", 2.0)),
        seed=seed,
    )
    horizon = float(section.get("horizon", 1.0))
    which = str(section.get("assumption", "h1"))
    if which not in ("h1", "h2", "both"):
        raise ConfigError("check.assumption must be h1, h2 or both")
    rep1 = check_h1(coeffs, constants, sampler)
    rep2 = check_h2(coeffs, constants, sampler)
    rows = [
        [r.assumption, r.passed, r.operator_margin, r.terminal_margin, r.n_samples, r.n_failures]
        for r in (rep1, rep2)
    ]
    write_csv(
        out / "assumptions.csv",
        ["assumption", "passed", "operator_margin", "terminal_margin", "n_samples", "n_failures"],
        rows,
    )
    cert1 = contraction_constants_h1(constants, horizon)
    cert2 = contraction_constants_h2(constants, horizon)
    fields = [f.name for f in dataclasses.fields(cert1)]
    rows = []
    for name, cert in (("h1", cert1), ("h2", cert2)):
        rows.append([name] + [("" if getattr(cert, f) is None else _fmt(getattr(cert, f))) for f in fields])
    write_csv(out / "certificate.csv", ["family"] + fields, rows)
    relevant = {"h1": rep1.passed, "h2": rep2.passed, "both": rep1.passed and rep2.passed}[which]
    return 0 if relevant else 2


def cmd_benchmark(cfg: dict, out: Path, seed: int, workers: int) -> int:
    params = _lq_params(cfg)
    section = cfg.get("benchmark", {})
    num = _numerics(cfg)
    n_steps = int(section.get("n_steps", num["n_steps"]))
    with_solver = bool(section.get("with_solver", True))
    solution = tabulate_solution(params, n_steps + 1)
    header = ["t", "phi", "psi", "price", "storage", "alpha", "value"]
    columns = [
        solution.times, solution.phi, solution.psi, solution.price,
        solution.storage, solution.alpha, solution.value,
    ]
    status = 0
    if with_solver:
        coeffs, _ = instances.lq_benchmark_instance(params)
        grid = TimeGrid(params.horizon, n_steps)
        ensemble = make_ensemble(
            int(section.get("n_particles", 8)), grid, NoiseSpec(dw=1),
            master_seed=seed, workers=workers,
        )
        config = PicardConfig(
            delta=num["delta"], outer_tol=num["outer_tol"], inner_tol=num["inner_tol"],
            max_outer=num["max_outer"], max_inner=num["max_inner"], scheme="h1",
        )
        basis = BasisSpec(degree=num["basis_degree"], ridge=num["ridge"])
        iterate, _, report = solve_mf_h1(coeffs, ensemble, basis, config, workers=workers)
        y_mean = iterate.Y[:, :, 0].mean(axis=0)
        s_mean = iterate.X[:, :, 0].mean(axis=0)
        header += ["solver_value", "solver_storage", "err_value", "err_storage"]
        columns += [
            y_mean, s_mean,
            np.abs(y_mean - solution.value), np.abs(s_mean - solution.storage),
        ]
        status = 0 if report.converged else 2
    rows = [[col[i] for col in columns] for i in range(len(solution.times))]
    write_csv(out / "benchmark.csv", header, rows)
    return status


def _grid_model(cfg: dict) -> tuple[GridModel, int, int, float, dict]:
    section = cfg.get("grid", {})
    region_tables = section.get("region", [{}])
    regions = []
    for tbl in region_tables:
        regions.append(
            Region(
                production=RegionProduction(
                    mu=float(tbl.get("mu", 0.0)),
                    sigma=float(tbl.get("sigma", 0.0)),
                    sigma_common=float(tbl.get("sigma_common", 0.0)),
                    beta_scale=float(tbl.get("beta_scale", 0.0)),
                    beta_common_scale=float(tbl.get("beta_common_scale", 0.0)),
                    q0=float(tbl.get("q0", 0.7)),
                ),
                weight=float(tbl.get("weight", 1.0 / len(region_tables))),
                k_transmission=float(tbl.get("k_transmission", 1.0)),
                s0=float(tbl.get("s0", 0.0)),
                nu_bar=float(tbl.get("nu_bar", 0.0)),
            )
        )
    world_tbl = section.get("world", {})
    world = WorldProduction(
        mu=float(world_tbl.get("mu", 0.0)),
        sigma=float(world_tbl.get("sigma", 0.0)),
        beta_scale=float(world_tbl.get("beta_scale", 0.0)),
        q0=float(world_tbl.get("q0", 0.5)),
    )
    price_tbl = section.get("price", {})
    price = PriceCurve.linear(
        float(price_tbl.get("intercept", 2.0)), float(price_tbl.get("slope", 0.5))
    )
    storage_tbl = section.get("storage", {})
    storage = StorageCost(
        a1=float(storage_tbl.get("a1", -0.5)),
        a2=float(storage_tbl.get("a2", 1.0)),
        c=float(storage_tbl.get("c", -0.5)),
    )
    terminal_tbl = section.get("terminal", {})
    terminal = TerminalCost(
        b1=float(terminal_tbl.get("b1", 1.5)), b2=float(terminal_tbl.get("b2", 0.5))
    )
    intensity = None
    if section.get("intensity", {}).get("marks"):
        intensity = JumpIntensity.from_pairs(section["intensity"]["marks"])
    common_intensity = None
    if section.get("common_intensity", {}).get("marks"):
        common_intensity = JumpIntensity.from_pairs(section["common_intensity"]["marks"])
    model = GridModel(
        regions=tuple(regions),
        world=world,
        price=price,
        storage=storage,
        terminal=terminal,
        s_max=float(section.get("s_max", 1.0)),
        k_world=float(section.get("k_world", 0.0)),
        intensity=intensity,
        common_intensity=common_intensity,
    )
    n_particles = int(section.get("n_particles", 512))
    n_steps = int(section.get("n_steps", 100))
    horizon = float(section.get("horizon", 1.0))
    return model, n_particles, n_steps, horizon, section


def cmd_grid(cfg: dict, out: Path, seed: int, workers: int) -> int:
    model, n_particles, n_steps, horizon, section = _grid_model(cfg)
    grid = TimeGrid(horizon, n_steps)
    noise = NoiseSpec(
        dw=1, intensity=model.intensity, common_dw=1, common_intensity=model.common_intensity
    )
    ensemble = make_ensemble(n_particles, grid, noise, master_seed=seed, workers=workers)
    paths = simulate_grid(model, ensemble)
    policy = str(section.get("policy", "constant"))
    n = ensemble.n_particles
    if policy == "constant":
        alpha = np.full((n, n_steps + 1), float(section.get("alpha", 0.0)))
    elif policy == "lq":
        params = _lq_params(cfg)
        solution = tabulate_solution(params, n_steps + 1)
        alpha = np.tile(solution.alpha, (n, 1))
    else:
        raise ConfigError("grid.policy must be 'constant' or 'lq'")
    dt = grid.dt
    means_q = paths.conditional_means(model.n_regions)
    nu_bar = np.empty((model.n_regions, n_steps + 1))
    for g in range(model.n_regions):
        nu_bar[g] = alpha[paths.region_of == g].mean(axis=0)
    prices = np.array(
        [
            spot_price_mf(paths.q0[i], means_q[:, i], nu_bar[:, i], model.price, model.weights)
            for i in range(n_steps + 1)
        ]
    )
    region_rows = []
    totals_rows = []
    s_all = np.empty_like(alpha)
    for g, region in enumerate(model.regions):
        sel = paths.region_of == g
        a_g = alpha[sel]
        q_g = paths.q[sel]
        inc = 0.5 * (a_g[:, :-1] + a_g[:, 1:]) * dt
        s_g = region.s0 + np.concatenate(
            [np.zeros((a_g.shape[0], 1)), np.cumsum(inc, axis=1)], axis=1
        )
        s_all[sel] = s_g
        energy = prices[None, :] * (a_g - q_g)
        transmission = region.transmission_cost(q_g, a_g)
        storage_cost = model.storage(s_g, a_g)
        for i, t in enumerate(grid.times):
            region_rows.append(
                [
                    g, t, s_g[:, i].mean(), q_g[:, i].mean(), prices[i], a_g[:, i].mean(),
                    energy[:, i].mean(), transmission[:, i].mean(), storage_cost[:, i].mean(),
                ]
            )
        j_region = cost_region(alpha, nu_bar, model, paths, grid, region=g)
        battery = battery_constraint_report(s_g, model.s_max)
        totals_rows.append(
            [f"region_{g}", j_region, battery.violation_fraction, battery.max_excursion]
        )
    j_central = cost_central(alpha, model, paths, grid)
    totals_rows.append(["central", j_central, "", ""])
    write_csv(
        out / "regions.csv",
        ["region", "t", "s_mean", "q_mean", "price", "alpha_mean",
         "cost_energy", "cost_transmission", "cost_storage"],
        region_rows,
    )
    write_csv(
        out / "totals.csv",
        ["scope", "cost", "battery_violation_fraction", "battery_max_excursion"],
        totals_rows,
    )
    return 0


_COMMANDS = {
    "check": cmd_check,
    "solve": cmd_solve,
    "benchmark": cmd_benchmark,
    "grid": cmd_grid,
}


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="fbsdej", description="Coupled mean-field jump FBSDE solver toolkit"
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", default=None, help="TOML run configuration")
        p.add_argument("--seed", type=int, default=None, help="master seed override")
        p.add_argument("--workers", type=int, default=None, help="worker count override")
        p.add_argument("--out", default=None, help="output directory override")
    args = parser.parse_args(argv)
    try:
        cfg = _load_config(args.config)
        run_cfg = cfg.get("run", {})
        seed = args.seed if args.seed is not None else int(run_cfg.get("seed", 0))
        workers = args.workers if args.workers is not None else int(run_cfg.get("workers", 1))
        out = Path(args.out if args.out is not None else run_cfg.get("out", "runs/latest"))
        if workers < 1:
            raise ConfigError("workers must be at least 1")
        _write_manifest(out, args.command, cfg, seed, workers)
        return _COMMANDS[args.command](cfg, out, seed, workers)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
