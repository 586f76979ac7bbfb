"""Experiment runner: TOML configs in, CSV/JSON results out.

Configs have three sections:

    [problem]   name = "paper_1d" plus optional overrides
                (n_cells, alpha, p_level, support_radius, control_bounds)
    [solver]    experiment = "prob_1d" | "prob_2d" | "p_sweep" | "my_path"
                | "robust" | "compare_all", plus per-experiment knobs
    [output]    dir = "results", emit_gnuplot = false

Each run writes one CSV per control (columns x,u or x,y,u with 17
significant digits), optional table CSVs, and a summary.json echoing the
resolved configuration; reruns with identical config and seeds produce
byte-identical files.  All results are computed before anything is
written, so failed runs leave no partial outputs.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from .chance import ChanceSolveConfig, objective, p_sweep, solve_chance
from .distributions import SupportSpec
from .moreau_yosida import PathSchedule, path_follow
from .pde import LaplacianOperator, precompute_states
from .problem import Field, ProblemSpec, builtin_problem
from .robust import RobustSolveConfig, needle_scan, robust_eval, solve_robust
from .srd import mc_probability_oracle

EXPERIMENTS = ("prob_1d", "prob_2d", "p_sweep", "my_path", "robust", "compare_all")
DEFAULT_PROBLEM = {
    "prob_1d": "paper_1d",
    "prob_2d": "paper_2d",
    "p_sweep": "paper_1d_truncated",
    "my_path": "paper_1d_truncated",
    "robust": "paper_1d_truncated",
    "compare_all": "paper_1d_truncated",
}
MY_PATH_GRID_DEFAULT = 29  # resolution used by the penalty-path runs


class ConfigError(ValueError):
    """The experiment configuration cannot be resolved."""


class NonconvergenceError(RuntimeError):
    """A solver finished without reaching its target tolerances."""


@dataclass
class RunConfig:
    experiment: str
    problem: str
    problem_overrides: Dict = field(default_factory=dict)
    solver: Dict = field(default_factory=dict)
    out_dir: str = "results"
    emit_gnuplot: bool = False

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise ConfigError(
                f"unknown experiment {self.experiment!r}; pick one of {EXPERIMENTS}"
            )


@dataclass
class RunResult:
    experiment: str
    out_dir: str
    controls: Dict[str, Field]
    metrics: Dict
    seeds: Dict
    files: List[str]
    wall_clock: float

    def __post_init__(self):
        for key, value in self.metrics.items():
            if key.startswith("probability") and np.isscalar(value):
                if not 0.0 <= float(value) <= 1.0:
                    raise ValueError(f"{key}={value} outside [0, 1]")
            if key == "violation" and value is not None:
                if float(value) < 0.0:
                    raise ValueError("violation must be nonnegative")


def load_config(
    path,
    experiment: Optional[str] = None,
    seed: Optional[int] = None,
    out_dir: Optional[str] = None,
    emit_gnuplot: Optional[bool] = None,
) -> RunConfig:
    """Parse and validate a TOML experiment file; CLI flags override it."""
    try:
        with open(path, "rb") as handle:
            raw = tomllib.load(handle)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"invalid TOML in {path}: {exc}") from exc

    problem = dict(raw.get("problem", {}))
    solver = dict(raw.get("solver", {}))
    output = dict(raw.get("output", {}))

    exp = experiment or solver.pop("experiment", None)
    if exp is None:
        raise ConfigError("no experiment given (solver.experiment or --experiment)")
    solver.pop("experiment", None)
    if exp not in EXPERIMENTS:
        raise ConfigError(f"unknown experiment {exp!r}; pick one of {EXPERIMENTS}")

    name = problem.pop("name", DEFAULT_PROBLEM[exp])
    if seed is not None:
        solver["seed"] = int(seed)

    config = RunConfig(
        experiment=exp,
        problem=name,
        problem_overrides=problem,
        solver=solver,
        out_dir=out_dir or output.get("dir", "results"),
        emit_gnuplot=(
            emit_gnuplot if emit_gnuplot is not None else bool(output.get("emit_gnuplot", False))
        ),
    )
    _build_spec(config)  # fail fast on bad problem data
    return config


def _build_spec(config: RunConfig) -> ProblemSpec:
    try:
        spec = builtin_problem(config.problem)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    overrides = dict(config.problem_overrides)
    changes = {}
    if "n_cells" in overrides:
        changes["n_cells"] = int(overrides.pop("n_cells"))
    if "alpha" in overrides:
        changes["alpha"] = float(overrides.pop("alpha"))
    if "p_level" in overrides:
        changes["p_level"] = float(overrides.pop("p_level"))
    if "support_radius" in overrides:
        changes["support"] = SupportSpec.ellipsoid(float(overrides.pop("support_radius")))
    if "control_bounds" in overrides:
        bounds = overrides.pop("control_bounds")
        changes["control_bounds"] = None if bounds is None else tuple(map(float, bounds))
    if overrides:
        raise ConfigError(f"unknown problem overrides: {sorted(overrides)}")
    try:
        return replace(spec, **changes) if changes else spec
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def constraint_violation(spec: ProblemSpec, op: LaplacianOperator, u: Field) -> float:
    """Worst-case excess of the state over alpha (domain and support)."""
    if spec.support.kind != "ellipsoid":
        raise ValueError("the violation metric needs a bounded (ellipsoid) support")
    bundle = precompute_states(spec, op, u)
    ev = robust_eval(bundle, spec.cov, spec.support.radius, spec.alpha)
    return max(0.0, ev.h_value)


def _spec_echo(spec: ProblemSpec) -> Dict:
    return {
        "dim": spec.dim,
        "n_cells": spec.n_cells,
        "m": spec.m,
        "alpha": spec.alpha,
        "p_level": spec.p_level,
        "support": {"kind": spec.support.kind, "radius": spec.support.radius},
        "control_bounds": list(spec.control_bounds) if spec.control_bounds else None,
    }


def _chance_config(solver: Dict, defaults: Optional[Dict] = None) -> ChanceSolveConfig:
    allowed = {
        "p_level",
        "n_directions",
        "sphere_mode",
        "seed",
        "max_outer",
        "multiplier0",
        "penalty0",
        "penalty_growth",
        "inner_tol",
        "outer_tol",
        "max_inner",
    }
    merged = dict(defaults or {})
    merged.update({k: v for k, v in solver.items() if k in allowed})
    try:
        return ChanceSolveConfig(**merged)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad solver options: {exc}") from exc


def _schedule(solver: Dict) -> PathSchedule:
    allowed = {
        "n_stages",
        "gamma_base",
        "scenario_base",
        "c_step",
        "inner_tol",
        "scheme",
        "seed",
        "max_inner",
        "armijo",
        "radial",
    }
    merged = {k: v for k, v in solver.items() if k in allowed}
    try:
        return PathSchedule(**merged)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad schedule options: {exc}") from exc


def _mc_draws(solver: Dict) -> int:
    return int(solver.get("mc_draws", 100_000))


def _run_prob(spec, config):
    cfg = _chance_config(config.solver)
    u, report = solve_chance(spec, cfg)
    if not report.converged:
        raise NonconvergenceError(report.message)
    op = LaplacianOperator(spec.grid())
    mc_seed = cfg.seed + 7919
    prob_mc, se = mc_probability_oracle(spec, op, u, _mc_draws(config.solver), seed=mc_seed)
    metrics = {
        "objective": report.objective,
        "probability_srd": report.probability,
        "probability_mc": prob_mc,
        "mc_std_error": se,
        "p_target": report.p_target,
        "outer_iterations": report.outer_iterations,
        "tie_fraction": report.tie_fraction,
        "sphere_sample_id": report.sphere_sample_id,
    }
    if spec.support.kind == "ellipsoid":
        metrics["violation"] = constraint_violation(spec, op, u)
    if spec.control_bounds is not None:
        metrics["active_lower_nodes"] = int(report.active_lower.sum())
        metrics["active_upper_nodes"] = int(report.active_upper.sum())
    seeds = {"sphere": cfg.seed, "mc_oracle": mc_seed}
    resolved = {"chance": asdict(cfg), "mc_draws": _mc_draws(config.solver)}
    return {"control": u}, metrics, [], seeds, resolved


def _run_p_sweep(spec, config):
    cfg = _chance_config(config.solver)
    levels = list(config.solver.get("levels", [0.9, 0.95, 0.99, 0.999]))
    results = p_sweep(spec, cfg, levels)
    controls = {f"control_p{p:g}": u for p, u, _ in results}
    metrics = {
        "levels": levels,
        "objectives": [f_val for _, _, f_val in results],
    }
    rows = [[p, f_val] for p, _, f_val in results]
    if spec.support.kind == "ellipsoid":
        u_rob, rob_report = solve_robust(spec)
        controls["control_robust"] = u_rob
        metrics["distances_to_robust"] = [
            (u - u_rob).norm_l2() for _, u, _ in results
        ]
        for row, dist in zip(rows, metrics["distances_to_robust"]):
            row.append(dist)
        metrics["robust_objective"] = rob_report.objective
    header = ["p", "objective"] + (
        ["distance_to_robust"] if spec.support.kind == "ellipsoid" else []
    )
    tables = [("sweep", header, rows)]
    seeds = {"sphere": cfg.seed}
    return controls, metrics, tables, seeds, {"chance": asdict(cfg), "levels": levels}


def _run_my_path(spec, config):
    if "n_cells" not in config.problem_overrides:
        spec = replace(spec, n_cells=MY_PATH_GRID_DEFAULT)
    sched = _schedule(config.solver)
    op = LaplacianOperator(spec.grid())
    u0 = Field.constant(op.grid, -1.0)
    u, trace = path_follow(spec, op, sched, u0)
    if not trace.converged:
        raise NonconvergenceError(
            "penalty path stopped before reaching the inner tolerance"
        )
    rows = [
        [s.stage, s.gamma, s.n_scenarios, s.value, s.grad_norm, s.inner_iterations,
         s.violation if s.violation is not None else float("nan")]
        for s in trace.stages
    ]
    metrics = {
        "scheme": sched.scheme,
        "objective": objective(u),
        "violations": [s.violation for s in trace.stages],
        "values": [s.value for s in trace.stages],
        "inner_iterations": [s.inner_iterations for s in trace.stages],
    }
    if spec.support.kind == "ellipsoid":
        metrics["violation"] = trace.stages[-1].violation
    tables = [
        (
            "path_trace",
            ["stage", "gamma", "n_scenarios", "value", "grad_norm", "inner_iterations", "violation"],
            rows,
        )
    ]
    return (
        {"control": u},
        metrics,
        tables,
        {"scenarios": sched.seed},
        {"schedule": asdict(sched), "grid_n_cells": spec.n_cells},
    )


def _run_robust(spec, config):
    u, report = solve_robust(spec, RobustSolveConfig())
    op = LaplacianOperator(spec.grid())
    t_grid = config.solver.get("needle_offsets")
    if t_grid is None:
        t_grid = np.linspace(-2.0, 2.0, 81)
    scan = needle_scan(u, None, t_grid, spec, op=op)
    metrics = {
        "objective": report.objective,
        "h_value": report.h_value,
        "kkt_residual": report.kkt_residual,
        "active_node_count": int(len(report.active_nodes)),
        "needle_slope_left": scan.slope_left,
        "needle_slope_right": scan.slope_right,
        "needle_slope_gap": scan.slope_gap,
        "violation": max(0.0, report.h_value),
    }
    tables = [
        (
            "needle_scan",
            ["t", "h"],
            [[t, v] for t, v in zip(scan.offsets, scan.values)],
        )
    ]
    return {"control": u}, metrics, tables, {}, {"robust": asdict(RobustSolveConfig())}


def _run_compare_all(spec, config):
    if spec.support.kind != "ellipsoid":
        raise ConfigError("compare_all needs a truncated (ellipsoid) problem")
    op = LaplacianOperator(spec.grid())
    controls = {}
    rows = []

    cfg = _chance_config(config.solver, defaults={"p_level": 1.0})
    u_prob, report = solve_chance(spec, cfg)
    if not report.converged:
        raise NonconvergenceError(report.message)
    controls["control_prob_p1"] = u_prob
    rows.append(["probability_p1", objective(u_prob), constraint_violation(spec, op, u_prob)])

    my_spec = spec
    if "n_cells" not in config.problem_overrides:
        my_spec = replace(spec, n_cells=MY_PATH_GRID_DEFAULT)
    my_op = LaplacianOperator(my_spec.grid())
    for scheme in ("distribution", "interior", "boundary"):
        sched = _schedule({**config.solver, "scheme": scheme})
        u_my, trace = path_follow(my_spec, my_op, sched, Field.constant(my_op.grid, -1.0))
        if not trace.converged:
            raise NonconvergenceError(f"penalty path ({scheme}) did not converge")
        controls[f"control_my_{scheme}"] = u_my
        rows.append([f"my_{scheme}", objective(u_my), constraint_violation(my_spec, my_op, u_my)])

    u_rob, rob_report = solve_robust(spec)
    controls["control_robust"] = u_rob
    rows.append(["robust", rob_report.objective, max(0.0, rob_report.h_value)])

    metrics = {
        "methods": [r[0] for r in rows],
        "objectives": [r[1] for r in rows],
        "violations": [r[2] for r in rows],
    }
    tables = [("comparison", ["method", "objective", "violation"], rows)]
    seeds = {"sphere": cfg.seed, "scenarios": config.solver.get("seed", 0)}
    return controls, metrics, tables, seeds, {"chance": asdict(cfg)}


_RUNNERS = {
    "prob_1d": _run_prob,
    "prob_2d": _run_prob,
    "p_sweep": _run_p_sweep,
    "my_path": _run_my_path,
    "robust": _run_robust,
    "compare_all": _run_compare_all,
}


def _format(value):
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, str):
        return value
    return format(float(value), ".17g")


def _write_control_csv(path, field_obj: Field):
    grid = field_obj.grid
    header = "x,u" if grid.dim == 1 else "x,y,u"
    lines = [header]
    nodes = grid.nodes
    for row, value in zip(nodes, field_obj.values):
        coords = ",".join(_format(c) for c in row)
        lines.append(f"{coords},{_format(value)}")
    path.write_text("\n".join(lines) + "\n")


def _write_table_csv(path, header, rows):
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(_format(v) for v in row))
    path.write_text("\n".join(lines) + "\n")


def _gnuplot_script(stem, dim):
    if dim == 1:
        plot = f"plot '{stem}.csv' using 1:2 with lines title '{stem}'"
    else:
        plot = f"splot '{stem}.csv' using 1:2:3 with points palette title '{stem}'"
    return "\n".join(
        [
            "set datafile separator ','",
            "set key autotitle columnhead",
            f"set terminal pngcairo size 800,600",
            f"set output '{stem}.png'",
            plot,
            "",
        ]
    )


def run(config: RunConfig) -> RunResult:
    """Execute one experiment and write its result files."""
    start = time.perf_counter()
    spec = _build_spec(config)
    controls, metrics, tables, seeds, resolved = _RUNNERS[config.experiment](spec, config)
    wall = time.perf_counter() - start

    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = []
    for name, field_obj in controls.items():
        path = out / f"{name}.csv"
        _write_control_csv(path, field_obj)
        files.append(str(path))
        if config.emit_gnuplot:
            gp = out / f"{name}.gp"
            gp.write_text(_gnuplot_script(name, field_obj.grid.dim))
            files.append(str(gp))
    for name, header, rows in tables:
        path = out / f"{name}.csv"
        _write_table_csv(path, header, rows)
        files.append(str(path))

    summary = {
        "experiment": config.experiment,
        "config": {
            "problem": {"name": config.problem, **config.problem_overrides},
            "problem_resolved": _spec_echo(spec),
            "solver": resolved,
            "output": {"dir": config.out_dir, "emit_gnuplot": config.emit_gnuplot},
        },
        "metrics": metrics,
        "seeds": seeds,
    }
    summary_path = out / "summary.json"
    summary_path.write_text(json.dumps(summary, indent=2, sort_keys=True, default=float) + "\n")
    files.append(str(summary_path))

    return RunResult(
        experiment=config.experiment,
        out_dir=str(out),
        controls=controls,
        metrics=metrics,
        seeds=seeds,
        files=files,
        wall_clock=wall,
    )


def cli_main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="chancectl",
        description="Run the bundled chance-constrained control experiments.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run_parser = sub.add_parser("run", help="run an experiment config")
    run_parser.add_argument("config", help="TOML experiment description")
    run_parser.add_argument("--experiment", choices=EXPERIMENTS)
    run_parser.add_argument("--seed", type=int)
    run_parser.add_argument("--out", help="output directory")
    run_parser.add_argument(
        "--emit-gnuplot", action="store_true", help="write companion plot scripts"
    )

    val_parser = sub.add_parser("validate", help="check a config without running it")
    val_parser.add_argument("config")

    args = parser.parse_args(argv)

    try:
        if args.command == "validate":
            config = load_config(args.config)
            print(f"ok: experiment={config.experiment} problem={config.problem}")
            return 0
        config = load_config(
            args.config,
            experiment=args.experiment,
            seed=args.seed,
            out_dir=args.out,
            emit_gnuplot=args.emit_gnuplot or None,
        )
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2

    try:
        result = run(config)
    except NonconvergenceError as exc:
        print(f"solver did not converge: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"i/o failure: {exc}", file=sys.stderr)
        return 4

    print(f"wrote {len(result.files)} files to {result.out_dir} "
          f"({result.wall_clock:.1f}s)")
    return 0
