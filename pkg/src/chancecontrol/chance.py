"""Probability-constrained control solves.

Minimises ||u||^2 subject to prob(u) >= p, where prob is the sampled
uniform-feasibility probability from `srd` with one direction sample
frozen per solve.  The constraint is handled by an augmented Lagrangian
whose subproblems are solved by projected gradient descent with an
Armijo line search; box bounds on the control, when present, enter
through nodewise clamping.  A probability level of exactly 1 is run as
the truncated-noise problem at level 1 - 1e-6 (the exact level-1
constraint has no slack; the `robust` module provides that reference).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, replace
from typing import List, Optional, Tuple

import numpy as np

from .distributions import sample_sphere
from .pde import LaplacianOperator, basic_states, precompute_states
from .problem import Field, ProblemSpec
from .srd import StateConstraintError, estimate

P_ONE_SHIFT = 1e-6


@dataclass
class ChanceSolveConfig:
    """Solver knobs; `p_level=None` takes the level from the problem."""

    p_level: Optional[float] = None
    n_directions: int = 512
    sphere_mode: str = "qmc"
    seed: int = 0
    max_outer: int = 25
    multiplier0: float = 0.0
    penalty0: float = 10.0
    penalty_growth: float = 10.0
    inner_tol: float = 1e-6
    outer_tol: float = 1e-4
    max_inner: int = 400
    tie_tol: float = 1e-9

    def __post_init__(self):
        if self.p_level is not None and not 0.0 < self.p_level <= 1.0:
            raise ValueError("probability level must lie in (0, 1]")
        if self.n_directions < 1:
            raise ValueError("need at least one direction")
        if self.multiplier0 < 0 or not self.penalty0 > 0:
            raise ValueError("need multiplier0 >= 0 and penalty0 > 0")
        if not self.penalty_growth > 1:
            raise ValueError("penalty growth factor must exceed 1")
        if not (self.inner_tol > 0 and self.outer_tol > 0):
            raise ValueError("tolerances must be positive")


@dataclass
class ChanceReport:
    converged: bool
    outer_iterations: int
    p_target: float
    probability: float
    objective: float
    probability_history: List[float]
    objective_history: List[float]
    iterates: List[Field]
    active_lower: Optional[np.ndarray]
    active_upper: Optional[np.ndarray]
    sphere_sample_id: str
    tie_fraction: float
    message: str


def objective(u: Field) -> float:
    """Control cost ||u||^2 in the discrete L2 norm."""
    return u.inner(u)


def _clamp(values, bounds):
    if bounds is None:
        return values
    return np.clip(values, bounds[0], bounds[1])


def _ensure_interior(spec, op, u):
    """Shift the control down uniformly until the mean state clears alpha."""
    from .problem import _eval_on

    margin = 1e-3 * (1.0 + abs(spec.alpha))
    lift = op.solve_values(np.ones(op.grid.n_interior))
    f0_values = _eval_on(spec.f0, op.grid)
    values = _clamp(u.values.copy(), spec.control_bounds)
    for _ in range(200):
        ybar = op.solve_values(values + f0_values)
        top = int(np.argmax(ybar))
        if ybar[top] < spec.alpha - margin:
            return Field(op.grid, values)
        shift = (ybar[top] - (spec.alpha - 2.0 * margin)) / lift[top]
        values = _clamp(values - shift, spec.control_bounds)
    raise StateConstraintError(
        "could not push the mean state below the threshold; check bounds/alpha"
    )


def solve_chance(
    spec: ProblemSpec, cfg: ChanceSolveConfig, u0: Optional[Field] = None
) -> Tuple[Field, ChanceReport]:
    """Solve min ||u||^2 s.t. prob(u) >= p (optionally with box bounds).

    The direction sample is frozen for the whole solve, making the
    surrogate deterministic and the run reproducible from (seed, config).
    Candidate steps whose mean state reaches the threshold are rejected
    by the line search, which keeps the radial representation valid along
    the whole iterate path.
    """
    grid = spec.grid()
    op = LaplacianOperator(grid)
    basics = basic_states(spec, op)

    p_target = spec.p_level if cfg.p_level is None else cfg.p_level
    if p_target == 1.0:
        if spec.support.kind != "ellipsoid":
            raise ValueError("probability level 1 needs a truncated (ellipsoid) law")
        p_eff = 1.0 - P_ONE_SHIFT
    else:
        p_eff = p_target
    if spec.support.kind == "ellipsoid":
        mode, radius = "truncated", spec.support.radius
    else:
        mode, radius = "gaussian", None

    directions = sample_sphere(spec.m, cfg.n_directions, cfg.sphere_mode, cfg.seed)
    sample_id = (
        f"{cfg.sphere_mode}:m={spec.m}:K={cfg.n_directions}:seed={cfg.seed}"
    )

    def evaluate(u):
        bundle = precompute_states(spec, op, u, basics=basics)
        return estimate(
            bundle,
            spec.cov,
            spec.alpha,
            directions,
            op,
            mode=mode,
            radius=radius,
            tie_tol=cfg.tie_tol,
        )

    u = _ensure_interior(spec, op, u0 if u0 is not None else Field.zeros(grid))
    est = evaluate(u)

    lam = cfg.multiplier0
    mu = cfg.penalty0
    viol_prev = np.inf
    prob_history = []
    objective_history = []
    iterates = []
    converged = False
    message = ""
    outer_done = 0

    for outer in range(cfg.max_outer):
        u, est, inner_ok = _inner_descent(spec, op, evaluate, u, est, lam, mu, p_eff, cfg)
        outer_done = outer + 1
        c_val = est.prob - p_eff
        viol = max(0.0, -c_val)
        prob_history.append(est.prob)
        objective_history.append(objective(u))
        iterates.append(u.copy())
        lam_next = max(0.0, lam - mu * c_val)
        # feasible subproblem minimiser with a settled multiplier = KKT point
        settled = abs(lam_next - lam) <= 1e-2 * (1.0 + lam)
        if viol <= cfg.outer_tol and inner_ok and settled:
            lam = lam_next
            converged = True
            break
        lam = lam_next
        if viol > cfg.outer_tol and viol > 0.25 * viol_prev:
            mu *= cfg.penalty_growth
        if viol > 0.0:
            viol_prev = viol

    if not converged:
        message = (
            f"no feasible point within {cfg.max_outer} outer rounds: "
            f"prob={est.prob:.6f}, target={p_eff:.6f}"
        )
        warnings.warn(message, RuntimeWarning, stacklevel=2)

    if spec.control_bounds is not None:
        lo, hi = spec.control_bounds
        active_lower = u.values <= lo
        active_upper = u.values >= hi
    else:
        active_lower = active_upper = None

    report = ChanceReport(
        converged=converged,
        outer_iterations=outer_done,
        p_target=p_target,
        probability=est.prob,
        objective=objective(u),
        probability_history=prob_history,
        objective_history=objective_history,
        iterates=iterates,
        active_lower=active_lower,
        active_upper=active_upper,
        sphere_sample_id=sample_id,
        tie_fraction=est.tie_fraction,
        message=message,
    )
    return u, report


def _aug_value(u, est, lam, mu, p_eff):
    c = est.prob - p_eff
    shifted = max(0.0, lam - mu * c)
    return objective(u) + (shifted * shifted - lam * lam) / (2.0 * mu)


STAGNATION_PATIENCE = 15


def _inner_descent(spec, op, evaluate, u, est, lam, mu, p_eff, cfg):
    """Projected gradient on the AL subproblem.

    Steps start from a Barzilai-Borwein guess (the subproblem turns
    badly conditioned as the penalty grows) and are safeguarded by a
    projected Armijo backtracking line search.  The surrogate constraint
    has gradient kinks wherever a ray's binding node is tied, so besides
    the (scale-aware) projected-gradient test the loop also accepts a
    run of value-stagnant iterations as having reached a kink bottom.
    """
    bounds = spec.control_bounds
    grid = op.grid
    w = grid.quad_weight

    def al_grad(u_cur, est_cur):
        theta = max(0.0, lam - mu * (est_cur.prob - p_eff))
        return 2.0 * u_cur.values - theta * est_cur.grad.values, theta

    value = _aug_value(u, est, lam, mu, p_eff)
    grad, theta = al_grad(u, est)
    step = 1.0 / (2.0 + mu)
    prev_values = None
    prev_grad = None
    stagnant = 0
    for _ in range(cfg.max_inner):
        projected = _clamp(u.values - grad, bounds)
        diff = u.values - projected
        pg_norm = float(np.sqrt((diff @ diff) * w))
        scale = 1.0 + 2.0 * u.norm_l2() + theta * est.grad.norm_l2()
        if pg_norm <= cfg.inner_tol * scale:
            return u, est, True
        if stagnant >= STAGNATION_PATIENCE:
            return u, est, True

        if prev_values is not None:
            du = u.values - prev_values
            dg = grad - prev_grad
            denom = float(du @ dg)
            if denom > 0.0:
                step = float(np.clip((du @ du) / denom, 1e-10, 1e8))

        accepted = False
        trial_step = step
        for _ in range(60):
            trial_values = _clamp(u.values - trial_step * grad, bounds)
            decrease = float(((u.values - trial_values) @ grad) * w)
            if decrease <= 0.0:
                break
            try:
                trial_est = evaluate(Field(grid, trial_values))
            except StateConstraintError:
                trial_step *= 0.5
                continue
            trial = Field(grid, trial_values)
            trial_value = _aug_value(trial, trial_est, lam, mu, p_eff)
            if trial_value <= value - 1e-4 * decrease:
                prev_values, prev_grad = u.values, grad
                if trial_value >= value - 1e-10 * (1.0 + abs(value)):
                    stagnant += 1
                else:
                    stagnant = 0
                u, est, value = trial, trial_est, trial_value
                grad, theta = al_grad(u, est)
                accepted = True
                break
            trial_step *= 0.5
        if not accepted:
            # no Armijo descent along the (sub)gradient: kink bottom
            return u, est, True
    return u, est, False


def p_sweep(spec: ProblemSpec, cfg: ChanceSolveConfig, levels):
    """Warm-started solves over increasing probability levels.

    Returns a list of (p, control, objective) triples.  Level 1 is only
    accepted when the noise law is truncated to an ellipsoid.
    """
    levels = list(levels)
    if not levels:
        raise ValueError("need at least one probability level")
    if any(not 0.0 < p <= 1.0 for p in levels):
        raise ValueError("levels must lie in (0, 1]")
    if any(b <= a for a, b in zip(levels, levels[1:])):
        raise ValueError("levels must be strictly increasing")
    if levels[-1] == 1.0 and spec.support.kind != "ellipsoid":
        raise ValueError("probability level 1 needs a truncated (ellipsoid) law")

    out = []
    u = None
    for p in levels:
        u, report = solve_chance(spec, replace(cfg, p_level=p), u0=u)
        if not report.converged:
            warnings.warn(
                f"sweep level p={p} did not converge", RuntimeWarning, stacklevel=2
            )
        out.append((p, u, objective(u)))
    return out
