"""Quadratic state-excess penalisation with scenario averaging.

The hard requirement "state <= alpha for every noise realisation" is
replaced by adding gamma * mean_i ||max(0, y_i - alpha)||^2 to the
objective over a frozen batch of noise scenarios.  A path-following
loop increases gamma geometrically while enlarging the batch, warm-
starting plain gradient descent with diminishing steps at each stage.
Scenario batches can be drawn from the noise distribution itself, or
uniformly from its support ellipsoid, or from just the boundary of the
support.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np

from .distributions import sample_support
from .pde import LaplacianOperator, basic_states, precompute_states
from .problem import Field, ProblemSpec
from .robust import robust_eval


@dataclass
class PathSchedule:
    """Stage-k penalty gamma_base**k with scenario_base**k scenarios.

    Inner iterations use steps c_step / iteration_index and stop once the
    L2 gradient norm falls below inner_tol (or at max_inner, which is
    reported as nonconvergence).  The optional Armijo safeguard halves a
    step until it does not increase the value; the plain schedule matches
    the diminishing-step analysis for strongly convex objectives.
    """

    n_stages: int = 9
    gamma_base: float = 10.0
    scenario_base: int = 3
    c_step: float = 4.0
    inner_tol: float = 1e-4
    scheme: str = "distribution"
    seed: int = 0
    max_inner: int = 100_000
    armijo: bool = False
    radial: str = "uniform"

    def __post_init__(self):
        if self.n_stages < 1:
            raise ValueError("need at least one stage")
        if self.gamma_base < 1.0:
            raise ValueError("penalty sequence must be nondecreasing")
        if self.scenario_base < 1:
            raise ValueError("scenario counts must be >= 1")
        if not self.inner_tol > 0:
            raise ValueError("inner tolerance must be positive")
        if self.scheme not in ("distribution", "interior", "boundary"):
            raise ValueError(f"unknown sampling scheme {self.scheme!r}")

    def gamma(self, k):
        return self.gamma_base**k

    def n_scenarios(self, k):
        return max(1, self.scenario_base**k)


def saa_value_grad(
    spec: ProblemSpec,
    op: LaplacianOperator,
    u: Field,
    scenarios,
    gamma,
    basics=None,
) -> Tuple[float, Field]:
    """Penalised value and its Riesz gradient for a frozen scenario batch.

        value = ||u||^2 + (gamma/N) sum_i ||max(0, y_i - alpha)||^2
        grad  = 2u - mean_i p_i,   A p_i = -2 gamma max(0, y_i - alpha)

    The scenario states y_i come from superposition (one mean-state solve
    plus cached basic states); the averaged adjoint is obtained from a
    single solve of the averaged right-hand side, which equals mean_i p_i
    by linearity.
    """
    z = np.atleast_2d(np.asarray(scenarios, dtype=float))
    if z.shape[0] < 1:
        raise ValueError("need a nonempty scenario batch")
    bundle = precompute_states(spec, op, u, basics=basics)
    excess = np.maximum(bundle.states_for(z) - spec.alpha, 0.0)
    w = op.grid.quad_weight
    value = u.inner(u) + (gamma / z.shape[0]) * float((excess * excess).sum()) * w
    adjoint_mean = op.solve_values(-2.0 * gamma * excess.mean(axis=0))
    return value, Field(op.grid, 2.0 * u.values - adjoint_mean)


@dataclass
class StageResult:
    stage: int
    gamma: float
    n_scenarios: int
    control: Field
    value: float
    grad_norm: float
    inner_iterations: int
    converged: bool
    violation: Optional[float]


@dataclass
class PathTrace:
    stages: List[StageResult]
    converged: bool


def path_follow(
    spec: ProblemSpec, op: LaplacianOperator, sched: PathSchedule, u0: Field
) -> Tuple[Field, PathTrace]:
    """Run the penalty path; returns the final control and per-stage trace.

    Each stage draws a fresh frozen scenario batch with the schedule's
    scheme, runs the inner descent to its tolerance, and records the
    exact worst-case constraint violation over the support ellipsoid.
    """
    if sched.scheme in ("interior", "boundary") and spec.support.kind != "ellipsoid":
        raise ValueError(f"scheme {sched.scheme!r} requires an ellipsoid support")
    grid = op.grid
    basics = basic_states(spec, op)
    # one sample stream sized for the last stage; stage k uses its prefix,
    # so each stage sees every scenario the previous ones saw
    pool = sample_support(
        spec.cov,
        spec.support,
        sched.n_scenarios(sched.n_stages - 1),
        scheme=sched.scheme,
        seed=sched.seed,
        radial=sched.radial,
    )

    u = u0.copy()
    stages = []
    all_converged = True
    for k in range(sched.n_stages):
        gamma = sched.gamma(k)
        scenarios = pool[: sched.n_scenarios(k)]
        value, grad = saa_value_grad(spec, op, u, scenarios, gamma, basics=basics)
        gnorm = grad.norm_l2()
        converged = gnorm < sched.inner_tol
        ell = 0
        while not converged and ell < sched.max_inner:
            ell += 1
            step = sched.c_step / ell
            if sched.armijo:
                u, value, grad = _armijo_step(
                    spec, op, u, scenarios, gamma, basics, value, grad, step
                )
            else:
                u = Field(grid, u.values - step * grad.values)
                value, grad = saa_value_grad(
                    spec, op, u, scenarios, gamma, basics=basics
                )
            if not np.isfinite(value):
                break
            gnorm = grad.norm_l2()
            converged = gnorm < sched.inner_tol

        if not converged:
            all_converged = False
            warnings.warn(
                f"stage {k} (gamma={gamma:g}) stopped after {ell} inner "
                f"iterations with gradient norm {gnorm:.3g}",
                RuntimeWarning,
                stacklevel=2,
            )
        violation = None
        if spec.support.kind == "ellipsoid":
            bundle = precompute_states(spec, op, u, basics=basics)
            ev = robust_eval(bundle, spec.cov, spec.support.radius, spec.alpha)
            violation = max(0.0, ev.h_value)
        stages.append(
            StageResult(
                stage=k,
                gamma=gamma,
                n_scenarios=sched.n_scenarios(k),
                control=u.copy(),
                value=value,
                grad_norm=gnorm,
                inner_iterations=ell,
                converged=converged,
                violation=violation,
            )
        )
        if not np.isfinite(value):
            break
    return u, PathTrace(stages=stages, converged=all_converged)


def _armijo_step(spec, op, u, scenarios, gamma, basics, value, grad, step):
    gnorm_sq = grad.inner(grad)
    for _ in range(60):
        trial = Field(op.grid, u.values - step * grad.values)
        t_value, t_grad = saa_value_grad(spec, op, trial, scenarios, gamma, basics=basics)
        if t_value <= value - 1e-4 * step * gnorm_sq:
            return trial, t_value, t_grad
        step *= 0.5
    return trial, t_value, t_grad
