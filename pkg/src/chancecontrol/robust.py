"""Sample-free worst-case solver over an ellipsoidal noise support.

For noise restricted to the Mahalanobis ball z^T Sigma^-1 z <= R^2 the
inner maximisation of the state at a node x is analytic: with
c(x) = (basic_state_i(x))_i the worst noise is z*(x) = R Sigma c / sqrt(c^T Sigma c)
and the worst-case state is

    worst(x) = mean_state(x) + R * sqrt(c(x)^T Sigma c(x)).

The worst-case constraint function h(u) = max_x worst(x) - alpha is
convex and affine in u through the mean state, so requiring it to be
nonpositive is one linear constraint per grid node and the minimal-norm
control is a convex QP.  It is solved here through its nonnegatively
constrained dual, handled by an active-set least-squares method, with a
plain subgradient descent kept alongside for cross-validation.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np
from scipy.optimize import nnls

from .distributions import CovarianceModel
from .pde import LaplacianOperator, StateBundle, basic_states, precompute_states
from .problem import Field, ProblemSpec, _eval_on

ACTIVE_TIE_TOL = 1e-8


@dataclass
class RobustEval:
    """Worst-case excess of the state over the threshold."""

    h_value: float
    active_nodes: np.ndarray
    worst_z_per_node: np.ndarray  # (n_interior, m)
    worst_state: Field


def worst_case_z(cov: CovarianceModel, radius, c) -> np.ndarray:
    """Maximiser of c^T z over the Mahalanobis ball of the given radius.

    Returns the origin when c = 0 (any feasible point maximises).
    """
    c = np.asarray(c, dtype=float)
    if np.all(c == 0.0):
        return np.zeros(cov.m)
    sc = cov.sigma @ c
    return (float(radius) / np.sqrt(c @ sc)) * sc


def _amplitudes(basis, cov):
    # sqrt(c^T Sigma c) per node for c = basis column
    return np.linalg.norm(cov.sqrt_factor.T @ basis, axis=0)


def robust_eval(
    bundle: StateBundle, cov: CovarianceModel, radius, alpha, tie_tol=ACTIVE_TIE_TOL
) -> RobustEval:
    """Evaluate the worst-case constraint at the bundle's control."""
    amp = _amplitudes(bundle.basis, cov)
    worst = bundle.mean_state.values + float(radius) * amp
    top = float(worst.max())
    active = np.nonzero(worst >= top - tie_tol * (1.0 + abs(top)))[0]
    with np.errstate(divide="ignore", invalid="ignore"):
        scale = np.where(amp > 0.0, float(radius) / amp, 0.0)
    worst_z = ((cov.sigma @ bundle.basis) * scale[None, :]).T
    return RobustEval(
        h_value=top - float(alpha),
        active_nodes=active,
        worst_z_per_node=worst_z,
        worst_state=Field(bundle.mean_state.grid, worst),
    )


@dataclass
class RobustSolveConfig:
    tie_tol: float = ACTIVE_TIE_TOL
    method: str = "active_set"  # or "subgradient"
    subgradient_steps: int = 200_000
    subgradient_penalty: float = 50.0

    def __post_init__(self):
        if self.method not in ("active_set", "subgradient"):
            raise ValueError(f"unknown robust method {self.method!r}")


@dataclass
class RobustReport:
    objective: float
    h_value: float
    kkt_residual: float
    active_nodes: np.ndarray
    multipliers: np.ndarray
    method: str


def solve_robust(
    spec: ProblemSpec, cfg: Optional[RobustSolveConfig] = None
) -> Tuple[Field, RobustReport]:
    """Minimal-L2-norm control keeping the worst-case state below alpha.

    Solves  min ||u||^2  s.t.  mean_state_u(x_j) + offset_j <= alpha  at
    every interior node, where offset_j is the analytic worst-case noise
    contribution.  The dual is a nonnegative least-squares problem solved
    by an active-set method; the primal control is recovered from the
    multipliers, making the stationarity condition exact by construction.
    """
    cfg = cfg or RobustSolveConfig()
    if spec.support.kind != "ellipsoid":
        raise ValueError("the worst-case solver needs an ellipsoid support")
    if spec.control_bounds is not None:
        raise ValueError("control bounds are not supported by the worst-case solver")
    grid = spec.grid()
    op = LaplacianOperator(grid)
    basics = basic_states(spec, op)
    basis = np.stack([f.values for f in basics])
    amp = _amplitudes(basis, spec.cov)
    y_f0 = op.solve_values(_eval_on(spec.f0, grid))
    bound = spec.alpha - spec.support.radius * amp - y_f0

    w = grid.quad_weight
    green = op.dense_inverse()  # constraint matrix: (green @ u)_j <= bound_j

    if cfg.method == "subgradient":
        u_values = _subgradient_descent(spec, op, basics, cfg)
        multipliers = np.zeros(grid.n_interior)
    else:
        # dual of min w u.u s.t. G u <= b:  min_{lam >= 0} |M lam - d|^2
        # with M = G^T / (2 sqrt(w)) and d = -sqrt(w) A b
        m_mat = green.T / (2.0 * np.sqrt(w))
        d_vec = -np.sqrt(w) * (op.matrix @ bound)
        multipliers, _ = nnls(m_mat, d_vec)
        u_values = -(green.T @ multipliers) / (2.0 * w)

    residual = green @ u_values - bound
    feas = float(max(residual.max(), 0.0))
    stat = 2.0 * u_values + (green.T @ multipliers) / w
    stat_norm = float(np.sqrt((stat @ stat) * w))
    comp = float(np.abs(multipliers * residual).max()) if len(multipliers) else 0.0
    kkt = max(stat_norm, feas, comp) if cfg.method == "active_set" else feas

    u = Field(grid, u_values)
    bundle = precompute_states(spec, op, u, basics=basics)
    ev = robust_eval(bundle, spec.cov, spec.support.radius, spec.alpha, cfg.tie_tol)
    report = RobustReport(
        objective=u.inner(u),
        h_value=ev.h_value,
        kkt_residual=kkt,
        active_nodes=ev.active_nodes,
        multipliers=multipliers,
        method=cfg.method,
    )
    return u, report


def _subgradient_descent(spec, op, basics, cfg):
    """Exact-penalty subgradient descent; slow cross-check for the QP."""
    grid = op.grid
    w = grid.quad_weight
    green = op.dense_inverse()
    basis = np.stack([f.values for f in basics])
    amp = _amplitudes(basis, spec.cov)
    y_f0 = op.solve_values(_eval_on(spec.f0, grid))
    offset = spec.support.radius * amp + y_f0 - spec.alpha

    u = np.zeros(grid.n_interior)
    best = u.copy()
    best_val = np.inf
    for ell in range(1, cfg.subgradient_steps + 1):
        worst = green @ u + offset
        j = int(worst.argmax())
        h = float(worst[j])
        val = (u @ u) * w + cfg.subgradient_penalty * max(h, 0.0)
        if val < best_val:
            best_val = val
            best = u.copy()
        sub = 2.0 * u
        if h > 0.0:
            sub = sub + cfg.subgradient_penalty * green[j] / w
        u = u - (1.0 / ell) * sub
    return best


@dataclass
class NeedleScan:
    """Worst-case constraint along a needle perturbation of a control."""

    offsets: np.ndarray
    values: np.ndarray
    slope_left: float
    slope_right: float

    @property
    def slope_gap(self):
        return self.slope_right - self.slope_left


def needle_scan(
    u_star: Field, span, t_grid, spec: ProblemSpec, op: Optional[LaplacianOperator] = None
) -> NeedleScan:
    """h(u* + t on a node span) for each t; probes nonsmoothness at t=0.

    span is a (start, stop) half-open node-index range; None selects the
    middle 5% of nodes.  The one-sided difference quotients at t = 0 are
    taken from the smallest positive/negative offsets in t_grid.
    """
    grid = u_star.grid
    if op is None:
        op = LaplacianOperator(grid)
    n = grid.n_interior
    if span is None:
        width = max(1, round(0.05 * n))
        start = (n - width) // 2
        span = (start, start + width)
    start, stop = span
    if not (0 <= start < stop <= n):
        raise ValueError(f"span {span} outside the grid's 0..{n}")

    bundle = precompute_states(spec, op, u_star)
    base = robust_eval(bundle, spec.cov, spec.support.radius, spec.alpha).worst_state
    indicator = np.zeros(n)
    indicator[start:stop] = 1.0
    response = op.solve_values(indicator)

    t_grid = np.asarray(sorted(t_grid), dtype=float)
    values = (base.values[None, :] + t_grid[:, None] * response[None, :]).max(
        axis=1
    ) - spec.alpha
    h0 = float(base.values.max() - spec.alpha)

    pos = t_grid[t_grid > 0]
    neg = t_grid[t_grid < 0]
    slope_right = np.nan
    slope_left = np.nan
    if pos.size:
        tp = float(pos.min())
        hp = float((base.values + tp * response).max() - spec.alpha)
        slope_right = (hp - h0) / tp
    if neg.size:
        tn = float(neg.max())
        hn = float((base.values + tn * response).max() - spec.alpha)
        slope_left = (h0 - hn) / (-tn)
    return NeedleScan(t_grid, values, slope_left, slope_right)
