"""Uniform-feasibility probability and its gradient by ray decomposition.

A centered Gaussian vector factors into a uniform direction v on the
unit sphere and an independent chi-distributed radius.  Along the ray
z = r * Sigma^{1/2} v the nodal state is affine in r,

    state(r) = mean_state + r * slope_v,      slope_v = (Sigma^{1/2} v) . basis,

so the largest feasible radius has the closed form

    rho(v) = min over nodes with slope > 0 of (alpha - mean_state) / slope,

or +inf when no node has positive slope.  The probability that the state
stays below alpha everywhere is the spherical average of the chi mass of
[0, rho(v)], and each finite-rho direction contributes an explicit
gradient term built from the Green row of the binding node.  Both are
approximated with one frozen sample of directions, shared between value
and gradient so the expensive radial scans are done once.

Truncating the noise law to the Mahalanobis ball of radius R only clips
the feasible radial interval at R (the ray hits the ball boundary at
exactly r = R) and rescales by the chi mass of the ball, so the same
scan covers the truncated law.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .distributions import ChiDistribution, CovarianceModel
from .pde import LaplacianOperator, StateBundle, green_rows, precompute_states
from .problem import Field

TIE_TOL_DEFAULT = 1e-9


class StateConstraintError(RuntimeError):
    """The mean state touches or exceeds the threshold somewhere, so the
    radial representation is not valid at this control."""


@dataclass
class RadialResult:
    """Feasible radius along one ray and where it binds."""

    rho: float
    argmin_node: Optional[int]
    kappa_at_argmin: Optional[float]
    tie_nodes: np.ndarray


@dataclass
class SrdEstimate:
    """Sampled probability, its L2 gradient, and per-ray diagnostics."""

    prob: float
    grad: Field
    n_finite: int
    tie_fraction: float
    rho: np.ndarray
    argmin_nodes: np.ndarray  # -1 where rho is infinite
    tie_counts: np.ndarray


def _check_mean_state(mean_values, alpha):
    worst = float(mean_values.max())
    if worst >= alpha:
        raise StateConstraintError(
            f"mean state reaches {worst:.6g} >= threshold {alpha:.6g}; "
            "the control must first be pushed into the feasible region"
        )


def _ray_scan(bundle: StateBundle, cov: CovarianceModel, alpha, directions, tie_tol):
    """rho, binding node, binding slope and tie count for each direction."""
    ybar = bundle.mean_state.values
    _check_mean_state(ybar, alpha)
    directions = np.atleast_2d(np.asarray(directions, dtype=float))
    slopes = (directions @ cov.sqrt_factor.T) @ bundle.basis
    head = alpha - ybar  # > 0 by the check above
    with np.errstate(divide="ignore", invalid="ignore"):
        ratios = np.where(slopes > 0.0, head[None, :] / slopes, np.inf)
    rho = ratios.min(axis=1)
    arg = ratios.argmin(axis=1)
    finite = np.isfinite(rho)
    kappa = np.where(finite, slopes[np.arange(len(arg)), arg], np.nan)
    ties = np.zeros(len(rho), dtype=int)
    if finite.any():
        thresh = rho[finite] + tie_tol * (1.0 + rho[finite])
        ties[finite] = (ratios[finite] <= thresh[:, None]).sum(axis=1)
    arg = np.where(finite, arg, -1)
    return rho, arg, kappa, ties, finite


def radial_bound(
    bundle: StateBundle, cov: CovarianceModel, alpha, v, tie_tol=TIE_TOL_DEFAULT
) -> RadialResult:
    """Largest feasible radius along the ray of direction v."""
    rho, arg, kappa, _, finite = _ray_scan(bundle, cov, alpha, v, tie_tol)
    if not finite[0]:
        return RadialResult(np.inf, None, None, np.empty(0, dtype=int))
    # recompute the per-node ratios once to report the tie set as indices
    slopes = ((np.asarray(v, dtype=float) @ cov.sqrt_factor.T) @ bundle.basis).ravel()
    head = alpha - bundle.mean_state.values
    with np.errstate(divide="ignore"):
        ratios = np.where(slopes > 0.0, head / slopes, np.inf)
    tie_nodes = np.nonzero(ratios <= rho[0] + tie_tol * (1.0 + rho[0]))[0]
    return RadialResult(float(rho[0]), int(arg[0]), float(kappa[0]), tie_nodes)


def estimate(
    bundle: StateBundle,
    cov: CovarianceModel,
    alpha,
    directions,
    op: LaplacianOperator,
    mode="gaussian",
    radius=None,
    tie_tol=TIE_TOL_DEFAULT,
) -> SrdEstimate:
    """Probability estimate and L2 gradient from one direction sample.

    mode "gaussian" integrates the full chi radius; mode "truncated"
    clips each ray at `radius` and rescales by the chi mass of the ball.
    Ties in the binding node are resolved by first index, which selects a
    subgradient when the sampled function is not differentiable.
    """
    directions = np.atleast_2d(np.asarray(directions, dtype=float))
    if directions.shape[0] < 1:
        raise ValueError("need a nonempty direction sample")
    if mode == "gaussian":
        cut = np.inf
        scale = 1.0
    elif mode == "truncated":
        if radius is None or not radius > 0:
            raise ValueError("truncated mode needs a positive radius")
        cut = float(radius)
        scale = ChiDistribution(cov.m).cdf(cut) if np.isfinite(cut) else 1.0
    else:
        raise ValueError(f"unknown estimation mode {mode!r}")

    chi = ChiDistribution(cov.m)
    rho, arg, kappa, ties, finite = _ray_scan(bundle, cov, alpha, directions, tie_tol)
    n_dir = len(rho)

    # rho = inf rows give cdf(cut)/scale = 1 exactly, covering both modes
    per_ray = chi.cdf(np.minimum(rho, cut)) / scale
    prob = float(per_ray.mean())

    grid = bundle.mean_state.grid
    contributing = finite & (rho < cut)
    if contributing.any():
        weights = chi.pdf(rho[contributing]) / (scale * kappa[contributing])
        node_weight = np.bincount(
            arg[contributing], weights=weights, minlength=grid.n_interior
        )
        used = np.nonzero(node_weight)[0]
        grad_values = -(node_weight[used] @ green_rows(op, used)) / n_dir
    else:
        grad_values = np.zeros(grid.n_interior)

    n_finite = int(finite.sum())
    tie_fraction = float((ties[finite] >= 2).mean()) if n_finite else 0.0
    return SrdEstimate(
        prob=prob,
        grad=Field(grid, grad_values),
        n_finite=n_finite,
        tie_fraction=tie_fraction,
        rho=rho,
        argmin_nodes=arg,
        tie_counts=ties,
    )


def directional_derivative(est: SrdEstimate, h: Field) -> float:
    """Discrete L2 pairing of the estimated gradient with a direction."""
    return est.grad.inner(h)


def nondiff_fraction(est: SrdEstimate) -> float:
    """Fraction of finite-radius rays whose binding node is tied.

    Small values support treating the sampled probability as
    differentiable at the current control.
    """
    return est.tie_fraction


def mc_probability_oracle(spec, op, u, n_draws, seed=0, mode=None):
    """Plain Monte Carlo estimate of the feasibility probability.

    Draws noise from the Gaussian law (or its ellipsoid truncation when
    the problem declares one, or as forced by `mode`), forms states by
    superposition, and returns the feasible fraction with its binomial
    standard error.  Independent of the ray machinery above; used to
    validate it.
    """
    if n_draws < 1:
        raise ValueError("need at least one draw")
    if mode is None:
        mode = "truncated" if spec.support.kind == "ellipsoid" else "gaussian"
    if mode == "truncated" and spec.support.kind != "ellipsoid":
        raise ValueError("truncated oracle needs an ellipsoid support")
    bundle = precompute_states(spec, op, u)
    rng = np.random.default_rng(seed)
    cov = spec.cov
    r_sq = spec.support.radius**2 if mode == "truncated" else np.inf
    chunk = max(1, int(4_000_000 // max(op.grid.n_interior, 1)))
    hits = 0
    done = 0
    while done < n_draws:
        k = min(chunk, n_draws - done)
        z = rng.standard_normal((k, cov.m)) @ cov.sqrt_factor.T
        if mode == "truncated":
            z = z[cov.mahalanobis_sq(z) <= r_sq]
            if z.shape[0] == 0:
                continue
            z = z[: n_draws - done]
        states = bundle.states_for(z)
        hits += int((states.max(axis=1) <= spec.alpha).sum())
        done += z.shape[0]
    prob = hits / n_draws
    std_error = float(np.sqrt(prob * (1.0 - prob) / n_draws))
    return prob, std_error
