"""Covariance models, the chi radial law, and sphere/ellipsoid samplers.

Everything here is seeded and stateless: a (seed, index) pair fully
determines each draw, so samples can be produced in any order or in
parallel with identical results.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import gammainc, gammaln, ndtri
from scipy.stats import qmc

# Consecutive rejections tolerated before rejection sampling is declared
# stalled (support radius too small for the proposal law).
REJECTION_STALL_LIMIT = 1_000_000


class CovarianceModel:
    """Symmetric positive definite covariance with a cached Cholesky root."""

    def __init__(self, sigma):
        sigma = np.array(sigma, dtype=float)
        if sigma.ndim != 2 or sigma.shape[0] != sigma.shape[1]:
            raise ValueError("covariance must be a square matrix")
        if not np.allclose(sigma, sigma.T, rtol=1e-12, atol=0.0):
            raise ValueError("covariance must be symmetric")
        try:
            self.sqrt_factor = np.linalg.cholesky(sigma)
        except np.linalg.LinAlgError as exc:
            raise ValueError("covariance must be positive definite") from exc
        self.m = sigma.shape[0]
        self.sigma = sigma

    @classmethod
    def geometric(cls, m, variance=9.0, decay=0.6):
        """Covariance with entries variance * decay**|i-j|."""
        idx = np.arange(m)
        return cls(variance * decay ** np.abs(idx[:, None] - idx[None, :]))

    def mahalanobis_sq(self, z):
        """z^T Sigma^-1 z for one vector or for each row of a matrix."""
        z = np.asarray(z, dtype=float)
        single = z.ndim == 1
        y = solve_triangular(self.sqrt_factor, np.atleast_2d(z).T, lower=True)
        out = np.einsum("ij,ij->j", y, y)
        return float(out[0]) if single else out


@dataclass(frozen=True)
class SupportSpec:
    """Support of the noise law: all of R^m, or a Mahalanobis ball.

    The ellipsoid is {z | z^T Sigma^-1 z <= radius**2}.
    """

    kind: str = "full_space"
    radius: float = 6.0

    def __post_init__(self):
        if self.kind not in ("full_space", "ellipsoid"):
            raise ValueError(f"unknown support kind {self.kind!r}")
        if self.kind == "ellipsoid" and not self.radius > 0:
            raise ValueError("ellipsoid radius must be positive")

    @classmethod
    def full_space(cls):
        return cls(kind="full_space")

    @classmethod
    def ellipsoid(cls, radius=6.0):
        return cls(kind="ellipsoid", radius=float(radius))


class ChiDistribution:
    """Chi law with m degrees of freedom (norm of a standard Gaussian)."""

    def __init__(self, dof):
        if dof < 1:
            raise ValueError("degrees of freedom must be >= 1")
        self.dof = int(dof)
        self._log_norm = (0.5 * self.dof - 1.0) * np.log(2.0) + gammaln(0.5 * self.dof)

    def pdf(self, t):
        t = np.asarray(t, dtype=float)
        if np.any(t < 0):
            raise ValueError("radius must be nonnegative")
        with np.errstate(divide="ignore", invalid="ignore"):
            out = np.exp((self.dof - 1) * np.log(t) - 0.5 * t * t - self._log_norm)
        if self.dof == 1:
            out = np.where(t == 0.0, np.exp(-self._log_norm), out)
        out = np.where(np.isinf(t), 0.0, out)
        return float(out) if out.ndim == 0 else out

    def cdf(self, t):
        t = np.asarray(t, dtype=float)
        if np.any(t < 0):
            raise ValueError("radius must be nonnegative")
        out = gammainc(0.5 * self.dof, 0.5 * t * t)
        return float(out) if out.ndim == 0 else out


def chi_eval(dist: ChiDistribution, t):
    """(pdf, cdf) of the chi law at radius t (t = +inf allowed)."""
    return dist.pdf(t), dist.cdf(t)


def sample_sphere(m, n, mode="qmc", seed=0):
    """n points approximately uniform on the unit sphere in R^m.

    mode "qmc": scrambled Halton points pushed through the standard
    normal quantile, normalised, and completed with their antipodes
    (plain Halton correlates badly across dimensions at small sample
    sizes, and the antithetic pairing cancels the odd part of any
    integrand exactly).  mode "mc": pseudorandom Gaussians, normalised.
    Both modes are deterministic given (mode, seed, n, m).
    """
    if m < 1 or n < 1:
        raise ValueError("need m >= 1 and n >= 1")
    if mode == "qmc":
        engine = qmc.Halton(d=m, scramble=True, seed=seed)

        def gen(k):
            return ndtri(engine.random(k))

        half = _unit_block(gen, (n + 1) // 2, m)
        return np.vstack([half, -half])[:n]
    if mode == "mc":
        rng = np.random.default_rng(seed)

        def gen(k):
            return rng.standard_normal((k, m))

        return _unit_block(gen, n, m)
    raise ValueError(f"unknown sphere sampling mode {mode!r}")


def _unit_block(gen, n, m):
    out = np.empty((0, m))
    while out.shape[0] < n:
        block = gen(n - out.shape[0])
        norms = np.linalg.norm(block, axis=1)
        keep = norms > 0.0  # degenerate points are skipped and regenerated
        out = np.vstack([out, block[keep] / norms[keep, None]])
    return out


_REJECTION_BLOCK = 256


def sample_support(cov, support, n, scheme="distribution", seed=0, radial="uniform"):
    """n noise vectors for scenario-based runs.

    scheme "distribution": the Gaussian law N(0, Sigma), rejection-
    truncated to the support ellipsoid when one is set.
    scheme "interior": R * tau * Sigma^{1/2} v with tau ~ U[0,1] and v
    uniform on the sphere.  radial="volume" uses tau = U**(1/m) instead,
    which makes the sample volume-uniform on the ellipsoid.
    scheme "boundary": tau fixed to 1 (uniform on the ellipsoid surface).

    Randomness is consumed row by row, so for a fixed (scheme, seed) the
    first k of n samples do not depend on n: growing batches are nested.
    """
    if n < 1:
        raise ValueError("need n >= 1")
    rng = np.random.default_rng(seed)
    m = cov.m
    if scheme == "distribution":
        if support.kind == "full_space":
            return rng.standard_normal((n, m)) @ cov.sqrt_factor.T
        r_sq = support.radius**2
        out = []
        got = 0
        stall = 0
        while got < n:
            # fixed proposal block size keeps the stream independent of n
            block = rng.standard_normal((_REJECTION_BLOCK, m)) @ cov.sqrt_factor.T
            accept = cov.mahalanobis_sq(block) <= r_sq
            idx = np.nonzero(accept)[0]
            if idx.size == 0:
                stall += block.shape[0]
            else:
                stall = block.shape[0] - int(idx[-1]) - 1
                take = block[idx[: n - got]]
                out.append(take)
                got += take.shape[0]
            if stall > REJECTION_STALL_LIMIT:
                raise ValueError(
                    "rejection sampling stalled: the support radius is too "
                    "small for the Gaussian proposal"
                )
        return np.vstack(out)

    if scheme in ("interior", "boundary"):
        if support.kind != "ellipsoid":
            raise ValueError(f"scheme {scheme!r} requires an ellipsoid support")
        if radial not in ("uniform", "volume"):
            raise ValueError(f"unknown radial law {radial!r}")
        # one (m+1)-column draw per sample: direction plus radial coordinate
        block = rng.standard_normal((n, m + 1))
        norms = np.linalg.norm(block[:, :m], axis=1)
        while np.any(norms == 0.0):  # degenerate rows are redrawn
            bad = norms == 0.0
            block[bad, :m] = rng.standard_normal((int(bad.sum()), m))
            norms = np.linalg.norm(block[:, :m], axis=1)
        v = block[:, :m] / norms[:, None]
        if scheme == "boundary":
            tau = np.ones(n)
        else:
            tau = ndtr(block[:, m])
            if radial == "volume":
                tau = tau ** (1.0 / m)
        return (support.radius * tau)[:, None] * (v @ cov.sqrt_factor.T)

    raise ValueError(f"unknown sampling scheme {scheme!r}")
