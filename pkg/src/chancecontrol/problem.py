"""Problem data: grids, nodal fields, and the randomly forced source term.

The control problem lives on the open unit interval or square with a
homogeneous Dirichlet boundary.  All grid functions are represented by
their values at interior nodes only, with a single uniform quadrature
weight, so discrete L2 inner products are plain weighted dot products.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Tuple

import numpy as np

from .distributions import CovarianceModel, SupportSpec


class Grid:
    """Uniform interior-node grid on (0,1) or (0,1)^2.

    n_cells is the number of intervals per axis; interior nodes sit at
    i/n_cells, i = 1..n_cells-1, so there are (n_cells-1)**dim of them.
    """

    def __init__(self, dim, n_cells):
        if dim not in (1, 2):
            raise ValueError("dim must be 1 or 2")
        if n_cells < 2:
            raise ValueError("need at least 2 cells per axis")
        self.dim = int(dim)
        self.n_cells = int(n_cells)
        self.dx = 1.0 / self.n_cells
        self.quad_weight = self.dx**self.dim
        axis = np.arange(1, self.n_cells) / self.n_cells
        if dim == 1:
            self.coords = (axis,)
        else:
            xx, yy = np.meshgrid(axis, axis, indexing="ij")
            self.coords = (xx.ravel(), yy.ravel())
        self.n_interior = (self.n_cells - 1) ** self.dim

    @property
    def nodes(self):
        """Interior node coordinates, shape (n_interior, dim)."""
        return np.column_stack(self.coords)

    def __eq__(self, other):
        return (
            isinstance(other, Grid)
            and self.dim == other.dim
            and self.n_cells == other.n_cells
        )

    def __hash__(self):
        return hash((self.dim, self.n_cells))

    def __repr__(self):
        return f"Grid(dim={self.dim}, n_cells={self.n_cells})"


@dataclass
class Field:
    """A grid function: one value per interior node."""

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.grid.n_interior,):
            raise ValueError(
                f"field has {self.values.shape} values, "
                f"grid has {self.grid.n_interior} interior nodes"
            )

    @classmethod
    def zeros(cls, grid):
        return cls(grid, np.zeros(grid.n_interior))

    @classmethod
    def constant(cls, grid, value):
        return cls(grid, np.full(grid.n_interior, float(value)))

    def norm_l2(self):
        return float(np.sqrt((self.values @ self.values) * self.grid.quad_weight))

    def inner(self, other):
        if other.grid != self.grid:
            raise ValueError("fields live on different grids")
        return float((self.values @ other.values) * self.grid.quad_weight)

    def copy(self):
        return Field(self.grid, self.values.copy())

    def __add__(self, other):
        if not isinstance(other, Field):
            return NotImplemented
        if other.grid != self.grid:
            raise ValueError("fields live on different grids")
        return Field(self.grid, self.values + other.values)

    def __sub__(self, other):
        if not isinstance(other, Field):
            return NotImplemented
        if other.grid != self.grid:
            raise ValueError("fields live on different grids")
        return Field(self.grid, self.values - other.values)

    def __mul__(self, scalar):
        return Field(self.grid, self.values * float(scalar))

    __rmul__ = __mul__

    def __neg__(self):
        return Field(self.grid, -self.values)


@dataclass(frozen=True)
class ProblemSpec:
    """Data of one control problem instance.

    f0 and each phi are callables taking dim coordinate arrays and
    returning values on those points (broadcasting scalars is fine).
    """

    dim: int
    n_cells: int
    m: int
    alpha: float
    p_level: float
    f0: Callable
    phis: Tuple[Callable, ...]
    cov: CovarianceModel
    support: SupportSpec = SupportSpec()
    control_bounds: Optional[Tuple[float, float]] = None

    def __post_init__(self):
        if self.m < 1:
            raise ValueError("noise dimension m must be >= 1")
        if self.n_cells < 2:
            raise ValueError("need at least 2 cells per axis")
        if not np.isfinite(self.alpha):
            raise ValueError("threshold alpha must be finite")
        if not 0.0 < self.p_level <= 1.0:
            raise ValueError("probability level must lie in (0, 1]")
        if len(self.phis) != self.m:
            raise ValueError("need exactly m basis source functions")
        if self.cov.m != self.m:
            raise ValueError("covariance dimension does not match m")
        if self.control_bounds is not None:
            lo, hi = self.control_bounds
            if not lo < hi:
                raise ValueError("control bounds need lo < hi")

    def grid(self):
        return Grid(self.dim, self.n_cells)


def _eval_on(func, grid):
    vals = np.asarray(func(*grid.coords), dtype=float)
    if vals.ndim == 0:
        vals = np.full(grid.n_interior, float(vals))
    return vals


def evaluate_source(spec: ProblemSpec, z, grid: Grid) -> Field:
    """The source f0 + sum_i z_i phi_i sampled at interior nodes."""
    z = np.asarray(z, dtype=float)
    if z.shape != (spec.m,):
        raise ValueError(f"noise vector must have length {spec.m}, got {z.shape}")
    if grid.dim != spec.dim:
        raise ValueError("grid dimension does not match the problem")
    vals = _eval_on(spec.f0, grid)
    for zi, phi in zip(z, spec.phis):
        if zi != 0.0:
            vals = vals + zi * _eval_on(phi, grid)
    return Field(grid, vals)


def _sin_scaled(i):
    return lambda x: np.sin(i * x)


def _cos_scaled(i):
    return lambda x: np.cos(x / i)


def _sin_cos_2d(i):
    return lambda x1, x2: np.sin(i * x1) * np.cos(i * x2)


def builtin_problem(name: str) -> ProblemSpec:
    """Bundled problem configurations used by the demos and tests.

    paper_1d            1D, m=6 trigonometric sources, Gaussian noise.
    paper_1d_truncated  same, noise truncated to the Mahalanobis 6-ball.
    paper_2d            2D, m=30, box-bounded control, Gaussian noise.
    """
    if name in ("paper_1d", "paper_1d_truncated"):
        # slots 1,3,5 hold sin(i x) for i=1,2,3; slots 2,4,6 hold cos(x/i)
        # for i=2,3,4
        phis = (
            _sin_scaled(1),
            _cos_scaled(2),
            _sin_scaled(2),
            _cos_scaled(3),
            _sin_scaled(3),
            _cos_scaled(4),
        )
        support = (
            SupportSpec.ellipsoid(6.0)
            if name == "paper_1d_truncated"
            else SupportSpec.full_space()
        )
        return ProblemSpec(
            dim=1,
            n_cells=120,
            m=6,
            alpha=0.2,
            p_level=0.9,
            f0=lambda x: 5.0 * x**2,
            phis=phis,
            cov=CovarianceModel.geometric(6),
            support=support,
        )
    if name == "paper_2d":
        return ProblemSpec(
            dim=2,
            n_cells=20,
            m=30,
            alpha=0.2,
            p_level=0.9,
            f0=lambda x1, x2: 5.0 * x1 * x2,
            phis=tuple(_sin_cos_2d(i) for i in range(1, 31)),
            cov=CovarianceModel.geometric(30),
            support=SupportSpec.full_space(),
            control_bounds=(-5.0, 0.0),
        )
    raise ValueError(f"unknown builtin problem {name!r}")
