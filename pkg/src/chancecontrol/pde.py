"""Finite-difference Dirichlet Laplacian with a reusable factorisation.

The operator is the classic second-order stencil on interior nodes
(tridiagonal in 1D, 5-point in 2D), assembled and LU-factorised once per
grid.  All solvers below reuse that factorisation, which is what makes
the sample-heavy algorithms in this package affordable.

Gradients of L2 functionals are returned in Riesz form: assembled dual
vectors are divided by the quadrature weight so that descent steps are
mesh-independent.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .problem import Field, Grid, ProblemSpec, _eval_on


def _assemble(grid: Grid):
    n = grid.n_cells
    inv_dx2 = float(n) * float(n)
    main = np.full(n - 1, 2.0 * inv_dx2)
    off = np.full(n - 2, -inv_dx2)
    t = sp.diags([off, main, off], [-1, 0, 1], format="csc")
    if grid.dim == 1:
        return t
    eye = sp.identity(n - 1, format="csc")
    # node index k = i*(n-1) + j for (x_i, y_j): x varies on the kron left
    return (sp.kron(t, eye) + sp.kron(eye, t)).tocsc()


class LaplacianOperator:
    """Negative Laplacian on interior nodes, factorised once.

    The factorisation is immutable after assembly; solves against it do
    not mutate shared state (the Green-row cache is an idempotent
    write-once map, so concurrent fills are benign).
    """

    def __init__(self, grid: Grid):
        self.grid = grid
        self.matrix = _assemble(grid)
        self._lu = splu(self.matrix)
        self._green = {}
        self._dense_inverse = None

    def solve_values(self, rhs):
        """Solve A y = rhs for nodal values; rhs may be (n,) or (n, k)."""
        return self._lu.solve(np.asarray(rhs, dtype=float))

    def dense_inverse(self):
        """A^{-1} as a dense matrix (cached; used by the robust solver)."""
        if self._dense_inverse is None:
            self._dense_inverse = self.solve_values(np.eye(self.grid.n_interior))
        return self._dense_inverse


def solve_poisson(op: LaplacianOperator, rhs: Field) -> Field:
    """Solution of -Lap y = rhs with homogeneous Dirichlet boundary."""
    if rhs.grid != op.grid:
        raise ValueError("right-hand side lives on a different grid")
    return Field(op.grid, op.solve_values(rhs.values))


@dataclass
class StateBundle:
    """Mean state for a control plus the control-independent basic states.

    Any scenario state is the affine combination
        state(z) = mean_state + sum_i z_i * basic_states[i],
    which `states_for` evaluates for whole batches of noise vectors.
    """

    mean_state: Field
    basic_states: List[Field]
    control: Field

    def __post_init__(self):
        n = self.mean_state.grid.n_interior
        if self.basic_states:
            self.basis = np.stack([f.values for f in self.basic_states])
        else:
            self.basis = np.zeros((0, n))

    def states_for(self, z):
        """Nodal state values for each noise row of z, shape (len(z), n)."""
        z = np.atleast_2d(np.asarray(z, dtype=float))
        return self.mean_state.values[None, :] + z @ self.basis


def basic_states(spec: ProblemSpec, op: LaplacianOperator) -> List[Field]:
    """Solutions of A y = phi_i; independent of the control."""
    grid = op.grid
    rhs = np.column_stack([_eval_on(phi, grid) for phi in spec.phis])
    sols = op.solve_values(rhs)
    return [Field(grid, sols[:, i].copy()) for i in range(spec.m)]


def mean_state(spec: ProblemSpec, op: LaplacianOperator, u: Field) -> Field:
    """Solution of A y = u + f0."""
    if u.grid != op.grid:
        raise ValueError("control lives on a different grid")
    return Field(op.grid, op.solve_values(u.values + _eval_on(spec.f0, op.grid)))


def precompute_states(
    spec: ProblemSpec, op: LaplacianOperator, u: Field, basics=None
) -> StateBundle:
    """Mean and basic states for superposition-based evaluations.

    Pass previously computed `basics` to skip the control-independent
    solves when only the control changed.
    """
    if basics is None:
        basics = basic_states(spec, op)
    return StateBundle(mean_state(spec, op, u), basics, u)


def green_row(op: LaplacianOperator, node_index: int) -> Field:
    """Riesz representative of "evaluate the control-only state at node".

    For g = green_row(op, j) and any h, the discrete L2 product <g, h>
    equals the solution of A y = h evaluated at node j.
    """
    n = op.grid.n_interior
    if not 0 <= node_index < n:
        raise ValueError(f"node index {node_index} outside 0..{n - 1}")
    return Field(op.grid, green_rows(op, [node_index])[0])

def green_rows(op: LaplacianOperator, node_indices) -> np.ndarray:
    """Green-row values for several nodes, filling the cache in one solve."""
    node_indices = np.asarray(node_indices, dtype=int)
    n = op.grid.n_interior
    if node_indices.size and (node_indices.min() < 0 or node_indices.max() >= n):
        raise ValueError("node index outside the interior range")
    missing = [j for j in dict.fromkeys(node_indices.tolist()) if j not in op._green]
    if missing:
        rhs = np.zeros((n, len(missing)))
        rhs[missing, np.arange(len(missing))] = 1.0
        sols = op.solve_values(rhs) / op.grid.quad_weight
        for col, j in enumerate(missing):
            op._green[j] = sols[:, col].copy()
    return np.array([op._green[j] for j in node_indices])
