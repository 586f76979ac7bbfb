import numpy as np
import pytest

from chancecontrol import (
    CovarianceModel,
    Field,
    LaplacianOperator,
    ProblemSpec,
    StateBundle,
    SupportSpec,
    builtin_problem,
)


@pytest.fixture(scope="session")
def paper_1d():
    return builtin_problem("paper_1d")


@pytest.fixture(scope="session")
def paper_1d_truncated():
    return builtin_problem("paper_1d_truncated")


@pytest.fixture(scope="session")
def op_1d(paper_1d):
    return LaplacianOperator(paper_1d.grid())


def make_spec(dim=1, n_cells=16, m=2, alpha=0.3, p_level=0.9, support=None,
              bounds=None, phis=None, f0=None):
    """Small hand-rolled problem for fast tests."""
    if phis is None:
        if dim == 1:
            phis = tuple(
                (lambda i: lambda x: np.sin(i * np.pi * x))(i) for i in range(1, m + 1)
            )
        else:
            phis = tuple(
                (lambda i: lambda x, y: np.sin(i * np.pi * x) * np.cos(i * y))(i)
                for i in range(1, m + 1)
            )
    if f0 is None:
        f0 = (lambda x: 0.5 * x) if dim == 1 else (lambda x, y: 0.5 * x * y)
    return ProblemSpec(
        dim=dim,
        n_cells=n_cells,
        m=m,
        alpha=alpha,
        p_level=p_level,
        f0=f0,
        phis=phis,
        cov=CovarianceModel.geometric(m, variance=1.0, decay=0.5),
        support=support or SupportSpec.full_space(),
        control_bounds=bounds,
    )


def hand_bundle(grid, mean_values, basic_value_rows, control_values=None):
    """StateBundle with prescribed nodal values (no PDE solves)."""
    mean = Field(grid, np.asarray(mean_values, dtype=float))
    basics = [Field(grid, np.asarray(row, dtype=float)) for row in basic_value_rows]
    control = Field(
        grid,
        np.zeros(grid.n_interior) if control_values is None else control_values,
    )
    return StateBundle(mean, basics, control)
