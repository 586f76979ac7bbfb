import numpy as np
import pytest

from chancecontrol import Field, Grid, builtin_problem, evaluate_source

from conftest import make_spec


def test_grid_nodes_strictly_interior():
    for dim in (1, 2):
        grid = Grid(dim, 7)
        nodes = grid.nodes
        assert nodes.shape == ((7 - 1) ** dim, dim)
        assert np.all(nodes > 0.0) and np.all(nodes < 1.0)
        assert grid.quad_weight == pytest.approx((1.0 / 7) ** dim)


def test_grid_rejects_bad_arguments():
    with pytest.raises(ValueError):
        Grid(3, 10)
    with pytest.raises(ValueError):
        Grid(1, 1)


def test_field_length_checked():
    grid = Grid(1, 8)
    with pytest.raises(ValueError):
        Field(grid, np.zeros(3))


def test_field_norm_and_inner():
    grid = Grid(1, 4)
    f = Field(grid, np.array([1.0, 2.0, 2.0]))
    assert f.norm_l2() == pytest.approx(np.sqrt(9 * 0.25))
    g = Field(grid, np.array([2.0, 0.0, 1.0]))
    assert f.inner(g) == pytest.approx((2.0 + 0.0 + 2.0) * 0.25)


def test_source_at_zero_noise_is_f0():
    spec = make_spec(m=3)
    grid = spec.grid()
    field = evaluate_source(spec, np.zeros(3), grid)
    np.testing.assert_allclose(field.values, 0.5 * grid.coords[0], rtol=0, atol=0)


def test_source_matches_1d_configuration_data():
    # f0(x) = 5 x^2 and first basis sin(x): unit noise on slot 1 at x = 0.5
    spec = builtin_problem("paper_1d")
    grid = spec.grid()
    z = np.zeros(6)
    z[0] = 1.0
    field = evaluate_source(spec, z, grid)
    node = np.argmin(np.abs(grid.coords[0] - 0.5))
    assert grid.coords[0][node] == pytest.approx(0.5)
    assert field.values[node] == pytest.approx(5 * 0.25 + np.sin(0.5), rel=1e-14)


def test_source_matches_termwise_oracle():
    spec = make_spec(m=4, n_cells=11)
    grid = spec.grid()
    rng = np.random.default_rng(7)
    z = rng.normal(size=4)
    field = evaluate_source(spec, z, grid)
    x = grid.coords[0]
    for node in rng.integers(0, grid.n_interior, size=5):
        expected = spec.f0(x[node])
        for zi, phi in zip(z, spec.phis):
            expected += zi * phi(x[node])
        assert field.values[node] == pytest.approx(expected, rel=1e-12)


def test_source_affine_in_noise():
    spec = make_spec(m=3, n_cells=9)
    grid = spec.grid()
    rng = np.random.default_rng(0)
    for _ in range(5):
        z1, z2 = rng.normal(size=(2, 3))
        lam = rng.uniform()
        mixed = evaluate_source(spec, lam * z1 + (1 - lam) * z2, grid).values
        parts = (
            lam * evaluate_source(spec, z1, grid).values
            + (1 - lam) * evaluate_source(spec, z2, grid).values
        )
        np.testing.assert_allclose(mixed, parts, rtol=1e-12)


def test_source_rejects_wrong_noise_length():
    spec = make_spec(m=3)
    with pytest.raises(ValueError):
        evaluate_source(spec, np.zeros(2), spec.grid())


def test_builtin_1d_values():
    spec = builtin_problem("paper_1d")
    assert spec.m == 6
    assert spec.alpha == 0.2
    assert spec.p_level == 0.9
    assert spec.n_cells == 120
    assert spec.cov.sigma[0, 1] == pytest.approx(9 * 0.6)
    assert spec.support.kind == "full_space"
    # slot layout: sin(x), cos(x/2), sin(2x), cos(x/3), sin(3x), cos(x/4)
    x = 0.7
    expected = [
        np.sin(x),
        np.cos(x / 2),
        np.sin(2 * x),
        np.cos(x / 3),
        np.sin(3 * x),
        np.cos(x / 4),
    ]
    for phi, want in zip(spec.phis, expected):
        assert phi(x) == pytest.approx(want, rel=1e-14)


def test_builtin_2d_values():
    spec = builtin_problem("paper_2d")
    assert spec.dim == 2
    assert spec.m == 30
    assert spec.control_bounds == (-5.0, 0.0)
    assert spec.n_cells == 20
    assert spec.phis[2](0.3, 0.4) == pytest.approx(np.sin(0.9) * np.cos(1.2))


def test_builtin_truncated_differs_only_in_support():
    plain = builtin_problem("paper_1d")
    trunc = builtin_problem("paper_1d_truncated")
    assert trunc.support.kind == "ellipsoid"
    assert trunc.support.radius == 6.0
    for attr in ("dim", "n_cells", "m", "alpha", "p_level", "control_bounds"):
        assert getattr(plain, attr) == getattr(trunc, attr)
    np.testing.assert_array_equal(plain.cov.sigma, trunc.cov.sigma)


def test_builtin_pure_across_calls():
    a = builtin_problem("paper_1d")
    b = builtin_problem("paper_1d")
    np.testing.assert_array_equal(a.cov.sigma, b.cov.sigma)
    grid = a.grid()
    np.testing.assert_array_equal(
        evaluate_source(a, np.ones(6), grid).values,
        evaluate_source(b, np.ones(6), grid).values,
    )


def test_builtin_unknown_name():
    with pytest.raises(ValueError):
        builtin_problem("paper_3d")
