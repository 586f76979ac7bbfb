import numpy as np
import pytest

from chancecontrol import (
    CovarianceModel,
    Field,
    Grid,
    LaplacianOperator,
    StateConstraintError,
    directional_derivative,
    estimate,
    mc_probability_oracle,
    nondiff_fraction,
    precompute_states,
    radial_bound,
    sample_sphere,
)

from conftest import hand_bundle, make_spec


def bisect_radius(bundle, cov, alpha, v, hi=1e6, iters=200):
    """Independent oracle: bisection on r -> max_x(ybar + r*kappa) - alpha."""
    kappa = (cov.sqrt_factor @ np.asarray(v)) @ bundle.basis
    ybar = bundle.mean_state.values

    def excess(r):
        return (ybar + r * kappa).max() - alpha

    if excess(hi) <= 0:
        return np.inf
    lo = 0.0
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if excess(mid) <= 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


class TestRadialBound:
    def test_zero_basic_states_infinite(self):
        grid = Grid(1, 8)
        bundle = hand_bundle(grid, np.zeros(7), [np.zeros(7)])
        cov = CovarianceModel(np.eye(1))
        res = radial_bound(bundle, cov, 0.2, np.array([1.0]))
        assert res.rho == np.inf
        assert res.argmin_node is None
        assert res.kappa_at_argmin is None
        assert res.tie_nodes.size == 0

    def test_single_node_ratio(self):
        grid = Grid(1, 2)  # one interior node
        bundle = hand_bundle(grid, [0.0], [[2.0]])
        cov = CovarianceModel(np.eye(1))
        res = radial_bound(bundle, cov, 0.2, np.array([1.0]))
        assert res.rho == pytest.approx(0.1)
        assert res.argmin_node == 0
        assert res.kappa_at_argmin == pytest.approx(2.0)
        assert res.tie_nodes.tolist() == [0]

    def test_matches_bisection_oracle(self, paper_1d, op_1d):
        bundle = precompute_states(paper_1d, op_1d, Field.zeros(op_1d.grid))
        rng = np.random.default_rng(17)
        for _ in range(12):
            v = rng.normal(size=6)
            v /= np.linalg.norm(v)
            res = radial_bound(bundle, paper_1d.cov, paper_1d.alpha, v)
            ref = bisect_radius(bundle, paper_1d.cov, paper_1d.alpha, v)
            if np.isinf(ref):
                assert res.rho == np.inf
            else:
                assert res.rho == pytest.approx(ref, abs=1e-8)
                # the bound binds: ybar(x*) + rho * kappa(x*) = alpha
                check = (
                    bundle.mean_state.values[res.argmin_node]
                    + res.rho * res.kappa_at_argmin
                )
                assert check == pytest.approx(paper_1d.alpha, abs=1e-9)

    def test_mean_state_above_threshold_raises(self):
        grid = Grid(1, 4)
        bundle = hand_bundle(grid, [0.0, 0.3, 0.0], [[0.1, 0.2, 0.1]])
        cov = CovarianceModel(np.eye(1))
        with pytest.raises(StateConstraintError):
            radial_bound(bundle, cov, 0.2, np.array([1.0]))


class TestEstimate:
    def test_zero_basics_probability_one(self):
        grid = Grid(1, 10)
        bundle = hand_bundle(grid, np.full(9, -1.0), [np.zeros(9)] * 2)
        cov = CovarianceModel(np.eye(2))
        op = LaplacianOperator(grid)
        est = estimate(bundle, cov, 0.2, sample_sphere(2, 32), op)
        assert est.prob == 1.0
        np.testing.assert_array_equal(est.grad.values, np.zeros(9))
        assert est.n_finite == 0
        assert nondiff_fraction(est) == 0.0

    def test_prob_matches_mc_oracle_near_zero_control(self, paper_1d, op_1d):
        rng = np.random.default_rng(2)
        x = op_1d.grid.coords[0]
        u = Field(op_1d.grid, -0.5 - 0.3 * np.sin(np.pi * x) * rng.uniform())
        bundle = precompute_states(paper_1d, op_1d, u)
        est = estimate(
            bundle, paper_1d.cov, paper_1d.alpha, sample_sphere(6, 2048, "qmc"), op_1d
        )
        mc, se = mc_probability_oracle(paper_1d, op_1d, u, 100_000, seed=5)
        assert abs(est.prob - mc) <= 3 * se

    def test_gradient_nonpositive(self, paper_1d, op_1d):
        bundle = precompute_states(paper_1d, op_1d, Field.zeros(op_1d.grid))
        est = estimate(
            bundle, paper_1d.cov, paper_1d.alpha, sample_sphere(6, 256), op_1d
        )
        assert est.grad.values.max() <= 0.0

    def test_truncated_at_infinite_radius_degenerates_exactly(self, paper_1d, op_1d):
        bundle = precompute_states(paper_1d, op_1d, Field.zeros(op_1d.grid))
        sample = sample_sphere(6, 128)
        plain = estimate(bundle, paper_1d.cov, paper_1d.alpha, sample, op_1d)
        clipped = estimate(
            bundle,
            paper_1d.cov,
            paper_1d.alpha,
            sample,
            op_1d,
            mode="truncated",
            radius=np.inf,
        )
        assert clipped.prob == plain.prob
        np.testing.assert_array_equal(clipped.grad.values, plain.grad.values)

    def test_truncated_rays_beyond_radius_drop_out(self, paper_1d, op_1d):
        bundle = precompute_states(paper_1d, op_1d, Field.zeros(op_1d.grid))
        sample = sample_sphere(6, 128)
        est = estimate(
            bundle,
            paper_1d.cov,
            paper_1d.alpha,
            sample,
            op_1d,
            mode="truncated",
            radius=6.0,
        )
        assert 0.0 <= est.prob <= 1.0
        # any ray with rho >= 6 contributes the full conditional mass
        deep = Field(op_1d.grid, np.full(op_1d.grid.n_interior, -50.0))
        bundle_deep = precompute_states(paper_1d, op_1d, deep)
        est_deep = estimate(
            bundle_deep,
            paper_1d.cov,
            paper_1d.alpha,
            sample,
            op_1d,
            mode="truncated",
            radius=6.0,
        )
        assert est_deep.prob == 1.0
        np.testing.assert_array_equal(est_deep.grad.values, 0.0)

    def test_monotone_in_control_exact(self, paper_1d, op_1d):
        sample = sample_sphere(6, 256)
        rng = np.random.default_rng(4)
        u = Field(op_1d.grid, -0.4 * np.ones(op_1d.grid.n_interior))
        h = Field(op_1d.grid, rng.uniform(0.0, 1.0, size=op_1d.grid.n_interior))
        prob_base = estimate(
            precompute_states(paper_1d, op_1d, u),
            paper_1d.cov,
            paper_1d.alpha,
            sample,
            op_1d,
        ).prob
        prob_up = estimate(
            precompute_states(paper_1d, op_1d, u + 0.05 * h),
            paper_1d.cov,
            paper_1d.alpha,
            sample,
            op_1d,
        ).prob
        assert prob_up <= prob_base

    def test_quasi_concave_on_shared_sample(self, paper_1d, op_1d):
        sample = sample_sphere(6, 256)
        rng = np.random.default_rng(6)
        x = op_1d.grid.coords[0]

        def prob_at(values):
            bundle = precompute_states(paper_1d, op_1d, Field(op_1d.grid, values))
            return estimate(
                bundle, paper_1d.cov, paper_1d.alpha, sample, op_1d
            ).prob

        for _ in range(8):
            u1 = -rng.uniform(0, 3) - rng.uniform(0, 2) * np.sin(np.pi * x)
            u2 = -rng.uniform(0, 3) - rng.uniform(0, 2) * np.cos(np.pi * x / 2)
            lam = rng.uniform()
            mixed = prob_at(lam * u1 + (1 - lam) * u2)
            assert mixed >= min(prob_at(u1), prob_at(u2)) - 1e-9

    def test_empty_sample_rejected(self, paper_1d, op_1d):
        bundle = precompute_states(paper_1d, op_1d, Field.zeros(op_1d.grid))
        with pytest.raises(ValueError):
            estimate(bundle, paper_1d.cov, paper_1d.alpha, np.empty((0, 6)), op_1d)


class TestDirectionalDerivative:
    def test_zero_direction(self, paper_1d, op_1d):
        bundle = precompute_states(paper_1d, op_1d, Field.zeros(op_1d.grid))
        est = estimate(
            bundle, paper_1d.cov, paper_1d.alpha, sample_sphere(6, 128), op_1d
        )
        assert directional_derivative(est, Field.zeros(op_1d.grid)) == 0.0

    def test_nonnegative_direction_nonpositive_derivative(self, paper_1d, op_1d):
        bundle = precompute_states(paper_1d, op_1d, Field.zeros(op_1d.grid))
        est = estimate(
            bundle, paper_1d.cov, paper_1d.alpha, sample_sphere(6, 128), op_1d
        )
        rng = np.random.default_rng(8)
        h = Field(op_1d.grid, rng.uniform(0, 1, size=op_1d.grid.n_interior))
        assert directional_derivative(est, h) <= 0.0

    def test_matches_finite_differences(self, paper_1d, op_1d):
        sample = sample_sphere(6, 512)
        rng = np.random.default_rng(10)
        x = op_1d.grid.coords[0]
        u = Field(op_1d.grid, -1.0 - np.sin(np.pi * x))

        def prob_at(field):
            bundle = precompute_states(paper_1d, op_1d, field)
            return estimate(
                bundle, paper_1d.cov, paper_1d.alpha, sample, op_1d
            ).prob

        bundle = precompute_states(paper_1d, op_1d, u)
        est = estimate(bundle, paper_1d.cov, paper_1d.alpha, sample, op_1d)
        assert est.tie_fraction == 0.0
        for _ in range(3):
            h = Field(op_1d.grid, rng.normal(size=op_1d.grid.n_interior))
            eps = 1e-4 / h.norm_l2()
            fd = (prob_at(u + eps * h) - prob_at(u + (-eps) * h)) / (2 * eps)
            assert directional_derivative(est, h) == pytest.approx(fd, rel=1e-3)

    def test_grid_mismatch(self, paper_1d, op_1d):
        bundle = precompute_states(paper_1d, op_1d, Field.zeros(op_1d.grid))
        est = estimate(
            bundle, paper_1d.cov, paper_1d.alpha, sample_sphere(6, 64), op_1d
        )
        with pytest.raises(ValueError):
            directional_derivative(est, Field.zeros(Grid(1, 7)))


class TestMcOracle:
    def test_huge_threshold(self):
        spec = make_spec(alpha=1e6)
        op = LaplacianOperator(spec.grid())
        prob, se = mc_probability_oracle(
            spec, op, Field.zeros(op.grid), 2000, seed=0
        )
        assert prob == 1.0 and se == 0.0

    def test_zero_noise_terms(self):
        spec = make_spec(m=2, phis=(lambda x: 0.0 * x, lambda x: 0.0 * x), alpha=0.5)
        op = LaplacianOperator(spec.grid())
        prob, _ = mc_probability_oracle(spec, op, Field.zeros(op.grid), 500, seed=1)
        assert prob == 1.0

    def test_truncated_draws_respect_support(self, paper_1d_truncated):
        op = LaplacianOperator(paper_1d_truncated.grid())
        u = Field.constant(op.grid, -1.0)
        prob, se = mc_probability_oracle(paper_1d_truncated, op, u, 5000, seed=2)
        assert 0.0 <= prob <= 1.0

    def test_srd_self_consistency_at_zero(self, paper_1d, op_1d):
        u = Field.zeros(op_1d.grid)
        bundle = precompute_states(paper_1d, op_1d, u)
        est = estimate(
            bundle, paper_1d.cov, paper_1d.alpha, sample_sphere(6, 4096), op_1d
        )
        mc, se = mc_probability_oracle(paper_1d, op_1d, u, 100_000, seed=3)
        assert abs(est.prob - mc) <= 3 * se


class TestNondiffDiagnostics:
    def test_symmetric_tie_detected(self):
        grid = Grid(1, 8)  # nodes at 1/8 .. 7/8
        basic = np.array([0.0, 1.0, 0.5, 0.2, 0.5, 1.0, 0.0])  # two equal maxima
        bundle = hand_bundle(grid, np.zeros(7), [basic])
        cov = CovarianceModel(np.eye(1))
        op = LaplacianOperator(grid)
        est = estimate(bundle, cov, 0.3, np.array([[1.0], [-1.0]]), op)
        # only the +1 ray has finite radius and its binding node is tied
        assert est.n_finite == 1
        assert nondiff_fraction(est) == 1.0

    def test_logged_fraction_at_paper_problem(self, paper_1d, op_1d):
        bundle = precompute_states(paper_1d, op_1d, Field.zeros(op_1d.grid))
        est = estimate(
            bundle, paper_1d.cov, paper_1d.alpha, sample_sphere(6, 512), op_1d
        )
        assert 0.0 <= est.tie_fraction <= 1.0
