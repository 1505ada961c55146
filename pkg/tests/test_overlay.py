import numpy as np
import pytest

from conftest import random_overlay_problem

from nestbench import (
    build_constraints,
    combine,
    default_gamma_max,
    kkt_check,
    make_overlay_problem,
    optimize_mvo,
    residualize,
    sharpe_ratio,
    tune_gamma,
)
from nestbench.errors import (
    DegenerateConstraints,
    DegenerateRegression,
    InputError,
    LongOnlyViolation,
    SingularCovariance,
)


def _problem(e, cov, w_star=None, band=0.6, modes=("dollar-neutral",), lower=None, upper=None):
    e = np.asarray(e, dtype=float)
    n = len(e)
    w_star = np.full(n, 1.0 / n) if w_star is None else np.asarray(w_star, dtype=float)
    return make_overlay_problem(e, np.asarray(cov, dtype=float), w_star,
                                band=band, modes=modes, lower=lower, upper=upper)


def _objective(problem, gamma, w):
    return float(problem.expected_returns @ w - (w @ problem.cov @ w) / gamma)


def _grid_best(problem, gamma, points=13):
    """Best objective over a feasible grid: box grid on the leading
    coordinates, trailing ones solved from the constraints."""
    n, p = problem.constraints.shape
    head = n - p
    q = problem.constraints
    tail_matrix = q[head:, :].T
    assert abs(np.linalg.det(tail_matrix)) > 1e-12
    axes = [np.linspace(problem.lower[i], problem.upper[i], points) for i in range(head)]
    mesh = np.meshgrid(*axes, indexing="ij")
    head_vals = np.stack([m.ravel() for m in mesh], axis=1)
    tail_vals = np.linalg.solve(tail_matrix, -(head_vals @ q[:head, :]).T).T
    w = np.hstack([head_vals, tail_vals])
    feasible = np.all((w >= problem.lower - 1e-12) & (w <= problem.upper + 1e-12), axis=1)
    if not feasible.any():
        return -np.inf
    w = w[feasible]
    quad = np.einsum("ij,jk,ik->i", w, problem.cov, w)
    return float((w @ problem.expected_returns - quad / gamma).max())


class TestResidualize:
    def test_collinear_signal_vanishes(self):
        w = np.array([0.4, 0.35, 0.25])
        np.testing.assert_allclose(residualize(7.0 * w, w), 0.0, atol=1e-15)

    def test_orthogonal_signal_unchanged(self):
        w = np.array([0.5, 0.5])
        e = np.array([1.0, -1.0])
        np.testing.assert_allclose(residualize(e, w), e, rtol=1e-15)

    def test_hand_example(self):
        eps = residualize(np.array([1.0, 2.0]), np.array([0.5, 0.5]))
        np.testing.assert_allclose(eps, [-0.5, 0.5], rtol=1e-15)

    def test_weighted_variant(self):
        e = np.array([1.0, 2.0, 3.0])
        w = np.array([0.2, 0.3, 0.5])
        v = np.array([1.0, 2.0, 0.5])
        coef = (v * e * w).sum() / (v * w * w).sum()
        np.testing.assert_allclose(residualize(e, w, v), v * (e - coef * w), rtol=1e-14)

    def test_residual_is_orthogonal_to_benchmark(self):
        rng = np.random.default_rng(0)
        e = rng.normal(size=8)
        w = rng.uniform(0.05, 0.2, 8)
        assert abs(residualize(e, w) @ w) <= 1e-14

    def test_degenerate_denominator(self):
        with pytest.raises(DegenerateRegression):
            residualize(np.array([1.0, 2.0]), np.array([1.0, 1.0]), np.array([0.0, 0.0]))


class TestBuildConstraints:
    def test_dollar_neutral_only(self):
        q = build_constraints({"dollar-neutral"}, np.eye(3), np.full(3, 1 / 3))
        np.testing.assert_array_equal(q, np.ones((3, 1)))

    def test_zero_expected_correlation_column(self):
        q = build_constraints(
            {"dollar-neutral", "zero-expected-correlation"},
            np.diag([1.0, 4.0]),
            np.array([0.5, 0.5]),
        )
        np.testing.assert_allclose(q[:, 1], [0.5, 2.0], rtol=1e-15)

    def test_collinear_columns_rejected(self):
        with pytest.raises(DegenerateConstraints):
            build_constraints(
                {"dollar-neutral", "zero-expected-correlation", "orthogonal-to-benchmark"},
                np.eye(2),
                np.array([0.5, 0.5]),
            )

    def test_unknown_mode(self):
        with pytest.raises(InputError):
            build_constraints({"sector-neutral"}, np.eye(2), np.array([0.5, 0.5]))


class TestProblemValidation:
    def test_infeasible_custom_bounds(self):
        with pytest.raises(InputError):
            _problem([0.1, -0.1], np.eye(2),
                     lower=np.array([0.0, 0.0]), upper=np.array([-0.1, 0.1]))

    def test_non_pd_covariance(self):
        with pytest.raises(SingularCovariance):
            _problem([0.1, -0.1], np.ones((2, 2)))

    def test_bounds_must_straddle_zero(self):
        with pytest.raises(InputError):
            _problem([0.1, -0.1], np.eye(2),
                     lower=np.array([0.1, 0.0]), upper=np.array([0.2, 0.1]))


class TestOptimizeMvo:
    def test_hand_solved_two_stock(self):
        problem = _problem([1.0, -1.0], np.eye(2), band=0.6)
        gamma = 0.1
        w = optimize_mvo(problem, gamma)
        np.testing.assert_allclose(w, [gamma / 2, -gamma / 2], rtol=1e-12)
        assert kkt_check(problem, gamma, w).ok

    def test_zero_signal(self):
        problem = _problem([0.0, 0.0, 0.0], np.eye(3))
        np.testing.assert_array_equal(optimize_mvo(problem, 5.0), np.zeros(3))

    def test_fully_clamped(self):
        problem = _problem([1.0, -1.0], np.eye(2),
                           lower=np.zeros(2), upper=np.zeros(2))
        np.testing.assert_array_equal(optimize_mvo(problem, 10.0), np.zeros(2))

    def test_binding_bounds_stay_feasible(self):
        problem, _ = random_overlay_problem(3)
        gamma = default_gamma_max(problem)  # far beyond the first bind
        w = optimize_mvo(problem, gamma)
        assert np.all(w >= problem.lower - 1e-10)
        assert np.all(w <= problem.upper + 1e-10)
        report = kkt_check(problem, gamma, w)
        assert report.ok
        assert report.active_lower or report.active_upper

    def test_kkt_on_seeded_problems(self):
        for seed in range(20):
            modes = ("dollar-neutral",) if seed % 2 else ("dollar-neutral", "zero-expected-correlation")
            problem, gamma = random_overlay_problem(seed, modes=modes)
            w = optimize_mvo(problem, gamma)
            report = kkt_check(problem, gamma, w)
            assert report.ok, (seed, report)
            assert abs(w.sum()) <= 1e-10

    def test_against_grid_oracle(self):
        for seed in range(10):
            problem, gamma = random_overlay_problem(seed + 40, n_range=(4, 6))
            w = optimize_mvo(problem, gamma)
            assert _objective(problem, gamma, w) >= _grid_best(problem, gamma) - 1e-6

    def test_invalid_gamma(self):
        problem = _problem([0.1, -0.1], np.eye(2))
        with pytest.raises(InputError):
            optimize_mvo(problem, 0.0)


class TestTuneGamma:
    def _binding_fixture(self):
        cov = np.array(
            [
                [1.6e-3, 4.0e-4, 2.0e-4, 1.0e-4],
                [4.0e-4, 9.0e-4, 3.0e-4, 1.5e-4],
                [2.0e-4, 3.0e-4, 2.5e-3, 2.0e-4],
                [1.0e-4, 1.5e-4, 2.0e-4, 4.0e-4],
            ]
        )
        e = np.array([0.015, -0.001, 0.002, -0.006])
        w_star = np.array([0.3, 0.3, 0.2, 0.2])
        return _problem(e, cov, w_star=w_star, band=0.5)

    def test_matches_grid_scan(self):
        # interior peak with two binding bounds; the grid can only localize
        # the argmax to one step, the search to tol * gamma_max
        problem = self._binding_fixture()
        gamma_max = default_gamma_max(problem) / 10.0
        result = tune_gamma(problem, gamma_max, tol=1e-4)
        grid = np.linspace(gamma_max / 2000, gamma_max, 2000)
        sharpes = [sharpe_ratio(problem, optimize_mvo(problem, g)) for g in grid]
        best = grid[int(np.argmax(sharpes))]
        step = grid[1] - grid[0]
        assert abs(result.gamma_prime - best) <= 1e-4 * gamma_max + step
        assert result.sharpe_opt >= max(sharpes) - 1e-9
        report_actives = len(result.active_lower) + len(result.active_upper)
        assert 0 < report_actives < problem.n_stocks

    def test_wide_bounds_saturate_bracket(self):
        problem, _ = random_overlay_problem(77)
        never_binding = default_gamma_max(problem) / 100.0 * 0.5
        result = tune_gamma(problem, never_binding, tol=1e-4)
        assert result.bracket_saturated
        assert result.gamma_prime == never_binding

    def test_zero_signal_flat_curve(self):
        problem = _problem([0.0, 0.0, 0.0], np.eye(3))
        result = tune_gamma(problem, 1.0, tol=1e-3)
        assert result.sharpe_opt == 0.0
        np.testing.assert_array_equal(result.w_prime, np.zeros(3))
        assert not result.bracket_saturated
        assert 0.0 < result.gamma_prime < 1.0

    def test_monotone_benefit(self):
        for seed in range(8):
            problem, _ = random_overlay_problem(seed + 200)
            result = tune_gamma(problem, tol=1e-3)
            assert result.sharpe_opt >= result.sharpe_zero - 1e-12
            assert np.all(result.combined >= 0.0)
            assert abs(result.w_prime.sum()) <= 1e-10

    def test_sharpe_zero_is_benchmark_sharpe(self):
        problem, _ = random_overlay_problem(5)
        result = tune_gamma(problem, 1.0, tol=1e-3)
        expected = sharpe_ratio(problem, np.zeros(problem.n_stocks))
        assert result.sharpe_zero == pytest.approx(expected, rel=1e-15)


class TestCombine:
    def test_zero_sleeve(self):
        w_star = np.array([0.5, 0.5])
        out = combine(w_star, np.zeros(2), np.eye(2))
        np.testing.assert_array_equal(out.weights, w_star)
        assert out.rho is None

    def test_hand_orthogonal_sleeve(self):
        out = combine(np.array([0.5, 0.5]), np.array([0.1, -0.1]), np.eye(2))
        assert out.rho == pytest.approx(0.0, abs=1e-15)
        assert out.sigma_prime == pytest.approx(0.1 * np.sqrt(2.0), rel=1e-15)

    def test_percentage_band_keeps_long_only(self):
        # any dollar-neutral sleeve inside +/- z * w_star leaves at least
        # (1 - z) * w_star long in every name
        rng = np.random.default_rng(1)
        z = 0.5
        w_star = rng.uniform(0.1, 0.3, 5)
        w_star /= w_star.sum()
        raw = w_star * rng.uniform(-1.0, 1.0, 5)
        sleeve = (z / 2.0) * (raw - w_star * raw.sum())
        assert np.all(np.abs(sleeve) <= z * w_star + 1e-15)
        out = combine(w_star, sleeve, np.eye(5))
        assert np.all(out.weights >= (1.0 - z) * w_star - 1e-12)

    def test_long_only_violation(self):
        with pytest.raises(LongOnlyViolation):
            combine(np.array([0.5, 0.5]), np.array([-0.6, 0.6]), np.eye(2))

    def test_scale_drift_detected(self):
        with pytest.raises(InputError):
            combine(np.array([0.5, 0.5]), np.array([0.2, 0.2]), np.eye(2))


class TestCorrelationNeutrality:
    def test_constraint_nulls_rho(self):
        for seed in range(5):
            problem, gamma = random_overlay_problem(
                seed + 500, modes=("dollar-neutral", "zero-expected-correlation")
            )
            w = optimize_mvo(problem, gamma / 10.0)  # keep bounds slack
            out = combine(problem.w_star, w, problem.cov)
            if out.rho is not None:
                assert abs(out.rho) <= 1e-8

    def test_residualized_signal_nulls_rho_without_bounds(self):
        # the unconstrained mean-variance sleeve on a residualized signal is
        # exactly uncorrelated with the benchmark under the same model
        rng = np.random.default_rng(9)
        problem, _ = random_overlay_problem(31)
        eps = residualize(problem.expected_returns, problem.w_star)
        sleeve = np.linalg.solve(problem.cov, eps)
        numer = float(problem.w_star @ problem.cov @ sleeve)
        sigma_star = np.sqrt(problem.w_star @ problem.cov @ problem.w_star)
        sigma_prime = np.sqrt(sleeve @ problem.cov @ sleeve)
        assert abs(numer / (sigma_star * sigma_prime)) <= 1e-8
