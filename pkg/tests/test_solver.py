"""Tests for the L1 logistic, ridge and stratum OLS solvers."""

import math

import numpy as np
import pytest
import scipy.sparse as sp
from scipy.special import expit, logit

from lsps.config import RidgeConfig, SolverConfig
from lsps.engine import solver
from lsps.engine.solver import (
    PROBA_EPS,
    cross_validated_r_squared,
    cv_select_lambda,
    fit_logistic_l1,
    fit_ols_stratum,
    fit_ridge,
    heldout_loglik,
    lambda_grid,
    lambda_max,
    logistic_gradient,
    mean_logistic_loss,
    path_saturated,
    predict_proba,
    r_squared,
)
from lsps.exceptions import (
    ConstantTargetError,
    CrossValidationError,
    DegenerateStratumError,
    DimensionMismatchError,
    SeparationError,
)
from lsps.models import LogisticFit

TIGHT = SolverConfig(tol_cd=1e-9)


@pytest.fixture
def logistic_problem():
    rng = np.random.default_rng(0)
    n, m = 400, 8
    x = rng.normal(size=(n, m))
    eta = 1.2 * x[:, 0] - 0.8 * x[:, 1] + 0.3 * x[:, 2]
    t = (rng.random(n) < expit(eta)).astype(np.float64)
    return x, t


class TestLambdaGrid:
    def test_null_model_at_lambda_max(self, logistic_problem):
        x, t = logistic_problem
        lam = lambda_max(x, t)
        fit = fit_logistic_l1(x, t, lam * 1.0001, TIGHT)
        assert fit.n_nonzero == 0
        assert fit.intercept == pytest.approx(logit(t.mean()), abs=1e-6)

    def test_first_covariate_enters_below_lambda_max(self, logistic_problem):
        x, t = logistic_problem
        fit = fit_logistic_l1(x, t, lambda_max(x, t) * 0.9, TIGHT)
        assert fit.n_nonzero >= 1

    def test_grid_shape(self):
        grid = lambda_grid(0.5)
        assert len(grid) == 20
        assert grid[0] == pytest.approx(0.5)
        assert grid[-1] == pytest.approx(0.5e-4)
        assert np.all(np.diff(grid) < 0)

    def test_grid_needs_positive_lambda_max(self):
        with pytest.raises(ValueError):
            lambda_grid(0.0)


class TestLogisticL1:
    def test_kkt_conditions_hold(self, logistic_problem):
        x, t = logistic_problem
        lam = lambda_max(x, t) / 10
        fit = fit_logistic_l1(x, t, lam, TIGHT)
        assert fit.converged
        g0, grad = logistic_gradient(x, t, fit.coefficients, fit.intercept)
        assert abs(g0) < 1e-6
        active = fit.coefficients != 0
        np.testing.assert_allclose(
            grad[active], -lam * np.sign(fit.coefficients[active]), atol=1e-6
        )
        assert np.all(np.abs(grad[~active]) <= lam + 1e-6)

    def test_gradient_matches_central_differences(self, logistic_problem):
        x, t = logistic_problem
        theta = np.linspace(-0.5, 0.5, x.shape[1])
        intercept, h = 0.2, 1e-6
        g0, grad = logistic_gradient(x, t, theta, intercept)
        numeric = np.array(
            [
                (
                    mean_logistic_loss(x, t, theta + h * e, intercept)
                    - mean_logistic_loss(x, t, theta - h * e, intercept)
                )
                / (2 * h)
                for e in np.eye(x.shape[1])
            ]
        )
        np.testing.assert_allclose(grad, numeric, rtol=1e-5, atol=1e-8)
        numeric0 = (
            mean_logistic_loss(x, t, theta, intercept + h)
            - mean_logistic_loss(x, t, theta, intercept - h)
        ) / (2 * h)
        assert g0 == pytest.approx(numeric0, rel=1e-5, abs=1e-8)

    def test_wide_sparse_design_converges_at_default_tolerance(self):
        rng = np.random.default_rng(11)
        n, m = 2000, 1000
        x = sp.random(n, m, density=0.02, format="csc", random_state=11, data_rvs=np.ones)
        eta = x[:, :10] @ np.full(10, 1.5) - 0.5
        t = (rng.random(n) < expit(eta)).astype(np.float64)
        lam = lambda_max(x, t) / 20
        fit = fit_logistic_l1(x, t, lam)
        assert fit.converged
        assert 0 < fit.n_nonzero < m
        _, grad = logistic_gradient(x, t, fit.coefficients, fit.intercept)
        active = fit.coefficients != 0
        residual = np.abs(grad[active] + lam * np.sign(fit.coefficients[active]))
        assert np.all(residual <= 1e-4)
        assert np.all(np.abs(grad[~active]) <= lam + 1e-6)

    def test_small_perturbations_do_not_improve_objective(self, logistic_problem):
        x, t = logistic_problem
        lam = lambda_max(x, t) / 5
        fit = fit_logistic_l1(x, t, lam, TIGHT)

        def objective(theta, b):
            return mean_logistic_loss(x, t, theta, b) + lam * np.abs(theta).sum()

        best = objective(fit.coefficients, fit.intercept)
        rng = np.random.default_rng(1)
        for _ in range(20):
            delta = rng.normal(scale=1e-3, size=x.shape[1])
            assert objective(fit.coefficients + delta, fit.intercept) >= best - 1e-10
        assert objective(fit.coefficients, fit.intercept + 1e-3) >= best - 1e-10

    def test_monotone_objective_check_passes(self, logistic_problem):
        x, t = logistic_problem
        config = SolverConfig(check_objective=True)
        fit = fit_logistic_l1(x, t, lambda_max(x, t) / 50, config)
        assert fit.converged

    def test_warm_start_matches_cold_start(self, logistic_problem):
        x, t = logistic_problem
        lam_max = lambda_max(x, t)
        warm = fit_logistic_l1(x, t, lam_max / 2, TIGHT)
        warm = fit_logistic_l1(x, t, lam_max / 20, TIGHT, warm_start=warm)
        cold = fit_logistic_l1(x, t, lam_max / 20, TIGHT)
        np.testing.assert_allclose(warm.coefficients, cold.coefficients, atol=1e-5)
        assert warm.intercept == pytest.approx(cold.intercept, abs=1e-5)

    def test_sparse_and_dense_designs_agree(self, logistic_problem):
        x, t = logistic_problem
        x = np.where(np.abs(x) > 1.0, x, 0.0)
        lam = lambda_max(x, t) / 10
        dense = fit_logistic_l1(x, t, lam, TIGHT)
        sparse = fit_logistic_l1(sp.csc_matrix(x), t, lam, TIGHT)
        np.testing.assert_allclose(dense.coefficients, sparse.coefficients, atol=1e-6)

    def test_standardized_fit_equals_fit_on_unit_columns(self, logistic_problem):
        x, t = logistic_problem
        x = x * np.array([1, 10, 0.1, 1, 1, 1, 1, 1])
        sds = x.std(axis=0)
        lam = lambda_max(x / sds, t) / 10
        config = SolverConfig(tol_cd=1e-9, standardize_continuous=True)
        scaled = fit_logistic_l1(x, t, lam, config)
        unit = fit_logistic_l1(x / sds, t, lam, TIGHT)
        np.testing.assert_allclose(scaled.coefficients * sds, unit.coefficients, atol=1e-5)
        assert scaled.intercept == pytest.approx(unit.intercept, abs=1e-5)

    def test_separable_data_raises(self):
        x = np.array([[-2.0], [-1.0], [1.0], [2.0]])
        t = np.array([0, 0, 1, 1])
        with pytest.raises(SeparationError):
            fit_logistic_l1(x, t, 0.0)

    def test_negative_lambda_rejected(self, logistic_problem):
        x, t = logistic_problem
        with pytest.raises(ValueError):
            fit_logistic_l1(x, t, -1.0)

    def test_single_class_rejected(self):
        with pytest.raises(ValueError):
            fit_logistic_l1(np.ones((3, 1)), np.ones(3), 0.1)

    def test_warm_start_width_checked(self, logistic_problem):
        x, t = logistic_problem
        bad = LogisticFit(np.zeros(3), 0.0, 0.1, True, 1, 0.0)
        with pytest.raises(DimensionMismatchError):
            fit_logistic_l1(x, t, 0.1, warm_start=bad)

    def test_path_sparsity_grows_as_lambda_falls(self, logistic_problem):
        x, t = logistic_problem
        grid = lambda_grid(lambda_max(x, t), n_lambdas=10, min_ratio=1e-2)
        fit = None
        counts = []
        for lam in grid:
            fit = fit_logistic_l1(x, t, lam, TIGHT, warm_start=fit)
            counts.append(fit.n_nonzero)
        assert counts == sorted(counts)


EIGHT_POINT_X = np.array(
    [
        [-1.5, 0.5],
        [-1.5, -0.5],
        [-0.5, -0.5],
        [-0.5, 0.5],
        [0.5, 0.5],
        [0.5, -0.5],
        [1.5, -0.5],
        [1.5, 0.5],
    ]
)
EIGHT_POINT_T = np.array([0, 0, 0, 1, 0, 1, 1, 1])


def _brute_force_l1_logistic(x, t, lam):
    """Coarse-to-fine grid search over (intercept, θ1, θ2) in [−5, 5]³."""
    center, half, step = np.zeros(3), 5.0, 0.25
    while step >= 1e-5:
        axes = [np.arange(c - half, c + half + step / 2, step) for c in center]
        b, th1, th2 = np.meshgrid(*axes, indexing="ij")
        eta = b[..., None] + th1[..., None] * x[:, 0] + th2[..., None] * x[:, 1]
        objective = np.mean(np.logaddexp(0.0, eta) - t * eta, axis=-1)
        objective += lam * (np.abs(th1) + np.abs(th2))
        best = np.argmin(objective)
        center = np.array([b.flat[best], th1.flat[best], th2.flat[best]])
        half, step = 3 * step, step / 10
    return center


class TestGridSearchOracle:
    @pytest.fixture(scope="class")
    def oracle(self):
        return _brute_force_l1_logistic(EIGHT_POINT_X, EIGHT_POINT_T, 0.1)

    def test_coefficients_match_exhaustive_search(self, oracle):
        fit = fit_logistic_l1(EIGHT_POINT_X, EIGHT_POINT_T, 0.1, TIGHT)
        assert fit.converged
        assert fit.intercept == pytest.approx(oracle[0], abs=5e-3)
        np.testing.assert_allclose(fit.coefficients, oracle[1:], atol=5e-3)

    def test_scores_match_the_oracle_sigmoid(self, oracle):
        fit = fit_logistic_l1(EIGHT_POINT_X, EIGHT_POINT_T, 0.1, TIGHT)
        expected = expit(oracle[0] + EIGHT_POINT_X @ oracle[1:])
        np.testing.assert_allclose(predict_proba(fit, EIGHT_POINT_X), expected, atol=1e-4)

    @pytest.mark.parametrize("seed", range(10))
    def test_kkt_residuals_on_random_instances(self, seed):
        rng = np.random.default_rng(100 + seed)
        n, m = 200 + 30 * seed, 5 + 4 * seed
        x = rng.normal(size=(n, m))
        t = (rng.random(n) < expit(x[:, 0] - 0.5 * x[:, 1])).astype(np.float64)
        lam = lambda_max(x, t) / 8
        fit = fit_logistic_l1(x, t, lam, TIGHT)
        _, grad = logistic_gradient(x, t, fit.coefficients, fit.intercept)
        active = fit.coefficients != 0
        residual = np.abs(grad[active] + lam * np.sign(fit.coefficients[active]))
        assert np.all(residual <= 1e-4)
        assert np.all(np.abs(grad[~active]) <= lam + 1e-4)


class TestPrediction:
    def test_scores_are_clipped(self):
        fit = LogisticFit(np.array([1.0]), 50.0, 0.0, True, 1, 0.0)
        p = predict_proba(fit, np.array([[100.0], [-200.0]]))
        assert p[0] == 1.0 - PROBA_EPS
        assert p[1] == PROBA_EPS

    def test_width_mismatch(self):
        fit = LogisticFit(np.array([1.0, 2.0]), 0.0, 0.0, True, 1, 0.0)
        with pytest.raises(DimensionMismatchError):
            predict_proba(fit, np.ones((2, 3)))

    def test_heldout_loglik_of_null_model(self):
        fit = LogisticFit(np.zeros(1), 0.0, 1.0, True, 1, 0.0)
        t = np.array([0.0, 1.0, 1.0])
        assert heldout_loglik(fit, np.zeros((3, 1)), t) == pytest.approx(math.log(0.5))


class TestCrossValidation:
    def test_selects_a_grid_value(self, logistic_problem):
        x, t = logistic_problem
        grid = lambda_grid(lambda_max(x, t), n_lambdas=8)
        cv = cv_select_lambda(x, t, grid, k=5, seed=3)
        assert cv.selected_lambda in set(grid)
        assert len(cv.mean_heldout_loglik) == 8
        assert cv.selected_lambda == grid[int(np.argmax(cv.mean_heldout_loglik))]

    def test_informative_covariates_beat_the_null_model(self, logistic_problem):
        x, t = logistic_problem
        grid = lambda_grid(lambda_max(x, t), n_lambdas=8)
        cv = cv_select_lambda(x, t, grid, k=5, seed=3)
        assert cv.selected_lambda < grid[0]

    def test_single_huge_lambda_selects_null_model(self, logistic_problem):
        x, t = logistic_problem
        big = lambda_max(x, t) * 10
        cv = cv_select_lambda(x, t, [big], k=5, seed=0)
        assert cv.selected_lambda == big

    def test_reproducible_for_a_seed(self, logistic_problem):
        x, t = logistic_problem
        grid = lambda_grid(lambda_max(x, t), n_lambdas=5)
        a = cv_select_lambda(x, t, grid, k=4, seed=9)
        b = cv_select_lambda(x, t, grid, k=4, seed=9)
        np.testing.assert_array_equal(a.mean_heldout_loglik, b.mean_heldout_loglik)

    def test_too_few_treated_for_k_folds(self):
        x = np.arange(20, dtype=float).reshape(-1, 1)
        t = np.zeros(20)
        t[:3] = 1
        with pytest.raises(CrossValidationError):
            cv_select_lambda(x, t, [0.1], k=5)

    def test_grid_must_descend(self, logistic_problem):
        x, t = logistic_problem
        with pytest.raises(ValueError):
            cv_select_lambda(x, t, [0.01, 0.1], k=5)

    def test_thread_count_does_not_change_the_curve(self, logistic_problem):
        x, t = logistic_problem
        grid = lambda_grid(lambda_max(x, t), n_lambdas=6)
        serial = cv_select_lambda(x, t, grid, k=4, seed=2, n_jobs=1)
        threaded = cv_select_lambda(x, t, grid, k=4, seed=2, n_jobs=3)
        np.testing.assert_array_equal(serial.mean_heldout_loglik, threaded.mean_heldout_loglik)
        assert serial.selected_lambda == threaded.selected_lambda

    def test_n_jobs_validated(self, logistic_problem):
        x, t = logistic_problem
        with pytest.raises(ValueError):
            cv_select_lambda(x, t, [0.1], k=5, n_jobs=0)

    def test_saturated_paths_stop_fitting_early(self, logistic_problem, monkeypatch):
        x, t = logistic_problem
        lams = []
        original = solver.fit_logistic_l1

        def counting(x, t, lam, *args, **kwargs):
            lams.append(lam)
            return original(x, t, lam, *args, **kwargs)

        monkeypatch.setattr(solver, "fit_logistic_l1", counting)
        grid = lambda_grid(lambda_max(x, t), n_lambdas=20)
        full = cv_select_lambda(x, t, grid, k=5, seed=1, config=SolverConfig(early_stop_path=False))
        assert len(lams) == 5 * 20
        lams.clear()
        short = cv_select_lambda(x, t, grid, k=5, seed=1, config=SolverConfig())
        assert len(lams) < 5 * 20
        assert np.all(np.isfinite(short.mean_heldout_loglik))
        np.testing.assert_allclose(short.mean_heldout_loglik, full.mean_heldout_loglik, atol=5e-3)


class TestPathSaturation:
    def test_explained_deviance_stops_immediately(self):
        assert path_saturated(0.69, 0.69, 0.0005, position=1)

    def test_flat_steps_stop_only_after_a_few_lambdas(self):
        assert not path_saturated(0.69, 0.5, 0.5, position=3)
        assert path_saturated(0.69, 0.5, 0.5, position=5)

    def test_real_progress_continues(self):
        assert not path_saturated(0.69, 0.5, 0.45, position=10)


class TestRidge:
    def test_matches_closed_form(self):
        rng = np.random.default_rng(4)
        x = rng.normal(size=(50, 4))
        u = x @ np.array([1.0, -2.0, 0.0, 0.5]) + 3.0 + rng.normal(size=50)
        alpha = 2.0
        fit = fit_ridge(x, u, alpha)
        xc = x - x.mean(axis=0)
        beta = np.linalg.solve(xc.T @ xc + alpha * np.eye(4), xc.T @ (u - u.mean()))
        np.testing.assert_allclose(fit.coefficients, beta, rtol=1e-6, atol=1e-8)
        assert fit.intercept == pytest.approx(u.mean() - x.mean(axis=0) @ beta)

    def test_sparse_design_matches_dense(self):
        rng = np.random.default_rng(5)
        x = (rng.random((60, 5)) < 0.3).astype(float)
        u = x @ np.arange(5.0) + rng.normal(size=60)
        dense = fit_ridge(x, u, 1.0)
        sparse = fit_ridge(sp.csc_matrix(x), u, 1.0)
        np.testing.assert_allclose(dense.coefficients, sparse.coefficients, rtol=1e-6)

    def test_huge_penalty_shrinks_to_the_mean(self):
        rng = np.random.default_rng(7)
        x = rng.normal(size=(40, 3))
        u = x @ np.array([2.0, -1.0, 0.5]) + 4.0
        fit = fit_ridge(x, u, 1e12)
        np.testing.assert_allclose(fit.coefficients, 0.0, atol=1e-9)
        assert fit.intercept == pytest.approx(u.mean(), abs=1e-8)

    def test_r_squared_of_exact_fit(self):
        x = np.arange(10, dtype=float).reshape(-1, 1)
        u = 2.0 * x[:, 0] + 1.0
        fit = fit_ridge(x, u, 0.0)
        assert r_squared(fit, x, u) == pytest.approx(1.0)

    def test_constant_target(self):
        x = np.arange(10, dtype=float).reshape(-1, 1)
        fit = fit_ridge(x, np.ones(10), 1.0)
        with pytest.raises(ConstantTargetError):
            r_squared(fit, x, np.ones(10))
        with pytest.raises(ConstantTargetError):
            cross_validated_r_squared(x, np.ones(10))

    def test_heldout_r_squared_tracks_signal(self):
        rng = np.random.default_rng(6)
        x = rng.normal(size=(300, 10))
        signal = x @ rng.normal(size=10)
        config = RidgeConfig(outer_folds=3, inner_folds=3)
        strong = cross_validated_r_squared(x, signal + 0.01 * rng.normal(size=300), config)
        weak = cross_validated_r_squared(x, rng.normal(size=300), config)
        assert strong > 0.95
        assert weak < 0.1


class TestStratumOls:
    def test_mean_difference_and_pooled_se(self):
        y = np.array([3.0, 5.0, 1.0, 1.0])
        t = np.array([1, 1, 0, 0])
        ols = fit_ols_stratum(y, t)
        assert ols.nu_s == pytest.approx(2.0 + 1.0)
        assert ols.alpha_s == pytest.approx(1.0)
        assert ols.se_nu_s == pytest.approx(1.0)

    def test_no_residual_degrees_of_freedom(self):
        ols = fit_ols_stratum(np.array([2.0, 1.0]), np.array([1, 0]))
        assert ols.nu_s == 1.0
        assert math.isinf(ols.se_nu_s)

    def test_single_group_is_degenerate(self):
        with pytest.raises(DegenerateStratumError):
            fit_ols_stratum(np.array([1.0, 2.0]), np.array([1, 1]))
