"""Regularized GLM fitting: L1 logistic regression, ridge regression, stratum OLS."""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.sparse.linalg import LinearOperator, cg
from scipy.special import expit, logit

from ..config import RidgeConfig, SolverConfig
from ..dataset import assign_folds, assign_stratified_folds
from ..exceptions import (
    ConstantTargetError,
    ConvergenceError,
    CrossValidationError,
    DegenerateStratumError,
    DimensionMismatchError,
    SeparationError,
)
from ..models import CvResult, LogisticFit, RidgeFit, StratumOls
from ..utils import linalg
from ..utils.linalg import Design
from .cd_kernels import cd_sweep, full_gradient

logger = logging.getLogger(__name__)

PROBA_EPS = 1e-10
# a λ path stops once the fit explains this share of the null deviance, or once
# (after a few steps) a step gains less than this fraction of the deviance
PATH_MAX_DEV_RATIO = 0.999
PATH_MIN_DEV_CHANGE = 1e-5
_PATH_MIN_STEPS = 5


def _check_binary(t: np.ndarray) -> np.ndarray:
    t = np.asarray(t, dtype=np.float64)
    if np.any((t != 0.0) & (t != 1.0)):
        raise ValueError("Treatment must be binary")
    n_treated = t.sum()
    if n_treated == 0 or n_treated == len(t):
        raise ValueError("Both treatment classes must be present")
    return t


def _pointwise_loss(eta: np.ndarray, sign: np.ndarray) -> np.ndarray:
    """log(1 + e^η) − tη written as log(1 + e^{(1−2t)η}), exact for large |η|."""
    return np.logaddexp(0.0, sign * eta)


def _residual(eta: np.ndarray, sign: np.ndarray) -> np.ndarray:
    """σ(η) − t without cancellation."""
    return sign * expit(sign * eta)


def mean_logistic_loss(x: Design, t: np.ndarray, theta: np.ndarray, intercept: float) -> float:
    """Mean cross-entropy of the logistic model (unpenalized)."""
    eta = intercept + linalg.matvec(x, theta)
    return float(np.mean(_pointwise_loss(eta, 1.0 - 2.0 * np.asarray(t, dtype=np.float64))))


def logistic_gradient(
    x: Design, t: np.ndarray, theta: np.ndarray, intercept: float
) -> Tuple[float, np.ndarray]:
    """Gradient of the mean loss: (d/d intercept, d/d θ)."""
    n = x.shape[0]
    sign = 1.0 - 2.0 * np.asarray(t, dtype=np.float64)
    residual = _residual(intercept + linalg.matvec(x, theta), sign)
    return float(residual.mean()), linalg.rmatvec(x, residual) / n


def lambda_max(x: Design, t: np.ndarray) -> float:
    """Smallest λ whose solution has every coefficient at zero."""
    x = linalg.as_design(x)
    t = np.asarray(t, dtype=np.float64)
    if x.shape[1] == 0:
        return 0.0
    return float(np.max(np.abs(linalg.rmatvec(x, t - t.mean()))) / x.shape[0])


def lambda_grid(lam_max: float, n_lambdas: int = 20, min_ratio: float = 1e-4) -> np.ndarray:
    """Log-spaced descending grid from λ_max to λ_max·min_ratio."""
    if lam_max <= 0:
        raise ValueError("λ_max is 0: no covariate is associated with treatment")
    if n_lambdas < 1:
        raise ValueError(f"n_lambdas must be >= 1, got {n_lambdas}")
    if n_lambdas == 1:
        return np.array([lam_max])
    return np.geomspace(lam_max, lam_max * min_ratio, n_lambdas)


class _KernelDesign:
    """Array views of a design in the layout the compiled kernels take."""

    def __init__(self, x: Design):
        n = x.shape[0]
        self.all_rows = np.arange(n, dtype=np.int64)
        if linalg.is_sparse(x):
            self.dense = False
            self.data = np.ascontiguousarray(x.data, dtype=np.float64)
            self.indptr = x.indptr.astype(np.int64)
            self.indices = x.indices.astype(np.int64)
            self.xt = np.zeros((0, 0), dtype=np.float64)
        else:
            self.dense = True
            self.xt = np.ascontiguousarray(x.T)
            self.data = np.zeros(0, dtype=self.xt.dtype)
            self.indptr = np.zeros(1, dtype=np.int64)
            self.indices = np.zeros(0, dtype=np.int64)

    def arrays(self) -> tuple:
        return (self.dense, self.xt, self.indptr, self.indices, self.data, self.all_rows)


class _CoordinateDescent:
    """Cyclic coordinate descent with soft-thresholded coordinate steps.

    Sweeps run compiled over the working set (the non-zero coordinates). Each
    step never increases the penalized objective. When a sweep moves no
    parameter by more than `tol_cd`, the full gradient admits every zero
    coordinate violating |∂ⱼ| ≤ λ; none left means converged.
    """

    def __init__(self, x: Design, t: np.ndarray, lam: float, config: SolverConfig):
        self.x = x
        self.t = t
        self.sign = 1.0 - 2.0 * t
        self.lam = lam
        self.config = config
        self.n, self.m = x.shape
        self.scale = np.ones(self.m)
        if config.standardize_continuous:
            sds = linalg.column_stds(x)
            for j in range(self.m):
                if sds[j] > 0 and not linalg.is_binary_column(x, j):
                    self.scale[j] = sds[j]
        self.inv_scale = 1.0 / self.scale
        self.bounds = 0.25 * linalg.column_means(linalg.squared(x)) * self.inv_scale**2
        self.design = _KernelDesign(x)

    def objective(self, eta: np.ndarray, theta: np.ndarray) -> float:
        loss = float(np.mean(_pointwise_loss(eta, self.sign)))
        return loss + self.lam * float(np.abs(theta).sum())

    def run(self, warm_start: Optional[LogisticFit]) -> LogisticFit:
        config = self.config
        if warm_start is not None:
            if len(warm_start.coefficients) != self.m:
                raise DimensionMismatchError("Warm start has the wrong number of coefficients")
            theta = warm_start.coefficients * self.scale
            intercept = warm_start.intercept
        else:
            theta = np.zeros(self.m)
            intercept = float(logit(self.t.mean()))
        theta = np.ascontiguousarray(theta, dtype=np.float64)
        eta = intercept + linalg.matvec(self.x, theta / self.scale)
        working_set = np.flatnonzero(theta).astype(np.int64)
        objective = self.objective(eta, theta)
        arrays = self.design.arrays()
        converged = False
        sweeps = 0

        while sweeps < config.max_sweeps:
            sweeps += 1
            shift, max_change = cd_sweep(
                *arrays, self.inv_scale, self.bounds, self.sign, eta, theta, working_set, self.lam
            )
            intercept += shift

            if np.max(np.abs(theta * self.inv_scale), initial=0.0) > config.coef_guard:
                raise SeparationError(
                    f"Coefficient magnitude exceeded {config.coef_guard} at λ={self.lam:.3g}; "
                    "the classes are (nearly) separable"
                )
            if config.check_objective:
                current = self.objective(eta, theta)
                assert current <= objective + 1e-12 * max(1.0, abs(objective)), (
                    f"Objective increased from {objective} to {current} in sweep {sweeps}"
                )
                objective = current

            if max_change >= config.tol_cd:
                continue
            grad = full_gradient(*arrays, self.inv_scale, self.sign, eta)
            violators = np.flatnonzero((theta == 0.0) & (np.abs(grad) > self.lam))
            if violators.size == 0:
                converged = True
                break
            working_set = np.union1d(np.flatnonzero(theta), violators).astype(np.int64)

        if not converged:
            logger.warning(
                f"Coordinate descent hit {config.max_sweeps} sweeps at λ={self.lam:.3g} "
                "without converging"
            )
        return LogisticFit(
            coefficients=theta / self.scale,
            intercept=float(intercept),
            lam=float(self.lam),
            converged=converged,
            iterations=sweeps,
            final_objective=self.objective(eta, theta),
        )


def fit_logistic_l1(
    x: Design,
    t: np.ndarray,
    lam: float,
    config: Optional[SolverConfig] = None,
    warm_start: Optional[LogisticFit] = None,
) -> LogisticFit:
    """
    Minimize mean logistic loss + λ·Σ|θⱼ| with an unpenalized intercept.

    Args:
        x: N×M design (CSC sparse or dense)
        t: binary treatment vector
        lam: penalty λ >= 0
        config: solver tolerances
        warm_start: previous fit along a λ path

    Returns:
        LogisticFit; `converged` is False when the sweep cap was reached.

    Raises:
        SeparationError: a coefficient exceeded `config.coef_guard`
    """
    if lam < 0:
        raise ValueError(f"λ must be non-negative, got {lam}")
    x = linalg.as_design(x)
    t = _check_binary(t)
    if len(t) != x.shape[0]:
        raise DimensionMismatchError(f"{len(t)} labels for {x.shape[0]} rows")
    solver = _CoordinateDescent(x, t, float(lam), config or SolverConfig())
    fit = solver.run(warm_start)
    logger.debug(
        f"λ={lam:.4g}: {fit.n_nonzero} non-zero, {fit.iterations} sweep(s), "
        f"objective {fit.final_objective:.6f}"
    )
    return fit


def predict_proba(fit: LogisticFit, x: Design) -> np.ndarray:
    """Propensity scores clamped to [ε, 1-ε] with ε = 1e-10."""
    x = linalg.as_design(x)
    if x.shape[1] != len(fit.coefficients):
        raise DimensionMismatchError(
            f"Design has {x.shape[1]} columns, model has {len(fit.coefficients)}"
        )
    scores = expit(fit.intercept + linalg.matvec(x, fit.coefficients))
    return np.clip(scores, PROBA_EPS, 1.0 - PROBA_EPS)


def heldout_loglik(fit: LogisticFit, x: Design, t: np.ndarray) -> float:
    """Mean Bernoulli log-likelihood of t under the fitted model."""
    p = predict_proba(fit, x)
    return float(np.mean(t * np.log(p) + (1.0 - t) * np.log1p(-p)))


def path_saturated(null_loss: float, previous_loss: float, loss: float, position: int) -> bool:
    """True once further λ steps cannot change the fit materially."""
    if null_loss > 0.0 and 1.0 - loss / null_loss > PATH_MAX_DEV_RATIO:
        return True
    return position >= _PATH_MIN_STEPS and previous_loss - loss < PATH_MIN_DEV_CHANGE * loss


def _fold_path(
    x: Design,
    t: np.ndarray,
    test: np.ndarray,
    grid: np.ndarray,
    config: SolverConfig,
) -> np.ndarray:
    """Held-out log-likelihood along the grid for one fold, warm-started.

    Once the path saturates, the remaining λ values score the same as the last fit.
    """
    train_rows = np.flatnonzero(~test)
    test_rows = np.flatnonzero(test)
    x_train, t_train = linalg.take_rows(x, train_rows), t[train_rows]
    x_test, t_test = linalg.take_rows(x, test_rows), t[test_rows]
    scores = np.full(len(grid), -np.inf)
    rate = float(t_train.mean())
    null_loss = -(rate * math.log(rate) + (1.0 - rate) * math.log1p(-rate))
    previous_loss = null_loss
    warm: Optional[LogisticFit] = None
    for i, lam in enumerate(grid):
        try:
            warm = fit_logistic_l1(x_train, t_train, lam, config, warm_start=warm)
        except SeparationError as e:
            logger.warning(f"Path stopped at λ={lam:.3g}: {e}")
            break
        scores[i] = heldout_loglik(warm, x_test, t_test)
        if not config.early_stop_path:
            continue
        loss = mean_logistic_loss(x_train, t_train, warm.coefficients, warm.intercept)
        if i + 1 < len(grid) and path_saturated(null_loss, previous_loss, loss, i + 1):
            logger.debug(f"Path saturated at λ={lam:.3g} ({i + 1}/{len(grid)})")
            scores[i + 1 :] = scores[i]
            break
        previous_loss = loss
    return scores


def cv_select_lambda(
    x: Design,
    t: np.ndarray,
    grid: Sequence[float],
    k: int = 10,
    seed: int = 0,
    config: Optional[SolverConfig] = None,
    n_jobs: int = 1,
) -> CvResult:
    """
    Choose λ by k-fold cross-validated held-out log-likelihood.

    Folds are stratified by treatment. Each fold walks the grid from the
    largest λ down with warm starts; the maximum mean held-out log-likelihood
    wins and ties go to the larger λ. With `n_jobs` > 1 the folds run on a
    thread pool; the result does not depend on `n_jobs`.
    """
    grid_arr = np.asarray(list(grid), dtype=np.float64)
    if grid_arr.size == 0:
        raise ValueError("λ grid is empty")
    if np.any(grid_arr <= 0) or np.any(np.diff(grid_arr) >= 0):
        raise ValueError("λ grid must be strictly descending positive values")
    x = linalg.as_design(x)
    t = _check_binary(t)
    config = config or SolverConfig()

    counts = np.bincount(t.astype(np.int64), minlength=2)
    if counts.min() < k:
        raise CrossValidationError(
            f"Cannot build {k} folds with both classes: {counts[1]} treated, {counts[0]} control"
        )
    if n_jobs < 1:
        raise ValueError(f"n_jobs must be >= 1, got {n_jobs}")
    folds = assign_stratified_folds(t, k, seed)
    masks = [folds.test_mask(fold) for fold in range(k)]
    for fold, test in enumerate(masks):
        for part, mask in (("held-out", test), ("training", ~test)):
            if len(np.unique(t[mask])) < 2:
                raise CrossValidationError(f"Fold {fold} {part} set has a single class")

    def run_fold(fold: int) -> np.ndarray:
        scores = _fold_path(x, t, masks[fold], grid_arr, config)
        logger.debug(f"Fold {fold + 1}/{k} done")
        return scores

    if n_jobs == 1:
        per_fold = [run_fold(fold) for fold in range(k)]
    else:
        with ThreadPoolExecutor(max_workers=min(n_jobs, k)) as pool:
            per_fold = list(pool.map(run_fold, range(k)))

    mean_loglik = np.mean(np.vstack(per_fold), axis=0)
    best = int(np.argmax(mean_loglik))
    result = CvResult(
        lambda_grid=grid_arr,
        mean_heldout_loglik=mean_loglik,
        selected_lambda=float(grid_arr[best]),
        seed=seed,
        k=k,
    )
    logger.info(
        f"✓ Cross-validation selected λ={result.selected_lambda:.4g} "
        f"(grid position {best + 1}/{len(grid_arr)})"
    )
    return result


def fit_ridge(
    x: Design,
    target: np.ndarray,
    alpha: float,
    tol: float = 1e-10,
    warm_start: Optional[np.ndarray] = None,
) -> RidgeFit:
    """
    Minimize Σ(uᵢ − b − βᵀxᵢ)² + α·Σβⱼ² by conjugate gradient.

    Centering is applied implicitly so sparse designs stay sparse.

    Raises:
        ConvergenceError: the linear solve did not reach `tol`
    """
    if alpha < 0:
        raise ValueError(f"alpha must be non-negative, got {alpha}")
    x = linalg.as_design(x)
    u = np.asarray(target, dtype=np.float64)
    n, m = x.shape
    if len(u) != n:
        raise DimensionMismatchError(f"{len(u)} targets for {n} rows")
    means = linalg.column_means(x)
    u_bar = float(u.mean())

    def normal_matvec(v: np.ndarray) -> np.ndarray:
        xv = linalg.matvec(x, v)
        return linalg.rmatvec(x, xv - xv.mean()) + alpha * v

    operator = LinearOperator((m, m), matvec=normal_matvec, dtype=np.float64)
    rhs = linalg.rmatvec(x, u - u_bar)
    beta, info = cg(
        operator, rhs, x0=warm_start, rtol=tol, atol=0.0, maxiter=max(10 * m, 1000)
    )
    if info != 0:
        raise ConvergenceError(f"Ridge solve did not converge (alpha={alpha}, info={info})")
    return RidgeFit(coefficients=beta, intercept=u_bar - float(means @ beta), alpha=float(alpha))


def r_squared(fit: RidgeFit, x: Design, target: np.ndarray) -> float:
    """1 − RSS/TSS of the fit on (x, target)."""
    u = np.asarray(target, dtype=np.float64)
    tss = float(np.sum((u - u.mean()) ** 2))
    if tss == 0.0:
        raise ConstantTargetError("R² is undefined for a constant target")
    rss = float(np.sum((u - fit.predict(linalg.as_design(x))) ** 2))
    return 1.0 - rss / tss


def _select_alpha(x: Design, u: np.ndarray, config: RidgeConfig, seed: int) -> float:
    """Alpha with the lowest inner-CV mean squared error; ties go to larger alpha."""
    alphas = sorted(config.alphas, reverse=True)
    folds = assign_folds(len(u), config.inner_folds, seed)
    errors = np.zeros(len(alphas))
    for fold in range(config.inner_folds):
        test = folds.test_mask(fold)
        train_rows, test_rows = np.flatnonzero(~test), np.flatnonzero(test)
        x_train, x_test = linalg.take_rows(x, train_rows), linalg.take_rows(x, test_rows)
        warm = None
        for i, alpha in enumerate(alphas):
            fit = fit_ridge(x_train, u[train_rows], alpha, config.tol, warm_start=warm)
            warm = fit.coefficients
            errors[i] += float(np.mean((u[test_rows] - fit.predict(x_test)) ** 2))
    return float(alphas[int(np.argmin(errors))])


def cross_validated_r_squared(
    x: Design, target: np.ndarray, config: Optional[RidgeConfig] = None, seed: int = 0
) -> float:
    """
    Held-out R² of a ridge regression, averaged over outer folds.

    The penalty is chosen within each outer training set by inner CV.
    """
    config = config or RidgeConfig()
    x = linalg.as_design(x)
    u = np.asarray(target, dtype=np.float64)
    if float(np.var(u)) == 0.0:
        raise ConstantTargetError("R² is undefined for a constant target")
    folds = assign_folds(len(u), config.outer_folds, seed)
    scores = []
    for fold in range(config.outer_folds):
        test = folds.test_mask(fold)
        train_rows, test_rows = np.flatnonzero(~test), np.flatnonzero(test)
        x_train = linalg.take_rows(x, train_rows)
        alpha = _select_alpha(x_train, u[train_rows], config, seed + fold + 1)
        fit = fit_ridge(x_train, u[train_rows], alpha, config.tol)
        scores.append(r_squared(fit, linalg.take_rows(x, test_rows), u[test_rows]))
        logger.debug(f"Outer fold {fold + 1}: alpha={alpha:g}, R²={scores[-1]:.4f}")
    return float(np.mean(scores))


def fit_ols_stratum(y: np.ndarray, t: np.ndarray) -> StratumOls:
    """
    Regress y on treatment within one stratum.

    The slope is the treated-minus-control mean difference; its standard error
    uses the pooled residual variance with n − 2 degrees of freedom.
    """
    y = np.asarray(y, dtype=np.float64)
    t = np.asarray(t)
    treated = t == 1
    n1 = int(treated.sum())
    n0 = len(t) - n1
    if n1 == 0 or n0 == 0:
        raise DegenerateStratumError(
            f"Stratum has {n1} treated and {n0} control subject(s); the fit is undefined"
        )
    mean1 = float(y[treated].mean())
    mean0 = float(y[~treated].mean())
    df = n1 + n0 - 2
    if df > 0:
        rss = float(np.sum((y[treated] - mean1) ** 2) + np.sum((y[~treated] - mean0) ** 2))
        se = math.sqrt(rss / df * (1.0 / n1 + 1.0 / n0))
    else:
        se = math.inf
    return StratumOls(alpha_s=mean0, nu_s=mean1 - mean0, se_nu_s=se, n_treated=n1, n_control=n0)
