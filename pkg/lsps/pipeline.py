"""The five-step large-scale propensity score pipeline."""

import logging
import time
from typing import List, Optional

import numpy as np

from .config import PipelineConfig
from .engine.balance import balance_report, stratum_weights
from .engine.effect import estimate_effect, estimate_unadjusted
from .engine.propensity import check_equipoise, compute_preference, screen_instruments, stratify
from .engine.solver import (
    cv_select_lambda,
    fit_logistic_l1,
    lambda_grid,
    lambda_max,
    predict_proba,
)
from .exceptions import DataValidationError
from .models import AnalysisReport, CohortDataset, LogisticFit, PropensityModel

logger = logging.getLogger(__name__)

# any positive λ gives the null model when λ_max is 0
NULL_MODEL_LAMBDA = 1.0


def select_covariates(data: CohortDataset, config: PipelineConfig) -> CohortDataset:
    """Apply the manual covariate list, then the exclusion list."""
    if config.include is not None:
        data = data.keep_covariates(config.include)
    if config.exclude:
        unknown = sorted(set(config.exclude) - set(data.covariate_names))
        if unknown:
            logger.warning(f"Excluded covariate(s) not present: {', '.join(unknown)}")
        data = data.drop_covariates(config.exclude)
    return data


def fit_propensity(data: CohortDataset, config: Optional[PipelineConfig] = None) -> PropensityModel:
    """
    Cross-validate λ over the grid, then refit on every subject at the chosen λ.

    The refit follows the same warm-started path from the top of the grid.
    """
    config = config or PipelineConfig()
    data.require_both_groups()
    if data.n_covariates == 0:
        raise DataValidationError("No covariates left to model treatment")
    x, t = data.covariates, data.treatment.astype(np.float64)
    if config.lambda_grid is not None:
        grid = np.asarray(config.lambda_grid, dtype=np.float64)
    else:
        lam_max = lambda_max(x, t)
        if lam_max > 0.0:
            grid = lambda_grid(lam_max, config.n_lambdas, config.lambda_min_ratio)
        else:
            logger.warning("No covariate is associated with treatment; fitting the null model")
            grid = np.array([NULL_MODEL_LAMBDA])
    logger.debug(f"λ grid: {grid[0]:.4g} … {grid[-1]:.4g} ({len(grid)} values)")

    cv = cv_select_lambda(
        x,
        t,
        grid,
        k=config.cv_folds,
        seed=config.seed,
        config=config.solver,
        n_jobs=config.threads,
    )
    fit: Optional[LogisticFit] = None
    for lam in grid[grid >= cv.selected_lambda]:
        fit = fit_logistic_l1(x, t, lam, config.solver, warm_start=fit)
    assert fit is not None
    if not fit.converged:
        logger.warning(f"Final propensity fit at λ={fit.lam:.4g} did not converge")
    logger.info(
        f"✓ Propensity model: {fit.n_nonzero} of {data.n_covariates} covariate(s) selected"
    )
    return PropensityModel(
        fit=fit, cv=cv, scores=predict_proba(fit, x), covariate_names=list(data.covariate_names)
    )


def run_analysis(
    data: CohortDataset, config: Optional[PipelineConfig] = None, estimate: bool = True
) -> AnalysisReport:
    """
    Run the pipeline on one cohort.

    Args:
        data: Cohort to analyze
        config: Pipeline settings
        estimate: Run the effect step; False stops after the balance check

    Returns:
        AnalysisReport with diagnostics, the adjusted effect and the
        unadjusted reference effect
    """
    config = config or PipelineConfig()
    config.validate()
    start_time = time.time()
    logger.info("=" * 80)
    logger.info("Starting LSPS analysis")
    logger.info("=" * 80)
    logger.info(f"  Subjects: {data.n_subjects} ({data.n_treated} treated)")
    logger.info(f"  Covariates: {data.n_covariates}")
    logger.info(f"  Strata: {config.n_strata}, CV folds: {config.cv_folds}, seed: {config.seed}")
    data.require_both_groups()
    warnings: List[str] = []

    logger.info("")
    logger.info("Step 1: Screening for instruments...")
    instruments = screen_instruments(
        data, config.instrument_t_threshold, config.instrument_y_threshold
    )
    if instruments.skipped:
        warnings.append(
            f"{len(instruments.skipped)} constant covariate(s) skipped by the instrument screen"
        )
    if instruments.flagged:
        warnings.append(
            f"{len(instruments.flagged)} possible instrument(s) flagged; "
            "exclude them explicitly if domain review agrees"
        )
    analysis_data = select_covariates(data, config)
    logger.info(
        f"✓ {len(instruments.flagged)} flagged, "
        f"{data.n_covariates - analysis_data.n_covariates} excluded"
    )

    logger.info("")
    logger.info("Step 2: Fitting propensity model...")
    propensity = fit_propensity(analysis_data, config)
    if not propensity.fit.converged:
        warnings.append("Propensity fit did not converge")

    logger.info("")
    logger.info("Step 3: Checking equipoise...")
    preference = compute_preference(propensity.scores, float(data.treatment.mean()))
    equipoise = check_equipoise(preference)
    if equipoise.passed:
        logger.info(f"✓ Equipoise: {equipoise.fraction_in_band:.1%} of subjects in band")
    else:
        message = (
            f"Equipoise not reached: {equipoise.fraction_in_band:.1%} of subjects in "
            f"[{equipoise.band[0]}, {equipoise.band[1]}]"
        )
        logger.warning(message)
        warnings.append(message)

    logger.info("")
    logger.info("Step 4: Stratifying and checking balance...")
    if config.n_strata > data.n_treated:
        raise DataValidationError(
            f"{config.n_strata} strata requested but only {data.n_treated} treated subject(s)"
        )
    stratification = stratify(propensity.scores, data.treatment, config.n_strata, config.trim)
    warnings.extend(stratification.warnings)
    weights = stratum_weights(stratification, data.treatment)
    balance = balance_report(analysis_data, stratification, weights)
    warnings.extend(balance.warnings)

    effect = None
    unadjusted = None
    if estimate:
        logger.info("")
        logger.info("Step 5: Estimating treatment effect...")
        effect = estimate_effect(data.outcome, data.treatment, stratification)
        warnings.extend(effect.warnings)
        unadjusted = estimate_unadjusted(data.outcome, data.treatment)
        logger.info("✓ Effect estimated")

    report = AnalysisReport(
        instruments=instruments,
        propensity=propensity,
        equipoise=equipoise,
        stratification=stratification,
        balance=balance,
        effect=effect,
        unadjusted=unadjusted,
        excluded=[n for n in data.covariate_names if n not in set(analysis_data.covariate_names)],
        warnings=warnings,
    )
    logger.info("")
    logger.info("=" * 80)
    logger.info(f"Analysis finished in {time.time() - start_time:.2f}s")
    if report.caution:
        logger.warning("Diagnostics failed: interpret the estimate with caution")
    logger.info("=" * 80)
    return report
