"""Stratum weights and weighted standardized mean differences."""

import logging
from typing import List, Optional, Tuple

import numpy as np

from ..models import BalanceReport, CohortDataset, CovariateBalance, Stratification, StratumWeights
from ..utils import linalg

logger = logging.getLogger(__name__)

BALANCE_THRESHOLD = 0.1


def stratum_weights(strat: Stratification, treatment: np.ndarray) -> StratumWeights:
    """
    wᵢ = 1 / n_s^t, the reciprocal of the subject's (stratum, group) cell size.

    Strata lacking either group, and trimmed subjects, get weight 0.
    """
    treatment = np.asarray(treatment).astype(np.int64)
    stratum_of = strat.stratum_of
    if len(treatment) != len(stratum_of):
        raise ValueError(f"{len(treatment)} treatment values for {len(stratum_of)} subjects")
    included = stratum_of >= 0
    cell = np.where(included, 2 * stratum_of + treatment, 0)
    counts = np.bincount(cell[included], minlength=2 * strat.k).reshape(strat.k, 2)

    w = np.zeros(len(treatment), dtype=np.float64)
    w[included] = 1.0 / counts.ravel()[cell[included]]

    degenerate: List[int] = []
    warnings: List[str] = []
    for s in range(strat.k):
        n0, n1 = int(counts[s, 0]), int(counts[s, 1])
        if n0 == 0 or n1 == 0:
            degenerate.append(s)
            w[included & (stratum_of == s)] = 0.0
            message = f"Stratum {s} is degenerate ({n1} treated, {n0} control); excluded"
            logger.warning(message)
            warnings.append(message)
    return StratumWeights(w=w, degenerate_strata=degenerate, warnings=warnings)


def _centred_moments(
    x: linalg.Design, w: np.ndarray, total: float
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Weighted mean, Σw(x − x̄)² and a constant-column mask over rows with w > 0."""
    n, m = x.shape
    if not linalg.is_sparse(x):
        mean = w @ x / total
        spread = w @ (x - mean) ** 2
        constant = x.min(axis=0) == x.max(axis=0) if n else np.ones(m, dtype=bool)
        mean[constant] = x[0, constant] if n else 0.0
        return mean, spread, constant

    counts = np.diff(x.indptr)
    col = np.repeat(np.arange(m), counts)
    values = x.data
    wv = w[x.indices]
    mean = np.bincount(col, weights=wv * values, minlength=m) / total
    spread = np.bincount(col, weights=wv * (values - mean[col]) ** 2, minlength=m)
    stored_weight = np.bincount(col, weights=wv, minlength=m)
    zero_weight = np.where(counts == n, 0.0, np.maximum(total - stored_weight, 0.0))
    spread += mean**2 * zero_weight

    lo = np.full(m, np.inf)
    hi = np.full(m, -np.inf)
    np.minimum.at(lo, col, values)
    np.maximum.at(hi, col, values)
    has_zero = counts < n
    lo[has_zero] = np.minimum(lo[has_zero], 0.0)
    hi[has_zero] = np.maximum(hi[has_zero], 0.0)
    constant = lo == hi
    mean[constant] = lo[constant]
    return mean, spread, constant


def _group_moments(
    x: linalg.Design, w: np.ndarray
) -> Tuple[np.ndarray, np.ndarray]:
    """Weighted mean and frequency-weight corrected variance of every column.

    var = Σw / ((Σw)² − Σw²) · Σw(x − x̄)², taken as 0 when the leading factor
    is undefined. Columns constant over the weighted rows get exactly their
    value as mean and 0 as variance.
    """
    rows = np.flatnonzero(w > 0.0)
    w = w[rows]
    x = linalg.take_rows(x, rows)
    total = float(w.sum())
    total_sq = float(np.dot(w, w))
    mean, spread, constant = _centred_moments(x, w, total)
    spread[constant] = 0.0
    denom = total**2 - total_sq
    if denom <= 0.0:
        return mean, np.zeros_like(mean)
    return mean, spread * (total / denom)


def _smd(mean1: np.ndarray, var1: np.ndarray, mean0: np.ndarray, var0: np.ndarray) -> np.ndarray:
    diff = mean1 - mean0
    pooled = (var1 + var0) / 2.0
    with np.errstate(divide="ignore", invalid="ignore"):
        smd = diff / np.sqrt(pooled)
    zero = pooled == 0.0
    smd[zero] = np.where(diff[zero] == 0.0, 0.0, np.sign(diff[zero]) * np.inf)
    return smd


def _weighted_smds(
    x: linalg.Design, treatment: np.ndarray, weights: np.ndarray
) -> np.ndarray:
    w1 = np.where(treatment == 1, weights, 0.0)
    w0 = np.where(treatment == 0, weights, 0.0)
    if w1.sum() <= 0.0 or w0.sum() <= 0.0:
        raise ValueError("Both treatment groups need positive total weight")
    mean1, var1 = _group_moments(x, w1)
    mean0, var0 = _group_moments(x, w0)
    return _smd(mean1, var1, mean0, var0)


def weighted_smd(column: np.ndarray, treatment: np.ndarray, weights: np.ndarray) -> float:
    """
    (x̄₁ − x̄₀) / sqrt((σ₁² + σ₀²) / 2) with weighted means and variances.

    Returns 0 when both variances are 0 and the means agree, ±inf when they
    are 0 and the means differ.
    """
    x = np.asarray(column, dtype=np.float64).reshape(-1, 1)
    treatment = np.asarray(treatment)
    weights = np.asarray(weights, dtype=np.float64)
    if not len(treatment) == len(weights) == x.shape[0]:
        raise ValueError("column, treatment and weights must have the same length")
    return float(_weighted_smds(x, treatment, weights)[0])


def balance_report(
    data: CohortDataset,
    strat: Stratification,
    weights: Optional[StratumWeights] = None,
    threshold: float = BALANCE_THRESHOLD,
) -> BalanceReport:
    """SMD of every covariate before (unit weights) and after stratification."""
    if weights is None:
        weights = stratum_weights(strat, data.treatment)
    x = data.covariates
    treatment = data.treatment
    before = _weighted_smds(x, treatment, np.ones(data.n_subjects))

    warnings = list(weights.warnings)
    try:
        after = _weighted_smds(x, treatment, weights.w)
    except ValueError:
        message = "No stratum holds both treatment groups; adjusted balance is not evaluable"
        logger.warning(message)
        warnings.append(message)
        after = np.full(data.n_covariates, np.nan)

    rows = [
        CovariateBalance(index=j, name=name, smd_before=float(before[j]), smd_after=float(after[j]))
        for j, name in enumerate(data.covariate_names)
    ]
    if data.n_covariates == 0:
        worst = 0.0
    elif np.isnan(after).any():
        worst = np.inf
    else:
        worst = float(np.max(np.abs(after)))
    passed = bool(worst <= threshold)
    if passed:
        logger.info(f"✓ Balance achieved: max |SMD| = {worst:.4f}")
    else:
        n_bad = int(np.sum(~(np.abs(after) <= threshold)))
        logger.warning(f"{n_bad} covariate(s) exceed |SMD| {threshold} after stratification")
    return BalanceReport(
        rows=rows,
        max_abs_adjusted_smd=worst,
        passed=passed,
        threshold=threshold,
        degenerate_strata=weights.degenerate_strata,
        warnings=warnings,
    )
