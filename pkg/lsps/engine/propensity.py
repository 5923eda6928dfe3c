"""Instrument screen, preference scores, equipoise and propensity stratification."""

import logging
from typing import List

import numpy as np
from scipy.special import expit, logit

from ..models import (
    CohortDataset,
    EquipoiseReport,
    InstrumentCandidate,
    InstrumentReport,
    PreferenceScores,
    Stratification,
)
from ..utils import linalg

logger = logging.getLogger(__name__)

EQUIPOISE_BAND = (0.3, 0.7)
EQUIPOISE_MIN_FRACTION = 0.5


def column_correlations(x: linalg.Design, v: np.ndarray) -> np.ndarray:
    """Pearson correlation of every column with v; NaN where a column is constant."""
    n = x.shape[0]
    v = np.asarray(v, dtype=np.float64)
    v_sd = float(v.std())
    means = linalg.column_means(x)
    sds = linalg.column_stds(x)
    cov = linalg.rmatvec(x, v) / n - means * float(v.mean())
    with np.errstate(divide="ignore", invalid="ignore"):
        corr = cov / (sds * v_sd)
    corr[sds == 0.0] = np.nan
    return np.clip(corr, -1.0, 1.0)


def screen_instruments(
    data: CohortDataset, t_threshold: float = 0.5, y_threshold: float = 0.1
) -> InstrumentReport:
    """
    Flag covariates that look like instruments: strongly tied to treatment,
    nearly unrelated to the outcome.

    Time-to-event outcomes are screened against the event flag. Flagged
    covariates are only reported; removal needs an explicit exclusion list.
    """
    for name, value in (("t_threshold", t_threshold), ("y_threshold", y_threshold)):
        if not 0.0 < value <= 1.0:
            raise ValueError(f"{name} must be in (0, 1], got {value}")
    x = data.covariates
    corr_t = column_correlations(x, data.treatment)
    outcome = data.outcome_vector()
    if float(np.std(outcome)) == 0.0:
        corr_y = np.zeros(data.n_covariates)
    else:
        corr_y = column_correlations(x, outcome)

    skipped: List[str] = []
    flagged: List[InstrumentCandidate] = []
    for j, name in enumerate(data.covariate_names):
        if np.isnan(corr_t[j]):
            skipped.append(name)
            continue
        if abs(corr_t[j]) >= t_threshold and abs(corr_y[j]) <= y_threshold:
            flagged.append(InstrumentCandidate(j, name, float(corr_t[j]), float(corr_y[j])))
    if skipped:
        logger.warning(f"Instrument screen skipped {len(skipped)} constant covariate(s)")
    for c in flagged:
        logger.warning(
            f"Possible instrument '{c.name}': corr(t)={c.corr_treatment:.3f}, "
            f"corr(y)={c.corr_outcome:.3f}"
        )
    return InstrumentReport(
        flagged=flagged, t_threshold=t_threshold, y_threshold=y_threshold, skipped=skipped
    )


def compute_preference(propensity: np.ndarray, treated_fraction: float) -> PreferenceScores:
    """logit f = logit p − logit(treated_fraction)."""
    if not 0.0 < treated_fraction < 1.0:
        raise ValueError(f"treated_fraction must be in (0, 1), got {treated_fraction}")
    p = np.asarray(propensity, dtype=np.float64)
    if np.any((p <= 0.0) | (p >= 1.0)):
        raise ValueError("Propensity scores must lie strictly inside (0, 1)")
    return PreferenceScores(
        values=expit(logit(p) - logit(treated_fraction)), treated_fraction=treated_fraction
    )


def check_equipoise(pref: PreferenceScores) -> EquipoiseReport:
    if len(pref.values) == 0:
        raise ValueError("No preference scores to check")
    lo, hi = EQUIPOISE_BAND
    fraction = float(np.mean((pref.values >= lo) & (pref.values <= hi)))
    return EquipoiseReport(
        fraction_in_band=fraction,
        band=EQUIPOISE_BAND,
        min_fraction=EQUIPOISE_MIN_FRACTION,
        passed=fraction >= EQUIPOISE_MIN_FRACTION,
    )


def _cut_index(treated_sorted: np.ndarray, c: int) -> int:
    """Move a cut that splits a block of tied scores to the nearer block edge."""
    if c <= 0 or c >= len(treated_sorted) or treated_sorted[c - 1] != treated_sorted[c]:
        return c
    value = treated_sorted[c]
    lo = int(np.searchsorted(treated_sorted, value, side="left"))
    hi = int(np.searchsorted(treated_sorted, value, side="right"))
    return lo if c - lo <= hi - c else hi


def stratify(
    propensity: np.ndarray, treatment: np.ndarray, k: int, trim: bool = False
) -> Stratification:
    """
    Split subjects into k strata holding equal numbers of treated subjects.

    Boundaries sit midway between consecutive treated scores at the j/k
    quantiles; a subject whose score equals a boundary goes to the lower
    stratum. Tied treated scores are never split, so the effective number of
    strata can be smaller than requested (reported as a warning). With `trim`,
    subjects outside the treated score range get stratum -1.
    """
    ps = np.asarray(propensity, dtype=np.float64)
    treatment = np.asarray(treatment)
    if len(ps) != len(treatment):
        raise ValueError(f"{len(ps)} scores for {len(treatment)} subjects")
    treated_sorted = np.sort(ps[treatment == 1])
    n1 = len(treated_sorted)
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if k > n1:
        raise ValueError(f"Cannot form {k} strata from {n1} treated subject(s)")

    cuts = []
    for j in range(1, k):
        c = _cut_index(treated_sorted, int(round(j * n1 / k)))
        if 0 < c < n1 and c not in cuts:
            cuts.append(c)
    boundaries = np.array(
        sorted(0.5 * (treated_sorted[c - 1] + treated_sorted[c]) for c in cuts), dtype=np.float64
    )

    warnings: List[str] = []
    effective_k = len(boundaries) + 1
    if effective_k < k:
        if treated_sorted[0] == treated_sorted[-1]:
            message = "All treated propensity scores are identical; using a single stratum"
        else:
            message = f"Tied propensity scores reduced {k} requested strata to {effective_k}"
        logger.warning(message)
        warnings.append(message)

    stratum_of = np.searchsorted(boundaries, ps, side="left").astype(np.int64)
    if trim:
        outside = (ps < treated_sorted[0]) | (ps > treated_sorted[-1])
        stratum_of[outside] = -1
        if outside.any():
            logger.info(f"Trimmed {int(outside.sum())} subject(s) outside the treated score range")

    strat = Stratification(
        k=effective_k,
        boundaries=boundaries,
        stratum_of=stratum_of,
        requested_k=k,
        warnings=warnings,
    )
    treated_in = (treatment == 1) & (stratum_of >= 0)
    treated_counts = np.bincount(stratum_of[treated_in], minlength=effective_k)
    logger.debug(f"Treated count per stratum: {treated_counts.tolist()}")
    return strat
