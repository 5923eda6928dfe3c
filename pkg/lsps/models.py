"""Data models for cohorts, fitted models, diagnostics and simulation results."""

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .exceptions import DataValidationError
from .utils import linalg
from .utils.linalg import Design


class OutcomeKind(str, Enum):
    """Kinds of outcome a cohort can carry."""

    CONTINUOUS = "continuous"
    TIME_TO_EVENT = "time_to_event"


class EstimatorMethod(str, Enum):
    """Estimators compared by the simulation benchmark."""

    UNADJUSTED = "unadjusted"
    LSPS = "lsps"
    ORACLE = "oracle"
    MANUAL = "manual"


def _finite_or_none(value: float) -> Optional[float]:
    return float(value) if math.isfinite(value) else None


@dataclass(frozen=True)
class ContinuousOutcome:
    """Continuous outcome y."""

    y: np.ndarray

    kind = OutcomeKind.CONTINUOUS

    def __post_init__(self):
        y = np.asarray(self.y, dtype=np.float64)
        if y.ndim != 1:
            raise DataValidationError("Outcome must be a vector")
        if not np.all(np.isfinite(y)):
            bad = int(np.flatnonzero(~np.isfinite(y))[0])
            raise DataValidationError("Outcome contains a non-finite value", row=bad)
        object.__setattr__(self, "y", y)

    def __len__(self) -> int:
        return len(self.y)

    def take(self, rows: np.ndarray) -> "ContinuousOutcome":
        return ContinuousOutcome(self.y[rows])


@dataclass(frozen=True)
class TimeToEventOutcome:
    """Survival outcome: follow-up time and event flag."""

    time: np.ndarray
    event: np.ndarray

    kind = OutcomeKind.TIME_TO_EVENT

    def __post_init__(self):
        time = np.asarray(self.time, dtype=np.float64)
        event = np.asarray(self.event)
        if time.ndim != 1 or event.shape != time.shape:
            raise DataValidationError("Time and event vectors must have equal length")
        bad_time = np.flatnonzero(~(np.isfinite(time) & (time > 0)))
        if bad_time.size:
            raise DataValidationError("Event times must be strictly positive", row=int(bad_time[0]))
        bad_event = np.flatnonzero((event != 0) & (event != 1))
        if bad_event.size:
            raise DataValidationError("Event flags must be 0 or 1", row=int(bad_event[0]))
        object.__setattr__(self, "time", time)
        object.__setattr__(self, "event", event.astype(np.int8))

    def __len__(self) -> int:
        return len(self.time)

    def take(self, rows: np.ndarray) -> "TimeToEventOutcome":
        return TimeToEventOutcome(self.time[rows], self.event[rows])


Outcome = Union[ContinuousOutcome, TimeToEventOutcome]


@dataclass(frozen=True)
class CohortDataset:
    """N subjects with M covariates, a binary treatment and one outcome.

    Immutable once built; the covariates are a column-major sparse matrix.
    Subject identifiers are kept only for error messages.
    """

    covariates: Design
    covariate_names: List[str]
    treatment: np.ndarray
    outcome: Outcome
    subject_ids: Optional[List[str]] = None

    def __post_init__(self):
        covariates = linalg.as_design(self.covariates)
        treatment = np.asarray(self.treatment)
        n = covariates.shape[0]
        if treatment.ndim != 1 or len(treatment) != n:
            raise DataValidationError(
                f"Treatment has {len(treatment)} entries but covariates have {n} rows"
            )
        if len(self.outcome) != n:
            raise DataValidationError(f"Outcome has {len(self.outcome)} entries, expected {n}")
        if len(self.covariate_names) != covariates.shape[1]:
            raise DataValidationError(
                f"{len(self.covariate_names)} covariate names for {covariates.shape[1]} columns"
            )
        seen = set()
        for name in self.covariate_names:
            if name in seen:
                raise DataValidationError("Duplicate covariate identifier", column=name)
            seen.add(name)
        bad = np.flatnonzero((treatment != 0) & (treatment != 1))
        if bad.size:
            raise DataValidationError("Treatment must be 0 or 1", row=self._label(int(bad[0])))
        object.__setattr__(self, "covariates", covariates)
        object.__setattr__(self, "covariate_names", list(self.covariate_names))
        object.__setattr__(self, "treatment", treatment.astype(np.int8))

    def _label(self, row: int) -> Any:
        if self.subject_ids is not None:
            return self.subject_ids[row]
        return row

    @property
    def n_subjects(self) -> int:
        return self.covariates.shape[0]

    @property
    def n_covariates(self) -> int:
        return self.covariates.shape[1]

    @property
    def n_treated(self) -> int:
        return int(self.treatment.sum())

    def require_both_groups(self) -> None:
        """Raise unless at least one treated and one control subject exist."""
        n_treated = self.n_treated
        if n_treated == 0 or n_treated == self.n_subjects:
            raise DataValidationError(
                f"Need treated and control subjects, got {n_treated} treated of {self.n_subjects}"
            )

    def outcome_vector(self) -> np.ndarray:
        """Outcome used for univariate screening: y, or the event flag."""
        if isinstance(self.outcome, ContinuousOutcome):
            return self.outcome.y
        return self.outcome.event.astype(np.float64)

    def keep_covariates(self, names: Sequence[str]) -> "CohortDataset":
        """Restrict to the named covariates, in the given order."""
        index = {name: j for j, name in enumerate(self.covariate_names)}
        missing = [name for name in names if name not in index]
        if missing:
            raise DataValidationError(f"Unknown covariate(s): {', '.join(missing)}")
        cols = [index[name] for name in names]
        return CohortDataset(
            covariates=linalg.take_columns(self.covariates, cols),
            covariate_names=list(names),
            treatment=self.treatment,
            outcome=self.outcome,
            subject_ids=self.subject_ids,
        )

    def drop_covariates(self, names: Sequence[str]) -> "CohortDataset":
        """Remove the named covariates; unknown names are ignored."""
        dropped = set(names)
        keep = [name for name in self.covariate_names if name not in dropped]
        return self.keep_covariates(keep)

    def with_covariate(self, name: str, values: np.ndarray) -> "CohortDataset":
        """Append one covariate column."""
        return CohortDataset(
            covariates=linalg.append_column(self.covariates, values),
            covariate_names=self.covariate_names + [name],
            treatment=self.treatment,
            outcome=self.outcome,
            subject_ids=self.subject_ids,
        )


@dataclass(frozen=True)
class FoldAssignment:
    """Cross-validation fold index per subject."""

    fold_of: np.ndarray
    k: int
    seed: int

    def test_mask(self, fold: int) -> np.ndarray:
        return self.fold_of == fold

    def sizes(self) -> np.ndarray:
        return np.bincount(self.fold_of, minlength=self.k)


@dataclass
class LogisticFit:
    """L1-regularized logistic regression solution."""

    coefficients: np.ndarray
    intercept: float
    lam: float
    converged: bool
    iterations: int
    final_objective: float

    @property
    def n_nonzero(self) -> int:
        return int(np.count_nonzero(self.coefficients))

    def to_dict(self, names: Optional[Sequence[str]] = None) -> Dict[str, Any]:
        """Serialize; only non-zero coefficients are listed."""
        if names is None:
            names = [f"x{j}" for j in range(len(self.coefficients))]
        nonzero = np.flatnonzero(self.coefficients)
        return {
            "coefficients": {names[j]: float(self.coefficients[j]) for j in nonzero},
            "intercept": self.intercept,
            "lambda": self.lam,
            "diagnostics": {
                "converged": self.converged,
                "iterations": self.iterations,
                "final_objective": self.final_objective,
                "n_nonzero": self.n_nonzero,
            },
        }


@dataclass
class CvResult:
    """Cross-validated held-out log-likelihood along a λ grid."""

    lambda_grid: np.ndarray
    mean_heldout_loglik: np.ndarray
    selected_lambda: float
    seed: int
    k: int

    def to_dict(self) -> Dict[str, Any]:
        return {
            "lambda_grid": [float(v) for v in self.lambda_grid],
            "mean_heldout_loglik": [_finite_or_none(v) for v in self.mean_heldout_loglik],
            "selected_lambda": self.selected_lambda,
            "folds": self.k,
            "seed": self.seed,
        }


@dataclass
class RidgeFit:
    """Ridge regression solution; the intercept is unpenalized."""

    coefficients: np.ndarray
    intercept: float
    alpha: float

    def predict(self, x: Design) -> np.ndarray:
        return linalg.matvec(x, self.coefficients) + self.intercept


@dataclass
class StratumOls:
    """Within-stratum regression of outcome on treatment."""

    alpha_s: float
    nu_s: float
    se_nu_s: float
    n_treated: int
    n_control: int


@dataclass
class PropensityModel:
    """Selected-λ propensity model refit on the full cohort."""

    fit: LogisticFit
    cv: CvResult
    scores: np.ndarray
    covariate_names: List[str]

    def to_dict(self) -> Dict[str, Any]:
        return {
            "model": self.fit.to_dict(self.covariate_names),
            "cross_validation": self.cv.to_dict(),
        }


@dataclass
class InstrumentCandidate:
    """Covariate flagged as a likely instrument."""

    index: int
    name: str
    corr_treatment: float
    corr_outcome: float


@dataclass
class InstrumentReport:
    """Univariate instrument screen; covariates are reported, never removed."""

    flagged: List[InstrumentCandidate]
    t_threshold: float
    y_threshold: float
    skipped: List[str] = field(default_factory=list)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "thresholds": {"treatment": self.t_threshold, "outcome": self.y_threshold},
            "flagged": [
                {
                    "covariate": c.index,
                    "name": c.name,
                    "corr_treatment": c.corr_treatment,
                    "corr_outcome": c.corr_outcome,
                }
                for c in self.flagged
            ],
            "skipped_constant": self.skipped,
        }


@dataclass
class PreferenceScores:
    values: np.ndarray
    treated_fraction: float


@dataclass
class EquipoiseReport:
    """Share of subjects whose preference score lies in the band."""

    fraction_in_band: float
    band: Tuple[float, float] = (0.3, 0.7)
    min_fraction: float = 0.5
    passed: bool = False

    def to_dict(self) -> Dict[str, Any]:
        return {
            "fraction_in_band": self.fraction_in_band,
            "band": list(self.band),
            "min_fraction": self.min_fraction,
            "pass": self.passed,
        }


@dataclass
class Stratification:
    """Propensity strata with equal treated counts.

    Subjects trimmed from the analysis carry stratum -1.
    """

    k: int
    boundaries: np.ndarray
    stratum_of: np.ndarray
    requested_k: int
    warnings: List[str] = field(default_factory=list)

    @property
    def included(self) -> np.ndarray:
        return self.stratum_of >= 0

    def to_dict(self) -> Dict[str, Any]:
        sizes = np.bincount(self.stratum_of[self.included], minlength=self.k)
        return {
            "k": self.k,
            "requested_k": self.requested_k,
            "boundaries": [float(b) for b in self.boundaries],
            "sizes": [int(s) for s in sizes],
            "n_trimmed": int((~self.included).sum()),
        }


@dataclass
class StratumWeights:
    """Per-subject weight 1/n_s^t; zero outside evaluable strata."""

    w: np.ndarray
    degenerate_strata: List[int] = field(default_factory=list)
    warnings: List[str] = field(default_factory=list)


@dataclass
class CovariateBalance:
    index: int
    name: str
    smd_before: float
    smd_after: float


@dataclass
class BalanceReport:
    """Weighted standardized mean differences before and after stratification."""

    rows: List[CovariateBalance]
    max_abs_adjusted_smd: float
    passed: bool
    threshold: float = 0.1
    degenerate_strata: List[int] = field(default_factory=list)
    warnings: List[str] = field(default_factory=list)

    def to_dict(self) -> Dict[str, Any]:
        worst = sorted(self.rows, key=lambda r: -abs(r.smd_after))[:10]
        return {
            "max_abs_adjusted_smd": _finite_or_none(self.max_abs_adjusted_smd),
            "threshold": self.threshold,
            "pass": self.passed,
            "n_covariates": len(self.rows),
            "n_imbalanced": sum(1 for r in self.rows if not abs(r.smd_after) <= self.threshold),
            "worst": [
                {
                    "covariate": r.index,
                    "name": r.name,
                    "smd_before": _finite_or_none(r.smd_before),
                    "smd_after": _finite_or_none(r.smd_after),
                }
                for r in worst
            ],
            "degenerate_strata": self.degenerate_strata,
        }


@dataclass
class StratumEffect:
    """Per-stratum contribution to a pooled estimate."""

    stratum: int
    estimate: Optional[float]
    se: Optional[float]
    weight: float
    n: int


@dataclass
class AteEstimate:
    """Stratum-size weighted average treatment effect."""

    nu_hat: float
    se: float
    ci95: Tuple[float, float]
    per_stratum: List[StratumEffect]
    warnings: List[str] = field(default_factory=list)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "type": "ate",
            "estimate": self.nu_hat,
            "se": _finite_or_none(self.se),
            "ci95": [_finite_or_none(v) for v in self.ci95],
            "per_stratum": [
                {"stratum": s.stratum, "nu": s.estimate, "se": s.se, "weight": s.weight, "n": s.n}
                for s in self.per_stratum
            ],
        }


@dataclass
class HazardRatioEstimate:
    """Shared-coefficient stratified Cox estimate."""

    zeta_hat: float
    se_zeta: float
    ci95: Tuple[float, float]
    n_events: int
    iterations: int
    per_stratum: List[StratumEffect] = field(default_factory=list)
    warnings: List[str] = field(default_factory=list)

    @property
    def hr(self) -> float:
        return math.exp(self.zeta_hat)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "type": "hazard_ratio",
            "estimate": self.hr,
            "log_hr": self.zeta_hat,
            "se": self.se_zeta,
            "ci95": list(self.ci95),
            "n_events": self.n_events,
            "per_stratum": [
                {
                    "stratum": s.stratum,
                    "log_hr": s.estimate,
                    "se": s.se,
                    "weight": s.weight,
                    "n": s.n,
                }
                for s in self.per_stratum
            ],
        }


EffectEstimate = Union[AteEstimate, HazardRatioEstimate]


@dataclass
class AnalysisReport:
    """Everything one pass of the LSPS pipeline produces."""

    instruments: InstrumentReport
    propensity: PropensityModel
    equipoise: EquipoiseReport
    stratification: Stratification
    balance: BalanceReport
    effect: Optional[EffectEstimate] = None
    unadjusted: Optional[EffectEstimate] = None
    excluded: List[str] = field(default_factory=list)
    warnings: List[str] = field(default_factory=list)

    @property
    def caution(self) -> bool:
        return not (self.equipoise.passed and self.balance.passed)

    def to_dict(self) -> Dict[str, Any]:
        result = {
            "instruments": self.instruments.to_dict(),
            "excluded_covariates": self.excluded,
            "propensity": self.propensity.to_dict(),
            "equipoise": self.equipoise.to_dict(),
            "stratification": self.stratification.to_dict(),
            "balance": self.balance.to_dict(),
            "warnings": self.warnings,
        }
        if self.effect is not None:
            result["effect"] = self.effect.to_dict()
            if self.caution:
                result["effect"]["note"] = "interpret with caution"
        if self.unadjusted is not None:
            result["unadjusted"] = self.unadjusted.to_dict()
        return result


@dataclass
class SimDataset:
    """One simulated world: latent factors, covariates, confounder, treatment, outcome."""

    v: np.ndarray
    x: np.ndarray
    u: np.ndarray
    t: np.ndarray
    y: np.ndarray
    p_true: np.ndarray
    confounders: np.ndarray

    @property
    def n(self) -> int:
        return self.x.shape[0]


@dataclass
class ReplicateRecord:
    """Outcome of one method on one replicate at one sweep point."""

    point: int
    replicate: int
    method: EstimatorMethod
    estimate: float
    ps_rmse: Optional[float]
    r2: Optional[float]
    warnings: List[str] = field(default_factory=list)


@dataclass
class MethodSummary:
    """Bias/variance/RMSE of one method across replicates."""

    method: EstimatorMethod
    estimates: np.ndarray
    mean_estimate: float
    bias: float
    variance: float
    rmse: float
    rmse_propensity: Optional[float]
    n_failed: int = 0


@dataclass
class SimResult:
    """Aggregated result for one sweep point."""

    param: str
    value: str
    methods: Dict[EstimatorMethod, MethodSummary]
    r2_pinpoint: Optional[float]
    records: List[ReplicateRecord] = field(default_factory=list)


@dataclass
class ProxyRemovalResult:
    """Hazard ratios with and without the covariates that proxy the confounder."""

    lsps_with: float
    lsps_without: float
    manual_with: float
    manual_without: float
    removed: List[str]

    @property
    def lsps_shift(self) -> float:
        return abs(self.lsps_with - self.lsps_without)

    @property
    def manual_shift(self) -> float:
        return abs(self.manual_with - self.manual_without)
