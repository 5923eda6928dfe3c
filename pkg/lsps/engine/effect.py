"""Pooled stratified treatment effects: ATE for continuous outcomes, Cox HR for survival."""

import logging
import math
from dataclasses import dataclass
from typing import List, Optional, Tuple, Union

import numpy as np

from ..exceptions import (
    AllStrataDegenerateError,
    ConvergenceError,
    DegenerateStratumError,
    NonIdentifiableError,
    NumericalError,
    ZeroEventsError,
)
from ..models import (
    AteEstimate,
    ContinuousOutcome,
    HazardRatioEstimate,
    Outcome,
    Stratification,
    StratumEffect,
    TimeToEventOutcome,
)
from .solver import fit_ols_stratum

logger = logging.getLogger(__name__)

Z95 = 1.96
ZETA_GUARD = 20.0
_NEWTON_TOL = 1e-9
_MAX_NEWTON = 100
_MAX_HALVINGS = 30


def single_stratum(n: int) -> Stratification:
    """Everyone in one stratum."""
    return Stratification(
        k=1, boundaries=np.empty(0), stratum_of=np.zeros(n, dtype=np.int64), requested_k=1
    )


def estimate_ate(y: np.ndarray, treatment: np.ndarray, strat: Stratification) -> AteEstimate:
    """
    Pool per-stratum OLS effects with weights proportional to stratum size.

    Strata without both groups are dropped and the remaining weights
    renormalized.

    Raises:
        AllStrataDegenerateError: no stratum holds both groups
    """
    y = np.asarray(y, dtype=np.float64)
    treatment = np.asarray(treatment)
    if not len(y) == len(treatment) == len(strat.stratum_of):
        raise ValueError("Outcome, treatment and stratification lengths differ")

    fits = []
    warnings: List[str] = []
    for s in range(strat.k):
        members = strat.stratum_of == s
        try:
            fits.append((s, int(members.sum()), fit_ols_stratum(y[members], treatment[members])))
        except DegenerateStratumError as e:
            message = f"Stratum {s} dropped from the pooled effect: {e}"
            logger.warning(message)
            warnings.append(message)
    if not fits:
        raise AllStrataDegenerateError("No stratum contains both treated and control subjects")

    sizes = np.array([n for _, n, _ in fits], dtype=np.float64)
    omega = sizes / sizes.sum()
    nu = np.array([f.nu_s for _, _, f in fits])
    se_s = np.array([f.se_nu_s for _, _, f in fits])
    nu_hat = float(np.dot(omega, nu))
    se = float(math.sqrt(np.dot(omega**2, se_s**2)))
    per_stratum = [
        StratumEffect(
            stratum=s,
            estimate=f.nu_s,
            se=f.se_nu_s if math.isfinite(f.se_nu_s) else None,
            weight=float(weight),
            n=n,
        )
        for (s, n, f), weight in zip(fits, omega)
    ]
    return AteEstimate(
        nu_hat=nu_hat,
        se=se,
        ci95=(nu_hat - Z95 * se, nu_hat + Z95 * se),
        per_stratum=per_stratum,
        warnings=warnings,
    )


@dataclass
class _RiskTable:
    """Per distinct event time: events, treated events, and risk-set sizes by group."""

    events: np.ndarray
    treated_events: np.ndarray
    at_risk_treated: np.ndarray
    at_risk_control: np.ndarray

    @classmethod
    def build(cls, time: np.ndarray, event: np.ndarray, treatment: np.ndarray) -> "_RiskTable":
        event_times = np.unique(time[event == 1])
        times1 = np.sort(time[treatment == 1])
        times0 = np.sort(time[treatment == 0])
        at_risk1 = len(times1) - np.searchsorted(times1, event_times, side="left")
        at_risk0 = len(times0) - np.searchsorted(times0, event_times, side="left")
        slot = np.searchsorted(event_times, time[event == 1])
        d = np.bincount(slot, minlength=len(event_times))
        d1 = np.bincount(
            slot, weights=treatment[event == 1].astype(np.float64), minlength=len(event_times)
        )
        return cls(
            events=d.astype(np.float64),
            treated_events=d1,
            at_risk_treated=at_risk1.astype(np.float64),
            at_risk_control=at_risk0.astype(np.float64),
        )

    @classmethod
    def concat(cls, tables: List["_RiskTable"]) -> "_RiskTable":
        fields = ("events", "treated_events", "at_risk_treated", "at_risk_control")
        return cls(*(np.concatenate([getattr(t, f) for t in tables]) for f in fields))

    def treated_share(self, zeta: float) -> np.ndarray:
        """Breslow risk-set share of the treated: e^ζ·r₁ / (r₀ + e^ζ·r₁)."""
        scaled = math.exp(zeta) * self.at_risk_treated
        return scaled / (self.at_risk_control + scaled)

    def log_likelihood(self, zeta: float) -> float:
        scaled = math.exp(zeta) * self.at_risk_treated
        penalty = np.dot(self.events, np.log(self.at_risk_control + scaled))
        return float(zeta * self.treated_events.sum() - penalty)

    def score(self, zeta: float) -> float:
        return float(self.treated_events.sum() - np.dot(self.events, self.treated_share(zeta)))

    def information(self, zeta: float) -> float:
        q = self.treated_share(zeta)
        return float(np.dot(self.events, q * (1.0 - q)))


def _newton(table: _RiskTable) -> Tuple[float, float, int]:
    """Safeguarded Newton ascent on the log partial likelihood; returns (ζ, info, iterations)."""
    zeta = 0.0
    loglik = table.log_likelihood(zeta)
    for iteration in range(1, _MAX_NEWTON + 1):
        info = table.information(zeta)
        if not info > 0.0:
            raise NonIdentifiableError(
                "Partial likelihood has no curvature: no event time with both groups at risk"
            )
        step = table.score(zeta) / info
        for _ in range(_MAX_HALVINGS):
            candidate = zeta + step
            if abs(candidate) > ZETA_GUARD:
                raise NonIdentifiableError(
                    f"Log hazard ratio diverged past ±{ZETA_GUARD}: monotone likelihood"
                )
            new_loglik = table.log_likelihood(candidate)
            if new_loglik >= loglik:
                break
            step *= 0.5
        else:
            raise ConvergenceError(
                f"No step from ζ={zeta:.6g} increased the partial likelihood "
                f"after {_MAX_HALVINGS} halvings"
            )
        zeta, loglik = candidate, new_loglik
        if abs(step) < _NEWTON_TOL:
            return zeta, table.information(zeta), iteration
    raise ConvergenceError(f"Cox Newton iteration did not converge in {_MAX_NEWTON} steps")


def _risk_tables(
    outcome: TimeToEventOutcome, treatment: np.ndarray, strat: Stratification
) -> List[_RiskTable]:
    tables = []
    for s in range(strat.k):
        members = strat.stratum_of == s
        if members.any():
            tables.append(
                _RiskTable.build(outcome.time[members], outcome.event[members], treatment[members])
            )
    return tables


def cox_partial_likelihood(
    time: np.ndarray,
    event: np.ndarray,
    treatment: np.ndarray,
    strat: Stratification,
    zeta: float,
) -> Tuple[float, float, float]:
    """Log partial likelihood, score and observed information at ζ."""
    outcome = TimeToEventOutcome(np.asarray(time, dtype=np.float64), np.asarray(event))
    table = _RiskTable.concat(_risk_tables(outcome, np.asarray(treatment).astype(np.int64), strat))
    return table.log_likelihood(zeta), table.score(zeta), table.information(zeta)


def fit_cox_stratified(
    time: np.ndarray,
    event: np.ndarray,
    treatment: np.ndarray,
    strat: Stratification,
) -> HazardRatioEstimate:
    """
    Stratified Cox model with one treatment coefficient shared by all strata.

    Each stratum keeps its own risk sets and baseline hazard; ties use the
    Breslow approximation. The standard error comes from the observed
    information at the maximum. Per-stratum coefficients are reported where a
    stratum alone identifies one.

    Raises:
        ZeroEventsError: no events among included subjects
        NonIdentifiableError: no treatment contrast, or |ζ| diverged past 20
    """
    outcome = TimeToEventOutcome(np.asarray(time, dtype=np.float64), np.asarray(event))
    treatment = np.asarray(treatment).astype(np.int64)
    if not len(treatment) == len(outcome) == len(strat.stratum_of):
        raise ValueError("Time, event, treatment and stratification lengths differ")
    included = strat.included
    n_events = int(outcome.event[included].sum())
    if n_events == 0:
        raise ZeroEventsError("No events: the hazard ratio is undefined")

    tables = _risk_tables(outcome, treatment, strat)
    zeta, info, iterations = _newton(_RiskTable.concat(tables))
    se = 1.0 / math.sqrt(info)

    per_stratum: List[StratumEffect] = []
    sizes = np.bincount(strat.stratum_of[included], minlength=strat.k)
    table_iter = iter(tables)
    for s in range(strat.k):
        if sizes[s] == 0:
            continue
        table = next(table_iter)
        estimate: Optional[float] = None
        stratum_se: Optional[float] = None
        try:
            z_s, info_s, _ = _newton(table)
            estimate, stratum_se = z_s, 1.0 / math.sqrt(info_s)
        except NumericalError as e:
            logger.debug(f"Stratum {s} log hazard ratio not estimable: {e}")
        per_stratum.append(
            StratumEffect(
                stratum=s,
                estimate=estimate,
                se=stratum_se,
                weight=float(sizes[s] / sizes.sum()),
                n=int(sizes[s]),
            )
        )
    logger.debug(f"Cox fit converged in {iterations} Newton step(s): ζ={zeta:.6f}, se={se:.6f}")
    return HazardRatioEstimate(
        zeta_hat=zeta,
        se_zeta=se,
        ci95=(math.exp(zeta - Z95 * se), math.exp(zeta + Z95 * se)),
        n_events=n_events,
        iterations=iterations,
        per_stratum=per_stratum,
    )


def estimate_effect(
    outcome: Outcome, treatment: np.ndarray, strat: Stratification
) -> Union[AteEstimate, HazardRatioEstimate]:
    """Dispatch on outcome kind."""
    if isinstance(outcome, ContinuousOutcome):
        return estimate_ate(outcome.y, treatment, strat)
    return fit_cox_stratified(outcome.time, outcome.event, treatment, strat)


def estimate_unadjusted(
    outcome: Outcome, treatment: np.ndarray
) -> Union[AteEstimate, HazardRatioEstimate]:
    """The same estimator with every subject in a single stratum."""
    return estimate_effect(outcome, treatment, single_stratum(len(treatment)))
