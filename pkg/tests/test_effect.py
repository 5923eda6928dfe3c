"""Tests for pooled ATE and stratified Cox estimates."""

import math

import numpy as np
import pytest

from lsps.engine.effect import (
    Z95,
    _newton,
    cox_partial_likelihood,
    estimate_ate,
    estimate_effect,
    estimate_unadjusted,
    fit_cox_stratified,
    single_stratum,
)
from lsps.exceptions import (
    AllStrataDegenerateError,
    ConvergenceError,
    NonIdentifiableError,
    ZeroEventsError,
)
from lsps.models import ContinuousOutcome, HazardRatioEstimate, Stratification, TimeToEventOutcome

# treated, time, event
COX_FIXTURE = np.array([[1, 1.0, 1], [0, 2.0, 1], [1, 3.0, 1], [0, 4.0, 1]])
COX_ZETA = math.log((1 + math.sqrt(17)) / 2)


def _strat(stratum_of, k):
    return Stratification(
        k=k, boundaries=np.zeros(k - 1), stratum_of=np.asarray(stratum_of), requested_k=k
    )


def _cox(rows, strat=None):
    rows = np.asarray(rows, dtype=float)
    t, time, event = rows[:, 0].astype(int), rows[:, 1], rows[:, 2].astype(int)
    return fit_cox_stratified(time, event, t, strat or single_stratum(len(t)))


class TestAte:
    def test_size_weighted_pooling(self):
        y = np.array([3.0, 5.0, 1.0, 1.0, 10.0, 10.0, 9.0, 7.0])
        t = np.array([1, 1, 0, 0, 1, 1, 0, 0])
        ate = estimate_ate(y, t, _strat([0, 0, 0, 0, 1, 1, 1, 1], 2))
        assert ate.nu_hat == pytest.approx(2.5)
        assert ate.se == pytest.approx(math.sqrt(0.5))
        assert ate.ci95[0] == pytest.approx(2.5 - Z95 * math.sqrt(0.5))
        assert [s.weight for s in ate.per_stratum] == [0.5, 0.5]

    def test_degenerate_stratum_dropped_and_weights_renormalized(self):
        y = np.array([3.0, 5.0, 1.0, 1.0, 10.0, 10.0])
        t = np.array([1, 1, 0, 0, 1, 1])
        ate = estimate_ate(y, t, _strat([0, 0, 0, 0, 1, 1], 2))
        assert ate.nu_hat == pytest.approx(3.0)
        assert [s.stratum for s in ate.per_stratum] == [0]
        assert ate.per_stratum[0].weight == pytest.approx(1.0)
        assert len(ate.warnings) == 1

    def test_every_stratum_degenerate(self):
        with pytest.raises(AllStrataDegenerateError):
            estimate_ate(np.ones(4), np.array([1, 1, 0, 0]), _strat([0, 0, 1, 1], 2))

    def test_unadjusted_is_the_mean_difference(self):
        y = np.array([4.0, 6.0, 1.0, 2.0, 3.0])
        t = np.array([1, 1, 0, 0, 0])
        effect = estimate_unadjusted(ContinuousOutcome(y), t)
        assert effect.nu_hat == pytest.approx(3.0)

    def test_to_dict_hides_infinite_se(self):
        ate = estimate_ate(np.array([2.0, 1.0]), np.array([1, 0]), single_stratum(2))
        data = ate.to_dict()
        assert data["se"] is None
        assert data["per_stratum"][0]["se"] is None


class TestCox:
    def test_closed_form_estimate(self):
        fit = _cox(COX_FIXTURE)
        assert fit.zeta_hat == pytest.approx(COX_ZETA, abs=1e-8)
        assert fit.n_events == 4
        e = math.exp(COX_ZETA)
        shares = [e / (1 + e), e / (2 + e), e / (1 + e)]
        info = sum(q * (1 - q) for q in shares)
        assert fit.se_zeta == pytest.approx(1 / math.sqrt(info), rel=1e-6)
        assert fit.hr == pytest.approx(math.exp(COX_ZETA))

    def test_score_vanishes_at_the_estimate(self):
        rows = COX_FIXTURE
        _, score, info = cox_partial_likelihood(
            rows[:, 1], rows[:, 2].astype(int), rows[:, 0].astype(int), single_stratum(4), COX_ZETA
        )
        assert score == pytest.approx(0.0, abs=1e-10)
        assert info > 0

    def test_shared_coefficient_across_identical_strata(self):
        rows = np.vstack([COX_FIXTURE, COX_FIXTURE])
        fit = _cox(rows, _strat([0] * 4 + [1] * 4, 2))
        assert fit.zeta_hat == pytest.approx(COX_ZETA, abs=1e-8)
        assert fit.se_zeta == pytest.approx(_cox(COX_FIXTURE).se_zeta / math.sqrt(2), rel=1e-6)
        for stratum in fit.per_stratum:
            assert stratum.estimate == pytest.approx(COX_ZETA, abs=1e-8)
            assert stratum.weight == pytest.approx(0.5)

    def test_strata_keep_separate_risk_sets(self):
        # treated subjects of stratum 1 never share a risk set with controls of stratum 0
        rows = np.array(
            [[0, 1.0, 1], [1, 2.0, 1], [0, 3.0, 1], [1, 4.0, 1], [1, 5.0, 1], [0, 6.0, 1]]
        )
        strat = _strat([0, 0, 0, 1, 1, 1], 2)
        stratified = _cox(rows, strat)
        _, score, _ = cox_partial_likelihood(
            rows[:, 1], rows[:, 2].astype(int), rows[:, 0].astype(int), strat, stratified.zeta_hat
        )
        pooled_score = cox_partial_likelihood(
            rows[:, 1],
            rows[:, 2].astype(int),
            rows[:, 0].astype(int),
            single_stratum(6),
            stratified.zeta_hat,
        )[1]
        assert score == pytest.approx(0.0, abs=1e-8)
        assert abs(pooled_score) > 1e-3

    def test_monotone_likelihood(self):
        rows = [[1, 1.0, 1], [1, 2.0, 1], [0, 3.0, 1], [0, 4.0, 1]]
        with pytest.raises(NonIdentifiableError):
            _cox(rows)

    def test_no_treatment_contrast(self):
        rows = [[1, 1.0, 1], [1, 2.0, 0], [1, 3.0, 1]]
        with pytest.raises(NonIdentifiableError):
            _cox(rows)

    def test_zero_events(self):
        rows = [[1, 1.0, 0], [0, 2.0, 0]]
        with pytest.raises(ZeroEventsError):
            _cox(rows)

    def test_trimmed_subjects_are_ignored(self):
        rows = np.vstack([COX_FIXTURE, [[1, 0.5, 1]]])
        fit = _cox(rows, _strat([0, 0, 0, 0, -1], 1))
        assert fit.zeta_hat == pytest.approx(COX_ZETA, abs=1e-8)
        assert fit.n_events == 4

    def test_dispatch_on_outcome_kind(self):
        outcome = TimeToEventOutcome(COX_FIXTURE[:, 1], COX_FIXTURE[:, 2].astype(int))
        effect = estimate_effect(outcome, COX_FIXTURE[:, 0].astype(int), single_stratum(4))
        assert isinstance(effect, HazardRatioEstimate)
        assert effect.to_dict()["type"] == "hazard_ratio"


@pytest.fixture
def survival_rows():
    rng = np.random.default_rng(12)
    n = 300
    t = (rng.random(n) < 0.45).astype(int)
    event_time = rng.exponential(1.0 / np.exp(0.5 * t))
    censor_time = rng.exponential(2.0, size=n)
    # one decimal place leaves plenty of tied event times
    time = np.round(np.minimum(event_time, censor_time), 1) + 0.1
    event = (event_time <= censor_time).astype(int)
    return np.column_stack([t, time, event])


class TestCoxProperties:
    def test_monotone_time_transform_leaves_the_estimate_unchanged(self, survival_rows):
        cubed = survival_rows.copy()
        cubed[:, 1] = cubed[:, 1] ** 3
        base, moved = _cox(survival_rows), _cox(cubed)
        assert moved.zeta_hat == pytest.approx(base.zeta_hat, rel=1e-10, abs=1e-12)
        assert moved.se_zeta == pytest.approx(base.se_zeta, rel=1e-10)

    def test_swapping_treatment_labels_negates_the_estimate(self, survival_rows):
        swapped = survival_rows.copy()
        swapped[:, 0] = 1 - swapped[:, 0]
        base, flipped = _cox(survival_rows), _cox(swapped)
        assert flipped.zeta_hat == pytest.approx(-base.zeta_hat, abs=1e-8)
        assert flipped.se_zeta == pytest.approx(base.se_zeta, rel=1e-6)

    @pytest.mark.parametrize("zeta", [-1.0, 0.0, 0.4, 2.0])
    def test_score_and_information_match_central_differences(self, survival_rows, zeta):
        rows, h = survival_rows, 1e-5
        strat = _strat((rows[:, 1] > 0.5).astype(int), 2)
        args = (rows[:, 1], rows[:, 2].astype(int), rows[:, 0].astype(int), strat)
        _, score, info = cox_partial_likelihood(*args, zeta)
        up = cox_partial_likelihood(*args, zeta + h)
        down = cox_partial_likelihood(*args, zeta - h)
        assert score == pytest.approx((up[0] - down[0]) / (2 * h), rel=1e-6, abs=1e-6)
        assert info == pytest.approx(-(up[1] - down[1]) / (2 * h), rel=1e-6, abs=1e-6)

    def test_subject_censored_before_the_first_event_changes_nothing(self):
        early = np.vstack([COX_FIXTURE, [[1, 0.5, 0], [0, 0.2, 0]]])
        fit = _cox(early)
        assert fit.zeta_hat == pytest.approx(COX_ZETA, abs=1e-8)
        assert fit.n_events == 4

    def test_newton_without_ascent_raises(self):
        class InconsistentTable:
            """Score points uphill but the likelihood falls in that direction."""

            def log_likelihood(self, zeta):
                return -zeta * zeta

            def score(self, zeta):
                return 1.0

            def information(self, zeta):
                return 1.0

        with pytest.raises(ConvergenceError, match="halvings"):
            _newton(InconsistentTable())


class TestAteProperties:
    def test_relabeling_strata_leaves_the_estimate_unchanged(self):
        rng = np.random.default_rng(21)
        n = 120
        stratum_of = rng.integers(0, 4, size=n)
        t = np.tile([1, 0], n // 2)
        y = 1.5 * t + stratum_of + rng.normal(size=n)
        base = estimate_ate(y, t, _strat(stratum_of, 4))
        relabel = np.array([2, 0, 3, 1])
        moved = estimate_ate(y, t, _strat(relabel[stratum_of], 4))
        assert moved.nu_hat == pytest.approx(base.nu_hat, rel=1e-12)
        assert moved.se == pytest.approx(base.se, rel=1e-12)
