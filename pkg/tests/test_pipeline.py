"""End-to-end tests of the five-step pipeline."""

import json

import numpy as np
import pytest

from conftest import make_cohort
from lsps.config import PipelineConfig
from lsps.exceptions import DataValidationError
from lsps.models import AteEstimate, HazardRatioEstimate
from lsps.pipeline import fit_propensity, run_analysis, select_covariates
from lsps.simbench import generate_proxy_study


class TestSelectCovariates:
    def test_include_then_exclude(self, confounded_cohort):
        config = PipelineConfig(include=["x2", "x0"], exclude=["x2"])
        assert select_covariates(confounded_cohort, config).covariate_names == ["x0"]

    def test_unknown_exclusion_is_ignored(self, confounded_cohort):
        config = PipelineConfig(exclude=["nope"])
        assert select_covariates(confounded_cohort, config).covariate_names == ["x0", "x1", "x2"]

    def test_unknown_inclusion_fails(self, confounded_cohort):
        with pytest.raises(DataValidationError):
            select_covariates(confounded_cohort, PipelineConfig(include=["nope"]))


class TestFitPropensity:
    def test_selects_the_confounder(self, confounded_cohort):
        model = fit_propensity(confounded_cohort, PipelineConfig(cv_folds=5))
        assert model.fit.coefficients[0] > 1.0
        assert model.cv.selected_lambda <= model.cv.lambda_grid[0]
        assert model.scores.shape == (confounded_cohort.n_subjects,)

    def test_no_association_gives_the_null_model(self):
        x = np.tile([[0.0], [1.0]], (20, 1))
        t = np.tile([1, 1, 0, 0], 10)
        model = fit_propensity(make_cohort(x, t, np.arange(40.0)), PipelineConfig(cv_folds=4))
        assert model.fit.n_nonzero == 0
        np.testing.assert_allclose(model.scores, 0.5)

    def test_no_covariates(self, confounded_cohort):
        empty = confounded_cohort.keep_covariates([])
        with pytest.raises(DataValidationError):
            fit_propensity(empty)


class TestRunAnalysis:
    def test_randomized_cohort_recovers_the_effect(self, randomized_cohort):
        report = run_analysis(randomized_cohort, PipelineConfig(cv_folds=5))
        assert isinstance(report.effect, AteEstimate)
        assert report.effect.nu_hat == pytest.approx(2.0, abs=0.15)
        assert report.equipoise.passed
        assert report.effect.ci95[0] < report.effect.nu_hat < report.effect.ci95[1]

    def test_adjustment_removes_confounding_bias(self, confounded_cohort):
        report = run_analysis(confounded_cohort, PipelineConfig(cv_folds=5))
        assert abs(report.unadjusted.nu_hat - 1.0) > 1.0
        assert report.effect.nu_hat == pytest.approx(1.0, abs=0.3)
        assert report.balance.rows[0].smd_before > 1.0
        assert abs(report.balance.rows[0].smd_after) < 0.2 * report.balance.rows[0].smd_before

    def test_diagnose_only(self, confounded_cohort):
        report = run_analysis(confounded_cohort, PipelineConfig(cv_folds=5), estimate=False)
        assert report.effect is None
        assert report.unadjusted is None
        assert "effect" not in report.to_dict()

    def test_excluded_covariates_are_reported(self, confounded_cohort):
        report = run_analysis(confounded_cohort, PipelineConfig(cv_folds=5, exclude=["x2"]))
        assert report.excluded == ["x2"]
        assert [r.name for r in report.balance.rows] == ["x0", "x1"]

    def test_too_many_strata(self, confounded_cohort):
        treated = int(confounded_cohort.n_treated)
        with pytest.raises(DataValidationError):
            run_analysis(confounded_cohort, PipelineConfig(cv_folds=5, n_strata=treated + 1))

    def test_failed_equipoise_sets_caution(self, separated_cohort):
        report = run_analysis(separated_cohort, PipelineConfig(cv_folds=5, n_strata=2))
        assert not report.equipoise.passed
        assert report.caution
        assert report.to_dict()["effect"]["note"] == "interpret with caution"

    def test_report_serializes_without_nan(self, confounded_cohort):
        report = run_analysis(confounded_cohort, PipelineConfig(cv_folds=5))
        json.dumps(report.to_dict(), allow_nan=False)

    def test_survival_outcome_gives_a_hazard_ratio(self):
        data, _, _ = generate_proxy_study(n=800, m=30, n_strong=3, n_moderate=10, seed=1)
        report = run_analysis(data, PipelineConfig(cv_folds=5, n_strata=5))
        assert isinstance(report.effect, HazardRatioEstimate)
        assert np.isfinite(report.effect.hr)
        assert report.effect.n_events > 0
