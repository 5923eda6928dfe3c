"""Shared cohort fixtures."""

from pathlib import Path
from typing import Callable

import numpy as np
import pytest
import yaml
from scipy.special import expit

from lsps.dataset import write_dense_csv
from lsps.models import CohortDataset, ContinuousOutcome


def make_cohort(x: np.ndarray, t: np.ndarray, y: np.ndarray) -> CohortDataset:
    return CohortDataset(
        covariates=np.asarray(x, dtype=np.float64),
        covariate_names=[f"x{j}" for j in range(x.shape[1])],
        treatment=t,
        outcome=ContinuousOutcome(y),
    )


@pytest.fixture
def randomized_cohort() -> CohortDataset:
    """Treatment independent of three normal covariates; true effect 2."""
    rng = np.random.default_rng(20)
    n = 4000
    x = rng.normal(size=(n, 3))
    t = (rng.random(n) < 0.5).astype(np.int8)
    y = 2.0 * t + x[:, 0] + rng.normal(size=n)
    return make_cohort(x, t, y)


@pytest.fixture
def balanced_cohort() -> CohortDataset:
    """Both covariates have identical distributions in the two arms."""
    t = np.tile([1, 1, 0, 0], 20)
    x0 = np.tile([0, 1, 0, 1], 20)
    x1 = np.tile([0, 1, 1, 0, 1, 0, 0, 1], 10)
    y = np.random.default_rng(5).normal(size=80) + t
    return make_cohort(np.column_stack([x0, x1]), t, y)


@pytest.fixture
def confounded_cohort() -> CohortDataset:
    """Binary confounder x0 shifts both treatment and outcome; true effect 1."""
    rng = np.random.default_rng(7)
    n = 2000
    x = (rng.random((n, 3)) < 0.5).astype(np.float64)
    t = (rng.random(n) < expit(3.0 * (x[:, 0] - 0.5))).astype(np.int8)
    y = 1.0 * t + 3.0 * x[:, 0] + rng.normal(size=n)
    return make_cohort(x, t, y)


@pytest.fixture
def separated_cohort() -> CohortDataset:
    """Binary z almost determines treatment: 10 flips in each arm of 500."""
    rng = np.random.default_rng(3)
    z = np.repeat([1.0, 0.0], 500)
    t = z.astype(np.int8)
    t[:10] = 0
    t[500:510] = 1
    y = t + rng.normal(size=1000)
    return make_cohort(z.reshape(-1, 1), t, y)


@pytest.fixture
def linear_confounded_cohort() -> CohortDataset:
    """t ~ Bernoulli(σ(0.8·x0)) with a continuous confounder."""
    rng = np.random.default_rng(11)
    n = 1000
    x = rng.normal(size=(n, 2))
    t = (rng.random(n) < expit(0.8 * x[:, 0])).astype(np.int8)
    y = t + x[:, 0] + rng.normal(size=n)
    return make_cohort(x, t, y)


@pytest.fixture
def study_files(tmp_path: Path) -> Callable[[CohortDataset], Path]:
    """Write a cohort plus a study config document; return the config path."""

    def write(data: CohortDataset, **pipeline) -> Path:
        write_dense_csv(data, str(tmp_path / "cohort.csv"))
        doc = {
            "inputs": {
                "format": "dense",
                "path": "cohort.csv",
                "treatment": "treatment",
                "outcome": "y",
            },
            "pipeline": pipeline,
        }
        path = tmp_path / "study.yaml"
        path.write_text(yaml.safe_dump(doc))
        return path

    return write
