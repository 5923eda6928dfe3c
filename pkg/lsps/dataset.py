"""Cohort ingestion (dense CSV and sparse triplets) and fold assignment."""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np
import pandas as pd
import scipy.sparse as sp

from .exceptions import ConfigError, DataValidationError
from .models import (
    CohortDataset,
    ContinuousOutcome,
    FoldAssignment,
    Outcome,
    TimeToEventOutcome,
)
from .utils import linalg
from .utils.rng import stream

logger = logging.getLogger(__name__)


@dataclass
class ColumnSchema:
    """Roles of the columns in a dense cohort file.

    Exactly one of `outcome` or the (`time`, `event`) pair must be set. Every
    column without a role is a covariate.
    """

    treatment: str
    outcome: Optional[str] = None
    time: Optional[str] = None
    event: Optional[str] = None
    subject_id: Optional[str] = None

    def role_columns(self) -> List[str]:
        return [
            c
            for c in (self.subject_id, self.treatment, self.outcome, self.time, self.event)
            if c is not None
        ]


def _read_raw_csv(path: str, allow_empty: bool = False) -> pd.DataFrame:
    """Read every cell as text; header handled by the caller."""
    if not Path(path).is_file():
        raise ConfigError(f"Input file not found: {path}")
    try:
        raw = pd.read_csv(path, header=None, dtype=str, keep_default_na=False)
    except OSError as e:
        raise ConfigError(f"Cannot read input file {path}: {e}")
    except pd.errors.EmptyDataError:
        if allow_empty:
            return pd.DataFrame(dtype=str)
        raise DataValidationError(f"Empty file: {path}")
    except pd.errors.ParserError as e:
        raise DataValidationError(f"Malformed CSV {path}: {e}")
    if raw.shape[0] == 0:
        raise DataValidationError(f"Empty file: {path}")
    return raw


def _numeric_column(values: pd.Series, column: str, first_line: int) -> np.ndarray:
    """Parse a text column as float; report the first bad cell by file line."""
    parsed = pd.to_numeric(values.str.strip(), errors="coerce")
    bad = np.flatnonzero(parsed.isna().to_numpy())
    if bad.size:
        row = int(bad[0])
        raise DataValidationError(
            f"Non-numeric cell '{values.iloc[row]}'", row=first_line + row, column=column
        )
    return parsed.to_numpy(dtype=np.float64)


def _binary_column(values: np.ndarray, column: str, first_line: int, what: str) -> np.ndarray:
    bad = np.flatnonzero((values != 0) & (values != 1))
    if bad.size:
        row = int(bad[0])
        raise DataValidationError(
            f"Non-binary {what} value {values[row]:g}", row=first_line + row, column=column
        )
    return values.astype(np.int8)


def load_dense_csv(path: str, schema: ColumnSchema) -> CohortDataset:
    """
    Load a cohort from a dense CSV file with a header row.

    Args:
        path: CSV file path
        schema: Column roles

    Returns:
        Validated CohortDataset; covariates keep the file's column order.
        Row numbers in errors are 1-based file lines (the header is line 1).
    """
    logger.info(f"Loading dense cohort from {path}")
    raw = _read_raw_csv(path)
    header = [h.strip() for h in raw.iloc[0].tolist()]
    seen: Dict[str, int] = {}
    for name in header:
        if name in seen:
            raise DataValidationError("Duplicate column header", row=1, column=name)
        seen[name] = 1
    for name in schema.role_columns():
        if name not in seen:
            raise DataValidationError("Missing column", row=1, column=name)

    body = raw.iloc[1:].reset_index(drop=True)
    body.columns = header
    if body.shape[0] == 0:
        raise DataValidationError(f"No data rows in {path}", row=2)
    first_line = 2

    subject_ids = None
    if schema.subject_id is not None:
        subject_ids = body[schema.subject_id].str.strip().tolist()

    treatment = _binary_column(
        _numeric_column(body[schema.treatment], schema.treatment, first_line),
        schema.treatment,
        first_line,
        "treatment",
    )
    outcome = _outcome_from_columns(body, schema, first_line)

    covariate_names = [h for h in header if h not in set(schema.role_columns())]
    columns = [_numeric_column(body[name], name, first_line) for name in covariate_names]
    matrix = np.column_stack(columns) if columns else np.zeros((len(body), 0))
    dataset = CohortDataset(
        covariates=sp.csc_matrix(matrix),
        covariate_names=covariate_names,
        treatment=treatment,
        outcome=outcome,
        subject_ids=subject_ids,
    )
    logger.info(
        f"✓ Loaded {dataset.n_subjects} subject(s), {dataset.n_covariates} covariate(s), "
        f"{dataset.n_treated} treated"
    )
    return dataset


def _outcome_from_columns(body: pd.DataFrame, schema: ColumnSchema, first_line: int) -> Outcome:
    if schema.outcome is not None:
        return ContinuousOutcome(_numeric_column(body[schema.outcome], schema.outcome, first_line))
    if schema.time is None or schema.event is None:
        raise DataValidationError("Schema needs an outcome column or a (time, event) pair")
    time = _numeric_column(body[schema.time], schema.time, first_line)
    bad = np.flatnonzero(time <= 0)
    if bad.size:
        raise DataValidationError(
            f"Non-positive event time {time[bad[0]]:g}",
            row=first_line + int(bad[0]),
            column=schema.time,
        )
    event = _binary_column(
        _numeric_column(body[schema.event], schema.event, first_line),
        schema.event,
        first_line,
        "event",
    )
    return TimeToEventOutcome(time, event)


def write_dense_csv(
    dataset: CohortDataset, path: str, schema: Optional[ColumnSchema] = None
) -> None:
    """Write a cohort in the dense format `load_dense_csv` reads."""
    if schema is None:
        if isinstance(dataset.outcome, ContinuousOutcome):
            schema = ColumnSchema(treatment="treatment", outcome="y")
        else:
            schema = ColumnSchema(treatment="treatment", time="time", event="event")
    frame: Dict[str, np.ndarray] = {}
    if schema.subject_id is not None and dataset.subject_ids is not None:
        frame[schema.subject_id] = np.asarray(dataset.subject_ids)
    frame[schema.treatment] = dataset.treatment
    if isinstance(dataset.outcome, ContinuousOutcome):
        frame[schema.outcome or "y"] = dataset.outcome.y
    else:
        frame[schema.time or "time"] = dataset.outcome.time
        frame[schema.event or "event"] = dataset.outcome.event
    dense = linalg.to_dense(dataset.covariates)
    for j, name in enumerate(dataset.covariate_names):
        frame[name] = dense[:, j]
    pd.DataFrame(frame).to_csv(path, index=False)


def load_sparse(triplets: str, dictionary: str, subjects: str) -> CohortDataset:
    """
    Load a cohort from sparse triplet files.

    Args:
        triplets: CSV `subject_id,covariate_id,value`
        dictionary: CSV `covariate_id,name`
        subjects: CSV `subject_id,treatment` plus `y` or `time,event`

    Returns:
        Validated CohortDataset; unreferenced cells are 0 and subject order
        follows the subjects file.
    """
    logger.info(f"Loading sparse cohort from {triplets}")
    subj = _read_table(subjects, ["subject_id", "treatment"])
    dic = _read_table(dictionary, ["covariate_id", "name"])
    trip = _read_table(triplets, ["subject_id", "covariate_id", "value"], allow_empty=True)

    subject_ids = subj["subject_id"].str.strip().tolist()
    subject_index = _unique_index(subject_ids, "subject_id")
    covariate_ids = dic["covariate_id"].str.strip().tolist()
    covariate_index = _unique_index(covariate_ids, "covariate_id")
    names = dic["name"].str.strip().tolist()

    first_line = 2
    treatment = _binary_column(
        _numeric_column(subj["treatment"], "treatment", first_line),
        "treatment",
        first_line,
        "treatment",
    )
    if "y" in subj.columns:
        outcome = _outcome_from_columns(subj, ColumnSchema("treatment", outcome="y"), first_line)
    elif "time" in subj.columns and "event" in subj.columns:
        outcome = _outcome_from_columns(
            subj, ColumnSchema("treatment", time="time", event="event"), first_line
        )
    else:
        raise DataValidationError(f"Subjects file {subjects} needs 'y' or 'time,event' columns")

    trip_subjects = trip["subject_id"].str.strip()
    trip_covariates = trip["covariate_id"].str.strip()
    rows = trip_subjects.map(subject_index)
    cols = trip_covariates.map(covariate_index)
    unknown_subject = np.flatnonzero(rows.isna().to_numpy())
    if unknown_subject.size:
        i = int(unknown_subject[0])
        raise DataValidationError(
            f"Unknown subject_id '{trip_subjects.iloc[i]}'",
            row=first_line + i,
            column="subject_id",
        )
    unknown_covariate = np.flatnonzero(cols.isna().to_numpy())
    if unknown_covariate.size:
        i = int(unknown_covariate[0])
        raise DataValidationError(
            f"Unknown covariate_id '{trip_covariates.iloc[i]}'",
            row=first_line + i,
            column="covariate_id",
        )
    duplicated = np.flatnonzero(
        pd.DataFrame({"s": rows, "c": cols}).duplicated().to_numpy()
    )
    if duplicated.size:
        i = int(duplicated[0])
        raise DataValidationError(
            f"Duplicate (subject, covariate) pair "
            f"('{trip_subjects.iloc[i]}', '{trip_covariates.iloc[i]}')",
            row=first_line + i,
        )
    values = _numeric_column(trip["value"], "value", first_line)
    matrix = sp.csc_matrix(
        (values, (rows.to_numpy(dtype=np.int64), cols.to_numpy(dtype=np.int64))),
        shape=(len(subject_ids), len(names)),
    )
    matrix.eliminate_zeros()
    dataset = CohortDataset(
        covariates=matrix,
        covariate_names=names,
        treatment=treatment,
        outcome=outcome,
        subject_ids=subject_ids,
    )
    logger.info(
        f"✓ Loaded {dataset.n_subjects} subject(s), {dataset.n_covariates} covariate(s), "
        f"{matrix.nnz} non-zero cell(s)"
    )
    return dataset


def _read_table(path: str, required: List[str], allow_empty: bool = False) -> pd.DataFrame:
    raw = _read_raw_csv(path, allow_empty)
    if raw.shape[0] == 0:
        return pd.DataFrame({name: pd.Series(dtype=str) for name in required})
    header = [h.strip() for h in raw.iloc[0].tolist()]
    if len(set(header)) != len(header):
        dup = next(h for h in header if header.count(h) > 1)
        raise DataValidationError(f"Duplicate column header in {path}", row=1, column=dup)
    for name in required:
        if name not in header:
            raise DataValidationError(f"Missing column in {path}", row=1, column=name)
    body = raw.iloc[1:].reset_index(drop=True)
    body.columns = header
    return body


def _unique_index(ids: List[str], column: str) -> Dict[str, int]:
    index: Dict[str, int] = {}
    for i, key in enumerate(ids):
        if key in index:
            raise DataValidationError(f"Duplicate {column} '{key}'", row=2 + i, column=column)
        index[key] = i
    return index


def assign_folds(n: int, k: int, seed: int) -> FoldAssignment:
    """
    Assign n subjects to k folds whose sizes differ by at most one.

    The assignment is a pure function of (n, k, seed).
    """
    if k < 2 or k > n:
        raise ValueError(f"Need 2 <= k <= n, got k={k}, n={n}")
    rng = stream(seed, "folds", n, k)
    fold_of = np.empty(n, dtype=np.int64)
    fold_of[rng.permutation(n)] = np.arange(n) % k
    return FoldAssignment(fold_of=fold_of, k=k, seed=seed)


def assign_stratified_folds(treatment: np.ndarray, k: int, seed: int) -> FoldAssignment:
    """
    Fold assignment balanced within each treatment class.

    Each class is dealt round-robin over the folds, the second class picking up
    where the first stopped, so overall fold sizes still differ by at most one.
    """
    treatment = np.asarray(treatment)
    n = len(treatment)
    if k < 2 or k > n:
        raise ValueError(f"Need 2 <= k <= n, got k={k}, n={n}")
    rng = stream(seed, "stratified-folds", n, k)
    fold_of = np.empty(n, dtype=np.int64)
    offset = 0
    for cls in (0, 1):
        members = np.flatnonzero(treatment == cls)
        fold_of[rng.permutation(members)] = (offset + np.arange(len(members))) % k
        offset += len(members)
    return FoldAssignment(fold_of=fold_of, k=k, seed=seed)
