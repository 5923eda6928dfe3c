"""Helpers that let the engine treat dense and sparse design matrices alike.

Sparse designs are kept in CSC form so that per-column access is O(nnz).
Dense designs are kept Fortran-ordered for the same reason.
"""

from typing import Sequence, Tuple, Union

import numpy as np
import scipy.sparse as sp

Design = Union[np.ndarray, sp.spmatrix, sp.sparray]


def is_sparse(x: Design) -> bool:
    """Return True for scipy sparse matrices/arrays."""
    return sp.issparse(x)


def as_design(x: Design) -> Design:
    """Normalize a design matrix to CSC (sparse) or Fortran-ordered float (dense)."""
    if is_sparse(x):
        return sp.csc_matrix(x, dtype=np.float64)
    arr = np.asarray(x)
    if arr.ndim != 2:
        raise ValueError(f"Design matrix must be 2-D, got shape {arr.shape}")
    if not np.issubdtype(arr.dtype, np.floating):
        arr = arr.astype(np.float64)
    return np.asfortranarray(arr)


def column(x: Design, j: int) -> Tuple[Union[np.ndarray, slice], np.ndarray]:
    """Return (row selector, values) for column j."""
    if is_sparse(x):
        start, end = x.indptr[j], x.indptr[j + 1]
        return x.indices[start:end], x.data[start:end]
    return slice(None), x[:, j].astype(np.float64, copy=False)


def matvec(x: Design, v: np.ndarray) -> np.ndarray:
    """Compute x @ v in float64."""
    if is_sparse(x):
        return np.asarray(x @ v, dtype=np.float64).ravel()
    return np.asarray(x @ v.astype(x.dtype, copy=False), dtype=np.float64)


def rmatvec(x: Design, r: np.ndarray) -> np.ndarray:
    """Compute x.T @ r in float64."""
    if is_sparse(x):
        return np.asarray(x.T @ r, dtype=np.float64).ravel()
    return np.asarray(x.T @ r.astype(x.dtype, copy=False), dtype=np.float64)


def squared(x: Design) -> Design:
    """Elementwise square."""
    if is_sparse(x):
        return x.multiply(x).tocsc()
    return np.square(x)


def column_means(x: Design) -> np.ndarray:
    return np.asarray(x.mean(axis=0), dtype=np.float64).ravel()


def column_stds(x: Design) -> np.ndarray:
    """Population standard deviation of every column."""
    means = column_means(x)
    second = column_means(squared(x))
    return np.sqrt(np.maximum(second - means**2, 0.0))


def take_rows(x: Design, rows: np.ndarray) -> Design:
    if is_sparse(x):
        return x[rows].tocsc()
    return np.asfortranarray(x[rows])


def take_columns(x: Design, cols: Sequence[int]) -> Design:
    cols = np.asarray(cols, dtype=np.intp)
    if is_sparse(x):
        return x[:, cols].tocsc()
    return np.asfortranarray(x[:, cols])


def append_column(x: Design, values: np.ndarray) -> Design:
    """Return a new design with `values` appended as the last column."""
    values = np.asarray(values, dtype=np.float64).reshape(-1, 1)
    if is_sparse(x):
        return sp.hstack([x, sp.csc_matrix(values)], format="csc")
    return np.asfortranarray(np.hstack([x, values.astype(x.dtype, copy=False)]))


def to_dense(x: Design) -> np.ndarray:
    if is_sparse(x):
        return x.toarray()
    return np.asarray(x)


def is_binary_column(x: Design, j: int) -> bool:
    _, values = column(x, j)
    return bool(np.all((values == 0.0) | (values == 1.0)))
