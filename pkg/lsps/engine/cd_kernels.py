"""Compiled inner loops of the L1 logistic coordinate descent.

Dense designs are passed transposed (M×N, C-ordered, one row per covariate);
sparse designs as CSC arrays. `dense` selects which of the two is live and the
other is an empty placeholder of the same dtype.
"""

import math

import numba as nb
import numpy as np


@nb.njit(cache=True, nogil=True)
def _sigmoid(z):
    if z >= 0.0:
        return 1.0 / (1.0 + math.exp(-z))
    e = math.exp(z)
    return e / (1.0 + e)


@nb.njit(cache=True, nogil=True)
def _log1pexp(z):
    if z > 0.0:
        return z + math.log1p(math.exp(-z))
    return math.log1p(math.exp(z))


@nb.njit(cache=True, nogil=True)
def _soft_threshold(z, lam):
    if z > lam:
        return z - lam
    if z < -lam:
        return z + lam
    return 0.0


@nb.njit(cache=True, nogil=True)
def _column(dense, xt, indptr, indices, data, all_rows, j):
    if dense:
        return all_rows, xt[j]
    return indices[indptr[j] : indptr[j + 1]], data[indptr[j] : indptr[j + 1]]


@nb.njit(cache=True, nogil=True)
def _coordinate_step(rows, values, inv_scale, sign, eta, theta, j, lam, n, bound):
    """Update θⱼ in place and return |Δθⱼ|.

    The proximal Newton step on the exact curvature is kept when the penalized
    objective does not increase; otherwise the step on the curvature bound
    ¼·Σx²/n is taken, which never increases it.
    """
    grad = 0.0
    hess = 0.0
    for k in range(rows.shape[0]):
        v = values[k] * inv_scale
        if v == 0.0:
            continue
        i = rows[k]
        q = _sigmoid(sign[i] * eta[i])
        grad += v * sign[i] * q
        hess += v * v * q * (1.0 - q)
    grad /= n
    hess /= n
    old = theta[j]

    if hess > 0.0:
        delta = _soft_threshold(hess * old - grad, lam) / hess - old
        if delta == 0.0:
            return 0.0
        change = lam * (abs(old + delta) - abs(old))
        for k in range(rows.shape[0]):
            v = values[k] * inv_scale
            if v == 0.0:
                continue
            i = rows[k]
            s = sign[i]
            change += (_log1pexp(s * (eta[i] + delta * v)) - _log1pexp(s * eta[i])) / n
        if change <= 0.0:
            theta[j] = old + delta
            for k in range(rows.shape[0]):
                eta[rows[k]] += delta * values[k] * inv_scale
            return abs(delta)

    if bound <= 0.0:
        return 0.0
    delta = _soft_threshold(bound * old - grad, lam) / bound - old
    if delta == 0.0:
        return 0.0
    theta[j] = old + delta
    for k in range(rows.shape[0]):
        eta[rows[k]] += delta * values[k] * inv_scale
    return abs(delta)


@nb.njit(cache=True, nogil=True)
def _intercept_step(sign, eta):
    """Unpenalized intercept update; returns the shift applied to η."""
    n = eta.shape[0]
    grad = 0.0
    hess = 0.0
    for i in range(n):
        q = _sigmoid(sign[i] * eta[i])
        grad += sign[i] * q
        hess += q * (1.0 - q)
    grad /= n
    hess /= n
    if grad == 0.0:
        return 0.0
    if hess > 0.0:
        delta = -grad / hess
        change = 0.0
        for i in range(n):
            change += _log1pexp(sign[i] * (eta[i] + delta)) - _log1pexp(sign[i] * eta[i])
        if change <= 0.0:
            for i in range(n):
                eta[i] += delta
            return delta
    delta = -grad / 0.25
    for i in range(n):
        eta[i] += delta
    return delta


@nb.njit(cache=True, nogil=True)
def cd_sweep(
    dense, xt, indptr, indices, data, all_rows, inv_scale, bounds,
    sign, eta, theta, working_set, lam,
):
    """One cyclic pass: intercept, then every coordinate of the working set.

    Returns (intercept shift, largest parameter change).
    """
    n = eta.shape[0]
    shift = _intercept_step(sign, eta)
    max_change = abs(shift)
    for j in working_set:
        rows, values = _column(dense, xt, indptr, indices, data, all_rows, j)
        change = _coordinate_step(
            rows, values, inv_scale[j], sign, eta, theta, j, lam, n, bounds[j]
        )
        if change > max_change:
            max_change = change
    return shift, max_change


@nb.njit(cache=True, nogil=True)
def full_gradient(dense, xt, indptr, indices, data, all_rows, inv_scale, sign, eta):
    """∂ mean loss / ∂θⱼ for every covariate in the scaled parameterization."""
    n = eta.shape[0]
    m = inv_scale.shape[0]
    residual = np.empty(n)
    for i in range(n):
        residual[i] = sign[i] * _sigmoid(sign[i] * eta[i])
    grad = np.zeros(m)
    for j in range(m):
        rows, values = _column(dense, xt, indptr, indices, data, all_rows, j)
        acc = 0.0
        for k in range(rows.shape[0]):
            acc += values[k] * residual[rows[k]]
        grad[j] = acc * inv_scale[j] / n
    return grad
