"""Weighted demeaning of columns across high-dimensional fixed-effect groups.

Implements the method of alternating projections: sweep over the fixed-effect
dimensions, subtracting weighted group means, until every column is weighted-
orthogonal to every group indicator. A Gearhart-Koshy style acceleration step
is applied after each sweep.
"""
from __future__ import annotations

import numpy as np
import pandas as pd

from .errors import NoConvergence

DEFAULT_TOL = 1e-10
MAX_SWEEPS = 2000


def encode_groups(keys) -> tuple[np.ndarray, int]:
    """Map an arbitrary label vector to dense integer codes."""
    codes, levels = pd.factorize(np.asarray(keys), sort=True)
    if (codes < 0).any():
        raise ValueError("fixed-effect keys must not contain nulls")
    return codes.astype(np.int64), len(levels)


def group_sums(values: np.ndarray, codes: np.ndarray, n_levels: int) -> np.ndarray:
    """Column-wise sums of `values` within each group. values is (n,) or (n, k)."""
    if values.ndim == 1:
        return np.bincount(codes, weights=values, minlength=n_levels)
    out = np.empty((n_levels, values.shape[1]))
    for j in range(values.shape[1]):
        out[:, j] = np.bincount(codes, weights=values[:, j], minlength=n_levels)
    return out


def _worst_violation(X, w, dims, scales):
    """Max over dims/groups of |weighted group sum|, normalized by column scale."""
    worst = 0.0
    wX = X * w[:, None]
    for codes, n_levels in dims:
        sums = group_sums(wX, codes, n_levels)
        viol = np.abs(sums).max(axis=0) / scales
        worst = max(worst, float(viol.max()))
    return worst


def absorb(columns, weights, fe_keys, tol: float = DEFAULT_TOL,
           max_sweeps: int = MAX_SWEEPS) -> np.ndarray:
    """Residualize `columns` on all fixed-effect dimensions under `weights`.

    columns : (n, k) array-like; a 1-d input is treated as a single column.
    weights : strictly positive (n,) vector.
    fe_keys : list of label vectors (one per FE dimension), or pre-encoded
              (codes, n_levels) tuples.

    Returns the demeaned copy; on exit every weighted group sum of every
    column is below tol times the column's weighted scale.
    """
    X = np.array(columns, dtype=float)
    squeeze = X.ndim == 1
    if squeeze:
        X = X[:, None]
    w = np.asarray(weights, dtype=float)
    if w.shape[0] != X.shape[0]:
        raise ValueError("weights length does not match column length")
    if np.any(w <= 0) or not np.all(np.isfinite(w)):
        raise ValueError("weights must be strictly positive and finite")

    dims = []
    for keys in fe_keys:
        if isinstance(keys, tuple) and len(keys) == 2 and np.isscalar(keys[1]):
            codes, n_levels = keys
            dims.append((np.asarray(codes, dtype=np.int64), int(n_levels)))
        else:
            dims.append(encode_groups(keys))
    if not dims:
        return X[:, 0] if squeeze else X

    denoms = [group_sums(w, codes, n_levels) for codes, n_levels in dims]
    # Column scale for the convergence test: weighted L1 mass of the originals.
    scales = np.maximum((np.abs(X) * w[:, None]).sum(axis=0), np.finfo(float).tiny)

    worst = np.inf
    for _ in range(max_sweeps):
        prev = X.copy()
        for (codes, n_levels), denom in zip(dims, denoms):
            means = group_sums(X * w[:, None], codes, n_levels) / denom[:, None]
            X -= means[codes]
        # Acceleration: extrapolate along the sweep direction per column.
        resid = X - prev
        ssr = np.einsum("ij,ij->j", resid, resid)
        pp = np.einsum("ij,ij->j", prev, prev)
        with np.errstate(divide="ignore", invalid="ignore"):
            t = -np.einsum("ij,ij->j", prev, resid) / ssr
        apply = (ssr > 1e-16 * np.maximum(pp, 1e-300)) & (t > 0.5) & np.isfinite(t)
        if apply.any():
            X[:, apply] = t[apply] * X[:, apply] + (1.0 - t[apply]) * prev[:, apply]
        worst = _worst_violation(X, w, dims, scales)
        if worst < tol:
            return X[:, 0] if squeeze else X
    raise NoConvergence(
        f"alternating projections did not converge in {max_sweeps} sweeps; "
        f"worst normalized group residual {worst:.3e}"
    )
