"""Blocking analysis of correlated Monte Carlo series.

Successive pairwise averaging (Flyvbjerg-Petersen) with the automatic
stopping rule of Jonsson (Phys. Rev. E 98, 043304): the first level ``k``
at which ``M_k = sum_{j>=k} n_j (gamma_j / s_j)^2`` falls below the 99%
chi-squared quantile is taken as the plateau.

Series in which most samples are exactly zero can be analysed from their
nonzero entries alone (:func:`blocking_error_sparse`); the result equals
the dense analysis of the full series.
"""
from __future__ import annotations

import warnings
from typing import NamedTuple

import numpy as np
from scipy.stats import chi2


class BlockingResult(NamedTuple):
    mean: float
    stderr: float
    plateau_level: int
    converged: bool


class BlockingWarning(UserWarning):
    pass


def blocking_levels(series):
    """Per-level ``(n, variance, lag-1 autocovariance)`` of the blocked series.

    At each level an odd trailing sample is dropped before pairing.
    """
    x = np.asarray(series, dtype=float)
    levels = []
    while x.size >= 2:
        n = x.size
        dx = x - x.mean()
        levels.append((n, float(np.dot(dx, dx) / n), float(np.dot(dx[:-1], dx[1:]) / n)))
        m = n // 2
        x = 0.5 * (x[0:2 * m:2] + x[1:2 * m:2])
    return levels


def sparse_blocking_levels(positions, values, n):
    """:func:`blocking_levels` of a length-``n`` series that is zero except
    at the sorted integer ``positions``."""
    pos = np.asarray(positions, dtype=np.int64)
    val = np.asarray(values, dtype=float)
    if pos.size and (np.any(np.diff(pos) <= 0) or pos[0] < 0 or pos[-1] >= n):
        raise ValueError("positions must be strictly increasing and inside [0, n)")
    levels = []
    k = 0
    while n >> k >= 2:
        nk = n >> k
        keep = pos < (nk << k)
        blk = pos[keep] >> k
        v = val[keep]
        if blk.size:
            starts = np.flatnonzero(np.r_[True, blk[1:] != blk[:-1]])
            b = blk[starts]
            y = np.add.reduceat(v, starts) / float(1 << k)
        else:
            b = blk
            y = v
        mu = y.sum() / nk
        dy = y - mu
        s = (np.dot(dy, dy) + (nk - y.size) * mu * mu) / nk
        # lag-1 products over all adjacent block pairs
        adj = np.flatnonzero(np.diff(b) == 1)
        yy = np.dot(y[adj], y[adj + 1])
        first = y[0] if b.size and b[0] == 0 else 0.0
        last = y[-1] if b.size and b[-1] == nk - 1 else 0.0
        total = y.sum()
        gamma = (yy - mu * ((total - last) + (total - first)) + (nk - 1) * mu * mu) / nk
        levels.append((nk, float(s), float(gamma)))
        k += 1
    return levels


def _plateau(levels, mean):
    n = np.array([lv[0] for lv in levels], dtype=float)
    s = np.array([lv[1] for lv in levels])
    g = np.array([lv[2] for lv in levels])
    if s[0] <= 0.0:
        return BlockingResult(mean, 0.0, 0, True)
    with np.errstate(divide="ignore", invalid="ignore"):
        r = np.where(s > 0, g / s, 0.0)
    M = np.cumsum((n * r ** 2)[::-1])[::-1]
    d = len(levels)
    usable = [k for k in range(d) if n[k] >= 4]
    for k in usable:
        if M[k] < chi2.ppf(0.99, d - k):
            return BlockingResult(mean, float(np.sqrt(s[k] / n[k])), k, True)
    k = usable[-1]
    warnings.warn("blocking found no plateau; error taken at deepest level",
                  BlockingWarning, stacklevel=3)
    return BlockingResult(mean, float(np.sqrt(s[k] / n[k])), k, False)


def blocking_error(series) -> BlockingResult:
    """Mean and autocorrelation-corrected standard error of ``series``.

    The mean is always the plain mean of the full series.  If no level
    passes the test, the error at the deepest level is reported and a
    :class:`BlockingWarning` is issued.
    """
    x = np.asarray(series, dtype=float).ravel()
    if x.size < 16:
        raise ValueError(f"blocking needs at least 16 samples, got {x.size}")
    return _plateau(blocking_levels(x), float(x.mean()))


def blocking_error_sparse(positions, values, n) -> BlockingResult:
    """:func:`blocking_error` for a series given by its nonzero entries."""
    if n < 16:
        raise ValueError(f"blocking needs at least 16 samples, got {n}")
    mean = float(np.sum(values)) / n
    return _plateau(sparse_blocking_levels(positions, values, n), mean)


def combine(results, weights) -> BlockingResult:
    """Weighted mean of independent estimates with propagated error."""
    w = np.asarray(weights, dtype=float)
    w = w / w.sum()
    mean = float(np.dot(w, [r.mean for r in results]))
    err = float(np.sqrt(np.dot(w ** 2, [r.stderr ** 2 for r in results])))
    return BlockingResult(mean, err, max(r.plateau_level for r in results),
                          all(r.converged for r in results))
