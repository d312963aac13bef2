"""Fit objects with a scikit-learn style interface.

``PowerLawFit`` fits ``log y = intercept + slope log x`` with bootstrap
confidence intervals; ``FiniteSizeExtrapolator`` fits
``e(N) = e_inf + c N^(-p)``.  Both follow the ``fit``/``predict``/
``get_params`` conventions so they compose with the usual tooling.
"""
from __future__ import annotations

import warnings

import numpy as np
from scipy import stats
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_consistent_length, check_is_fitted


class FitRefused(ValueError):
    """The data cannot support the requested fit."""


class ModelMismatchWarning(UserWarning):
    pass


def _as_1d(x, name):
    arr = check_array(np.asarray(x, dtype=float).reshape(-1, 1), ensure_min_samples=1,
                      input_name=name)
    return arr.ravel()


def _wls(design, y, sigma):
    w = 1.0 / sigma
    coef, *_ = np.linalg.lstsq(design * w[:, None], y * w, rcond=None)
    resid = y - design @ coef
    return coef, resid


class PowerLawFit(RegressorMixin, BaseEstimator):
    """Log-log least squares with a bootstrap interval for the slope.

    Parameters
    ----------
    n_boot : int
        Bootstrap replicates.  With per-point errors the bootstrap is
        parametric (log-normal perturbations), otherwise residuals are
        resampled.
    confidence : float
        Two-sided coverage of ``slope_ci_``.
    min_points, min_decades : number
        Preconditions on the abscissa.
    random_state : int
    """

    def __init__(self, n_boot=2000, confidence=0.95, min_points=4, min_decades=1.5,
                 random_state=0):
        self.n_boot = n_boot
        self.confidence = confidence
        self.min_points = min_points
        self.min_decades = min_decades
        self.random_state = random_state

    def fit(self, X, y, y_err=None):
        x = _as_1d(X, "X")
        y = _as_1d(y, "y")
        check_consistent_length(x, y)
        if x.size < self.min_points:
            raise FitRefused(f"need at least {self.min_points} points, got {x.size}")
        if np.any(x <= 0) or np.any(y <= 0):
            raise FitRefused("power-law fit needs positive abscissa and values")
        span = np.log10(x.max() / x.min())
        if span < self.min_decades - 1e-9:
            raise FitRefused(f"abscissa spans {span:.2f} decades, need {self.min_decades}")
        lx, ly = np.log(x), np.log(y)
        if y_err is None:
            sig = np.ones_like(ly)
        else:
            err = _as_1d(y_err, "y_err")
            check_consistent_length(x, err)
            sig = np.where(err > 0, err / y, 1e-12)
        design = np.column_stack([np.ones_like(lx), lx])
        coef, resid = _wls(design, ly, sig)
        rng = np.random.default_rng(self.random_state)
        slopes = np.empty(self.n_boot)
        for b in range(self.n_boot):
            if y_err is None:
                yb = design @ coef + rng.choice(resid, size=resid.size, replace=True)
            else:
                yb = design @ coef + rng.normal(0.0, sig)
            slopes[b] = _wls(design, yb, sig)[0][1]
        tail = 50.0 * (1.0 - self.confidence)
        self.intercept_, self.slope_ = float(coef[0]), float(coef[1])
        self.slope_ci_ = (float(np.percentile(slopes, tail)),
                          float(np.percentile(slopes, 100.0 - tail)))
        self.bootstrap_slopes_ = slopes
        self.residuals_ = resid
        return self

    def predict(self, X):
        check_is_fitted(self, "slope_")
        x = _as_1d(X, "X")
        return np.exp(self.intercept_ + self.slope_ * np.log(x))


class FiniteSizeExtrapolator(RegressorMixin, BaseEstimator):
    """Weighted fit of ``e(N) = e_inf + c N^(-power)``.

    ``power`` is 1/3 for an open box (surface term) and 1 for periodic
    boundaries.  A warning is issued when the residuals exceed the noise
    (chi-squared above its 99% quantile).
    """

    def __init__(self, power=1.0, confidence=0.95):
        self.power = power
        self.confidence = confidence

    def fit(self, X, y, y_err=None):
        n = _as_1d(X, "X")
        e = _as_1d(y, "y")
        check_consistent_length(n, e)
        if np.unique(n).size < 3:
            raise FitRefused("need at least three distinct N")
        sig = np.ones_like(e) if y_err is None else _as_1d(y_err, "y_err")
        if np.any(sig <= 0):
            sig = np.where(sig > 0, sig, np.max(np.abs(e)) * 1e-12 + 1e-300)
        design = np.column_stack([np.ones_like(n), n ** (-float(self.power))])
        coef, resid = _wls(design, e, sig)
        w = 1.0 / sig
        cov = np.linalg.pinv((design * w[:, None] ** 2).T @ design)
        dof = n.size - 2
        chi2 = float(np.sum((resid / sig) ** 2))
        if y_err is None and dof > 0:
            cov = cov * chi2 / dof  # scale to observed scatter
        se = float(np.sqrt(max(cov[0, 0], 0.0)))
        q = stats.t.ppf(0.5 + self.confidence / 2, dof) if dof > 0 else \
            stats.norm.ppf(0.5 + self.confidence / 2)
        self.e_inf_, self.slope_ = float(coef[0]), float(coef[1])
        self.e_inf_stderr_ = se
        self.e_inf_ci_ = (self.e_inf_ - q * se, self.e_inf_ + q * se)
        self.chi2_ = chi2
        self.dof_ = dof
        self.mismatch_ = bool(y_err is not None and dof > 0
                              and chi2 > stats.chi2.ppf(0.99, dof))
        if self.mismatch_:
            warnings.warn("finite-size residuals exceed the noise; model mismatch",
                          ModelMismatchWarning, stacklevel=2)
        return self

    def predict(self, X):
        check_is_fitted(self, "e_inf_")
        n = _as_1d(X, "X")
        return self.e_inf_ + self.slope_ * n ** (-float(self.power))
