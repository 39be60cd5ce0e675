"""scikit-learn style front ends.

The estimators take their model at construction (hyper-parameters) and learn
from data in ``fit``, so they compose with ``clone``, ``get_params`` and
pipelines. Samples are passed as a 1-D array or a single-column 2-D array.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .busy import DEFAULT_MAX_ITER, DEFAULT_TOL, busy_density, busy_mean, solve_busy_lt
from .exceptions import ModelError
from .model import OnOffModel, check_stable
from .reliability import N_BOOTSTRAP, dfr_check, hazard_estimate, ifr_check


def _column(X, name="X"):
    X = check_array(X, ensure_2d=False, dtype=np.float64, input_name=name)
    if X.ndim == 2:
        if X.shape[1] != 1:
            raise ValueError(f"{name} must have a single column, got {X.shape[1]}")
        X = X[:, 0]
    return X


class BusyPeriodTransform(TransformerMixin, BaseEstimator):
    """Map ``theta`` values to busy-period transforms of an on-off model.

    Parameters
    ----------
    model : OnOffModel
    source : int or None
        Column to return; ``None`` returns all sources.
    tol, max_iter : fixed-point iteration controls.
    allow_unstable : bool

    Attributes
    ----------
    utilization_ : float
    n_sources_ : int
    """

    def __init__(self, model=None, source=None, tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER,
                 allow_unstable=False):
        self.model = model
        self.source = source
        self.tol = tol
        self.max_iter = max_iter
        self.allow_unstable = allow_unstable

    def fit(self, X=None, y=None):
        if not isinstance(self.model, OnOffModel):
            raise ModelError("model must be an OnOffModel")
        if self.source is not None and not 0 <= self.source < self.model.n_sources:
            raise ValueError(f"source {self.source} out of range")
        self.utilization_ = check_stable(self.model, self.allow_unstable)
        self.n_sources_ = self.model.n_sources
        return self

    def transform(self, X):
        """``pi[k, i]`` at ``theta = X[k]``; one column if ``source`` is set."""
        check_is_fitted(self, "n_sources_")
        theta = _column(X, "theta")
        sol = solve_busy_lt(self.model, theta, self.tol, self.max_iter, self.allow_unstable)
        pi = sol.pi
        if self.source is not None:
            pi = pi[:, [self.source]]
        return pi

    def mean(self, i=None):
        """Busy-period mean of source ``i`` (defaults to ``source`` or 0)."""
        check_is_fitted(self, "n_sources_")
        i = self.source if i is None else i
        return busy_mean(self.model, 0 if i is None else i, allow_unstable=self.allow_unstable)

    def density(self, t, i=None, method="euler"):
        check_is_fitted(self, "n_sources_")
        i = self.source if i is None else i
        return busy_density(self.model, 0 if i is None else i, _column(t, "t"), method=method,
                            tol=self.tol, allow_unstable=self.allow_unstable)


class HazardRateEstimator(BaseEstimator):
    """Kernel hazard-rate estimator (reflected Gaussian kernel over empirical survival).

    Attributes
    ----------
    curve_ : HazardCurve
        Estimate on the default grid, with bootstrap half-widths.
    bandwidth_ : float
    """

    def __init__(self, bandwidth=None, n_boot=N_BOOTSTRAP, seed=0, survival_threshold=0.01):
        self.bandwidth = bandwidth
        self.n_boot = n_boot
        self.seed = seed
        self.survival_threshold = survival_threshold

    def fit(self, X, y=None):
        x = _column(X)
        self.curve_ = hazard_estimate(x, self.bandwidth, n_boot=self.n_boot, seed=self.seed,
                                      survival_threshold=self.survival_threshold)
        self.bandwidth_ = self.curve_.bandwidth
        self.samples_ = x
        return self

    def predict(self, t):
        """Hazard at ``t``; NaN where the empirical survival is below the threshold."""
        check_is_fitted(self, "curve_")
        t = _column(t, "t")
        out = np.full(t.size, np.nan)
        order = np.argsort(t)
        curve = hazard_estimate(self.samples_, self.bandwidth_, t_grid=t[order], n_boot=0,
                                survival_threshold=self.survival_threshold)
        pos = np.searchsorted(t[order], curve.t)
        out[order[pos]] = curve.hazard
        return out


class AgeingTest(BaseEstimator):
    """Sample test of an ageing class, ``claim`` in {"DFR", "IFR"}.

    Attributes
    ----------
    verdict_ : Verdict
    passed_ : bool
    """

    def __init__(self, claim="DFR", n_boot=N_BOOTSTRAP, alpha=0.05, seed=0, null="exponential"):
        self.claim = claim
        self.n_boot = n_boot
        self.alpha = alpha
        self.seed = seed
        self.null = null

    def fit(self, X, y=None):
        check = {"DFR": dfr_check, "IFR": ifr_check}.get(self.claim)
        if check is None:
            raise ValueError(f"claim must be 'DFR' or 'IFR', got {self.claim!r}")
        self.verdict_ = check(_column(X), n_boot=self.n_boot, alpha=self.alpha, seed=self.seed,
                              null=self.null)
        self.passed_ = self.verdict_.passed
        return self

    def score(self, X=None, y=None):
        """Statistic-to-threshold ratio of the fitted verdict (<= 1 passes)."""
        check_is_fitted(self, "verdict_")
        v = self.verdict_
        return v.statistic / v.threshold if v.threshold > 0 else float(v.statistic > 0)
