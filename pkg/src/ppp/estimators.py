"""scikit-learn compatible wrappers around the estimator and the predictor.

``CurveFitTailEstimator`` is a stateless transformer mapping each row of
``X`` (one N-sample) to its tail estimate. ``BayesLikePredictor`` is fitted on
a cloud and predicts level-T values for rows of raw samples.
"""
import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from . import cloud as cloud_mod
from .estimator import check_sample_size, fit_xi
from .predictor import (DEFAULT_T_LEVELS, ORDER_STATISTIC, POINTWISE, SliceSpec, build_table,
                        default_centers, predict)


class CurveFitTailEstimator(TransformerMixin, BaseEstimator):
    """Row-wise curve-fit tail estimate.

    Parameters
    ----------
    output : {"psi", "xi", "both"}
        Which coordinate ``transform`` returns. ``"both"`` gives two columns
        ``(xi_hat, psi_hat)``.
    """

    def __init__(self, output="psi"):
        self.output = output

    def fit(self, X, y=None):
        X = check_array(X, dtype=float)
        check_sample_size(X.shape[1])
        if self.output not in ("psi", "xi", "both"):
            raise ValueError(f"output must be 'psi', 'xi' or 'both', got {self.output!r}")
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "n_features_in_")
        X = check_array(X, dtype=float)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"expected {self.n_features_in_} values per row, got {X.shape[1]}")
        est = [fit_xi(row) for row in X]
        xi = np.array([e.xi_hat for e in est])
        psi = np.array([e.psi_hat for e in est])
        if self.output == "xi":
            return xi[:, None]
        if self.output == "psi":
            return psi[:, None]
        return np.column_stack([xi, psi])


class BayesLikePredictor(BaseEstimator):
    """Level-T predictor learned from a Monte Carlo cloud.

    ``fit`` takes a :class:`~ppp.cloud.Cloud`, a cloud directory, or an
    ``(m, 3)`` array of ``(psi, psi_hat, w_next)`` rows. ``predict`` takes raw
    samples, one per row, and returns one column per requested level.
    """

    def __init__(self, t_levels=DEFAULT_T_LEVELS, slice_width=0.1, centers=None,
                 min_points=200, quantile_mode=ORDER_STATISTIC, rule=POINTWISE, n=20):
        self.t_levels = t_levels
        self.slice_width = slice_width
        self.centers = centers
        self.min_points = min_points
        self.quantile_mode = quantile_mode
        self.rule = rule
        self.n = n

    def fit(self, X, y=None):
        if not isinstance(X, (cloud_mod.Cloud, str)) and not hasattr(X, "__fspath__"):
            X = check_array(X, dtype=float)
        cloud = cloud_mod.load(X, n=self.n)
        centers = default_centers() if self.centers is None else self.centers
        spec = SliceSpec(self.slice_width, centers, self.min_points)
        self.table_ = build_table(cloud, spec, self.t_levels, cloud.n, self.quantile_mode,
                                  self.rule)
        self.n_features_in_ = self.table_.n
        return self

    def predict(self, X, T=None):
        """x-scale predictions, shape ``(rows, len(T))``; ``T`` defaults to the fitted levels."""
        check_is_fitted(self, "table_")
        X = check_array(X, dtype=float)
        levels = self.table_.t_levels if T is None else np.atleast_1d(T)
        return np.vstack([predict(self.table_, row, levels) for row in X])

    def estimate(self, X):
        return CurveFitTailEstimator("both").fit(X).transform(X)
