"""Scikit-learn style wrappers around the two estimation schemes.

Images are passed as ``(height, width, 3)`` arrays with values in [0, 1].
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClusterMixin, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from . import cme, ml, observation, posterior_lbp
from ._validation import check_boundary, check_image, check_n_labels, check_seed
from .observation import GaussianParams


class _PosteriorMixin:
    """Posterior queries at the fitted coupling and colour parameters."""

    def _posterior(self, X):
        check_is_fitted(self, ["coupling_", "means_", "covariances_"])
        img = check_image(X)
        if img.shape[2] != self.means_.shape[1]:
            raise ValueError("image has a different number of channels than the fitted model")
        graph = cme.image_graph(img, self.boundary)
        params = GaussianParams(self.means_, self.covariances_)
        table = observation.likelihood_table(img.reshape(-1, 3), params)
        state = posterior_lbp.solve_posterior_fixed_point(graph, self.n_labels, self.coupling_, table)
        return img, state

    def transform(self, X):
        """Posterior label marginals, shape ``(height, width, n_labels)``."""
        img, state = self._posterior(X)
        return state.node_marginals.reshape(img.shape[0], img.shape[1], self.n_labels)

    def predict(self, X):
        """MPM labels of ``X`` under the fitted model, shape ``(height, width)``."""
        img, state = self._posterior(X)
        return posterior_lbp.mpm_label(state).reshape(img.shape[:2])


class PottsSegmenter(_PosteriorMixin, ClusterMixin, TransformerMixin, BaseEstimator):
    """Segmentation with the conditional maximum-entropy estimator.

    Parameters
    ----------
    n_labels : int
    boundary : {"free", "periodic"}
    tol : float
        Outer convergence tolerance on the disagreement rate and parameters.
    max_outer : int
    damping : float
        Message damping in [0, 1).
    random_state : int or None
        Seed for the initial colour clustering.

    Attributes
    ----------
    disagreement_ : float
        Estimated disagreement rate ``u``.
    coupling_ : float
        ``alpha(u)``.
    means_, covariances_ : ndarray
    labels_ : ndarray of shape (height, width)
    trace_ : list of TraceRow
    n_iter_ : int
    converged_ : bool
    """

    def __init__(self, n_labels=2, boundary="free", tol=1e-5, max_outer=200, damping=0.0,
                 random_state=0):
        self.n_labels = n_labels
        self.boundary = boundary
        self.tol = tol
        self.max_outer = max_outer
        self.damping = damping
        self.random_state = random_state

    def fit(self, X, y=None):
        img = check_image(X)
        config = cme.CmeConfig(q=check_n_labels(self.n_labels),
                               boundary=check_boundary(self.boundary), outer_tol=self.tol,
                               max_outer=self.max_outer, damping=self.damping,
                               seed=check_seed(self.random_state))
        report = cme.run_cme(img, config)
        self.disagreement_ = report.u_hat
        self.coupling_ = report.alpha_hat
        self.means_ = report.params.means
        self.covariances_ = report.params.covariances
        self.labels_ = report.labels
        self.trace_ = report.trace
        self.n_iter_ = report.iterations
        self.converged_ = report.converged
        self.report_ = report
        return self

    def fit_predict(self, X, y=None):
        return self.fit(X).labels_


class MarginalLikelihoodSegmenter(_PosteriorMixin, ClusterMixin, TransformerMixin, BaseEstimator):
    """Segmentation with the coupling chosen by maximum marginal likelihood.

    Parameters
    ----------
    n_labels : int
    K_grid : array-like or None
        Ascending coupling grid; None uses 0 to 4 in steps of 0.02.
    boundary : {"free", "periodic"}
    tol : float
        EM tolerance on the parameter drift at each coupling.
    refine : bool
        Refine the grid around the best points and the transition.
    random_state : int or None

    Attributes
    ----------
    coupling_ : float
    means_, covariances_ : ndarray
    labels_ : ndarray of shape (height, width)
    curve_ : list of MlSweepRow
    kink_detected_ : bool
    estimate_ : MlEstimate
    """

    def __init__(self, n_labels=2, K_grid=None, boundary="free", tol=1e-6, refine=True,
                 random_state=0):
        self.n_labels = n_labels
        self.K_grid = K_grid
        self.boundary = boundary
        self.tol = tol
        self.refine = refine
        self.random_state = random_state

    def fit(self, X, y=None):
        img = check_image(X)
        rows, est = ml.sweep(img, check_n_labels(self.n_labels), self.K_grid,
                             boundary=check_boundary(self.boundary),
                             seed=check_seed(self.random_state), refine=self.refine, tol=self.tol)
        self.coupling_ = est.K_hat
        self.means_ = est.params.means
        self.covariances_ = est.params.covariances
        self.labels_ = est.labels
        self.curve_ = rows
        self.kink_detected_ = est.kink_detected
        self.estimate_ = est
        return self

    def fit_predict(self, X, y=None):
        return self.fit(X).labels_
