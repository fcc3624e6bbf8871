"""scikit-learn style wrapper around :func:`~heatdpg.adaptivity.adapt_loop`."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .adaptivity import AdaptConfig, adapt_loop
from .experiments import error_metrics
from .solver import evaluate

__all__ = ["SpaceTimeDPG"]


class SpaceTimeDPG(BaseEstimator):
    """Fit a space-time DPG approximation to one heat-equation problem.

    Parameters
    ----------
    scaling : {"equal", "parabolic"}
    mode : {"uniform", "adaptive"}
    theta : float
        Doerfler parameter for adaptive runs.
    ndof_max : int
        Refinement stops after the first mesh with more trace unknowns.
    residual_only_marking : bool

    Attributes
    ----------
    history_ : list of RunRecord
    mesh_, solution_ :
        Final mesh and discrete solution.

    Examples
    --------
    >>> from heatdpg.problems import experiment1
    >>> est = SpaceTimeDPG(ndof_max=200).fit(experiment1())
    >>> est.predict([[1.0, 0.5]]).shape
    (1,)
    """

    def __init__(self, scaling="equal", mode="uniform", theta=0.5, ndof_max=10_000, residual_only_marking=False):
        self.scaling = scaling
        self.mode = mode
        self.theta = theta
        self.ndof_max = ndof_max
        self.residual_only_marking = residual_only_marking

    def fit(self, problem, y=None):
        if self.mode not in ("uniform", "adaptive"):
            raise ValueError(f"mode must be 'uniform' or 'adaptive', got {self.mode!r}")
        cfg = AdaptConfig(
            scaling=self.scaling,
            theta=self.theta,
            uniform=self.mode == "uniform",
            ndof_max=self.ndof_max,
            residual_only_marking=self.residual_only_marking,
        )
        final = {}

        def keep(mesh, sol, ind, rec):
            final.update(mesh=mesh, solution=sol, indicator=ind)

        errors = error_metrics if getattr(problem, "has_exact", False) else None
        self.history_ = adapt_loop(problem, cfg, errors=errors, callback=keep)
        self.mesh_ = final["mesh"]
        self.solution_ = final["solution"]
        self.indicator_ = final["indicator"]
        self.n_features_in_ = 2
        return self

    def predict(self, X):
        """``u_h`` at rows ``(t, x)`` of ``X``."""
        return self.predict_fields(X)[0]

    def predict_fields(self, X):
        """``(u_h, sigma_h, uhat_h)`` at rows ``(t, x)`` of ``X``."""
        check_is_fitted(self, "solution_")
        X = check_array(X, ensure_min_features=2)
        if X.shape[1] != 2:
            raise ValueError(f"expected 2 columns (t, x), got {X.shape[1]}")
        return evaluate(self.solution_, X[:, 0], X[:, 1])

    def score(self, X=None, y=None) -> float:
        """Negative squared residual of the final mesh (larger is better)."""
        check_is_fitted(self, "history_")
        return -float(self.history_[-1].res2)

    @property
    def ndof_(self) -> np.ndarray:
        check_is_fitted(self, "history_")
        return np.array([r.ndof for r in self.history_])
