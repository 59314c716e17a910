"""scikit-learn style wrapper around the TD(0) recursion.

Rows of ``X`` are features of visited states, ``X_next`` the features of
their successors and ``y`` the observed rewards. The fitted coefficients
approximate the TD fixed point, so ``predict`` returns linear value
estimates ``X @ coef_``.
"""
import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y


class TD0Regressor(RegressorMixin, BaseEstimator):
    """Unaltered TD(0) with stepsizes ``(n + 1) ** -sigma``.

    Parameters
    ----------
    gamma : float
        Discount factor in [0, 1).
    sigma : float
        Stepsize exponent in (0, 1].
    n_passes : int
        Passes over the transitions in ``fit``. The step counter keeps
        running across passes.
    theta0 : array-like or None
        Initial weights (zeros by default).
    """

    def __init__(self, gamma=0.9, sigma=1.0, n_passes=1, theta0=None):
        self.gamma = gamma
        self.sigma = sigma
        self.n_passes = n_passes
        self.theta0 = theta0

    def _check_params(self):
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError(f"gamma must lie in [0, 1), got {self.gamma}")
        if not 0.0 < self.sigma <= 1.0:
            raise ValueError(f"sigma must lie in (0, 1], got {self.sigma}")
        if int(self.n_passes) < 1:
            raise ValueError("n_passes must be at least 1")

    def _validate(self, X, y, X_next):
        if X_next is None:
            raise ValueError("TD(0) needs successor features: pass X_next")
        X, y = check_X_y(X, y, y_numeric=True)
        X_next = check_array(X_next)
        if X_next.shape != X.shape:
            raise ValueError(f"X_next has shape {X_next.shape}, expected {X.shape}")
        return X, y.astype(float), X_next

    def _run(self, X, y, X_next, theta, start):
        n = start
        for phi, r, phi_next in zip(X, y, X_next):
            alpha = (n + 1.0) ** (-self.sigma)
            delta = r + self.gamma * (phi_next @ theta) - phi @ theta
            theta = theta + alpha * delta * phi
            n += 1
        return theta, n

    def fit(self, X, y, X_next=None):
        """Run TD(0) over the transitions ``(X[i], y[i], X_next[i])`` in order."""
        self._check_params()
        X, y, X_next = self._validate(X, y, X_next)
        d = X.shape[1]
        theta = np.zeros(d) if self.theta0 is None else np.asarray(self.theta0, float).copy()
        if theta.shape != (d,):
            raise ValueError(f"theta0 must have length {d}")
        n = 0
        for _ in range(int(self.n_passes)):
            theta, n = self._run(X, y, X_next, theta, n)
        self.coef_ = theta
        self.n_steps_ = n
        self.n_features_in_ = d
        return self

    def partial_fit(self, X, y, X_next=None):
        """Continue from the current weights and step counter."""
        if not hasattr(self, "coef_"):
            return self.fit(X, y, X_next)
        self._check_params()
        X, y, X_next = self._validate(X, y, X_next)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"expected {self.n_features_in_} features, got {X.shape[1]}")
        self.coef_, self.n_steps_ = self._run(X, y, X_next, self.coef_, self.n_steps_)
        return self

    def predict(self, X):
        check_is_fitted(self, "coef_")
        X = check_array(X)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"expected {self.n_features_in_} features, got {X.shape[1]}")
        return X @ self.coef_
