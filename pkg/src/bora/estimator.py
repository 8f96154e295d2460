"""scikit-learn estimator wrapping an adapter on a frozen linear layer."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .adapters import AdapterConfig, forward, materialize
from .exceptions import ShapeError
from .tasks import RegressionTask, run_regression

__all__ = ["AdapterRegressor"]


class AdapterRegressor(TransformerMixin, RegressorMixin, BaseEstimator):
    """Fit an adapter so that ``X @ (W + (alpha/r) dW).T`` matches ``y``.

    ``W`` is the frozen ``base_weight`` (zeros when omitted). Training is
    full-batch AdamW with linear warm-up and decay, seeded by
    ``random_state``.

    Parameters
    ----------
    r, b : int
        Adapter rank and block count. ``b`` must divide both the input and
        output width for ``melora``/``bora``.
    variant : {"lora", "melora", "bora"}
    sigma_transform : {"norm-exp", "exp-only", "norm-only", "raw"}
    alpha : float, optional
        Scaling numerator; defaults to ``r``.
    base_weight : array of shape (n_outputs, n_features), optional
    steps, lr, warmup, weight_decay
        Optimizer budget and schedule.
    random_state : int
        Unsigned 64-bit seed for initialization.

    Attributes
    ----------
    config_ : AdapterConfig
    params_ : AdapterParams
    report_ : TrainReport
    base_weight_ : ndarray of shape (n_outputs, n_features)
    """

    def __init__(
        self,
        r=8,
        b=1,
        variant="bora",
        sigma_transform="norm-exp",
        alpha=None,
        base_weight=None,
        steps=500,
        lr=1e-2,
        warmup=10,
        weight_decay=0.0,
        random_state=0,
    ):
        self.r = r
        self.b = b
        self.variant = variant
        self.sigma_transform = sigma_transform
        self.alpha = alpha
        self.base_weight = base_weight
        self.steps = steps
        self.lr = lr
        self.warmup = warmup
        self.weight_decay = weight_decay
        self.random_state = random_state

    def fit(self, X, y):
        X, y = check_X_y(X, y, multi_output=True, y_numeric=True, dtype=np.float64)
        self._single_output = y.ndim == 1
        Y = y.reshape(-1, 1) if self._single_output else y
        n_out, n_in = Y.shape[1], X.shape[1]
        if self.base_weight is None:
            W = np.zeros((n_out, n_in))
        else:
            W = check_array(self.base_weight, dtype=np.float64)
            if W.shape != (n_out, n_in):
                raise ShapeError(f"base_weight must be {n_out}x{n_in}, got {W.shape}")
        self.config_ = AdapterConfig(
            n_out, n_in, self.r, self.b, self.variant, self.sigma_transform, self.alpha
        )
        task = RegressionTask(W=W, inputs=X, labels=Y)
        self.report_ = run_regression(
            self.config_, task, self.steps, self.lr, int(self.random_state),
            self.warmup, self.weight_decay,
        )
        self.params_ = self.report_.params
        self.base_weight_ = W
        self.n_features_in_ = n_in
        return self

    def _check_input(self, X):
        check_is_fitted(self, "params_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ShapeError(f"X has {X.shape[1]} features, expected {self.n_features_in_}")
        return X

    def transform(self, X):
        """Adapter contribution ``X @ ((alpha/r) dW).T`` alone."""
        X = self._check_input(X)
        return forward(self.params_, self.config_, X)

    def predict(self, X):
        X = self._check_input(X)
        out = X @ self.base_weight_.T + forward(self.params_, self.config_, X)
        return out[:, 0] if self._single_output else out

    def delta_weight(self):
        """Scaled update ``(alpha/r) dW`` as a dense matrix."""
        check_is_fitted(self, "params_")
        return self.config_.scale * materialize(self.params_, self.config_)
