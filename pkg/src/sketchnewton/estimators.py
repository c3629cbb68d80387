"""scikit-learn style estimators around the sketched Newton solver."""

from __future__ import annotations

import numpy as np
from scipy.special import expit, softmax
from sklearn.base import BaseEstimator, ClassifierMixin, RegressorMixin
from sklearn.utils.multiclass import check_classification_targets
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .problems import Dataset, LogisticProblem, RidgeProblem, SoftmaxProblem
from .simulator import SimExecutor, StragglerModel
from .solvers import Mode, SolverConfig, Termination, solve

__all__ = [
    "SketchedNewtonClassifier",
    "SketchedNewtonRegressor",
    "SketchedSoftmaxClassifier",
]


class _SketchedNewtonBase(BaseEstimator):
    """Shared fit plumbing; samples arrive as rows (``n x d``) like the rest of sklearn."""

    _mode = Mode.STRONGLY_CONVEX

    def __init__(
        self,
        lam=1e-3,
        fit_intercept=True,
        hessian_mode="oversketched",
        sketch_m=None,
        sketch_b=None,
        sketch_e=None,
        max_iter=50,
        tol=1e-8,
        line_search=True,
        straggler_prob=0.02,
        random_state=0,
    ):
        self.lam = lam
        self.fit_intercept = fit_intercept
        self.hessian_mode = hessian_mode
        self.sketch_m = sketch_m
        self.sketch_b = sketch_b
        self.sketch_e = sketch_e
        self.max_iter = max_iter
        self.tol = tol
        self.line_search = line_search
        self.straggler_prob = straggler_prob
        self.random_state = random_state

    def _augment(self, X) -> np.ndarray:
        if self.fit_intercept:
            X = np.hstack([X, np.ones((X.shape[0], 1))])
        return X

    def _solve(self, problem):
        seed = int(self.random_state or 0)
        cfg = SolverConfig(
            mode=self._mode,
            hessian_mode=self.hessian_mode,
            sketch_m=self.sketch_m,
            sketch_b=self.sketch_b,
            sketch_e=self.sketch_e,
            max_iters=self.max_iter,
            grad_tol=self.tol,
            line_search=self.line_search,
            seed=seed,
        )
        executor = SimExecutor(StragglerModel(straggler_prob=self.straggler_prob, seed=seed))
        trace = solve(problem, cfg, executor)
        self.trace_ = trace
        self.n_iter_ = trace.iterations
        self.converged_ = trace.termination is Termination.CONVERGED
        return trace.final_w

    def _split(self, w: np.ndarray, n_features: int):
        """Column-per-output weights and intercepts from a flat ``d`` or ``d*K`` vector."""
        d = n_features + int(self.fit_intercept)
        W = w.reshape(-1, d).T
        if self.fit_intercept:
            return W[:-1], W[-1]
        return W, np.zeros(W.shape[1])

    def _decision(self, X) -> np.ndarray:
        check_is_fitted(self, "coef_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, expected {self.n_features_in_}")
        return X @ self.coef_.T + self.intercept_


class SketchedNewtonClassifier(ClassifierMixin, _SketchedNewtonBase):
    """Binary L2-regularized logistic regression.

    The intercept (if any) is an extra constant feature and is regularized along
    with the weights.
    """

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=np.float64)
        check_classification_targets(y)
        self.classes_, codes = np.unique(y, return_inverse=True)
        if len(self.classes_) != 2:
            raise ValueError(f"need exactly 2 classes, got {len(self.classes_)}")
        self.n_features_in_ = X.shape[1]
        data = Dataset(self._augment(X).T, 2.0 * codes - 1.0, "logistic")
        w = self._solve(LogisticProblem(data, lam=self.lam))
        coef, icpt = self._split(w, X.shape[1])
        self.coef_, self.intercept_ = coef.T, icpt
        return self

    def decision_function(self, X):
        return self._decision(X).ravel()

    def predict_proba(self, X):
        p = expit(self.decision_function(X))
        return np.column_stack([1.0 - p, p])

    def predict(self, X):
        scores = self.decision_function(X)
        return self.classes_[(scores > 0).astype(int)]


class SketchedSoftmaxClassifier(ClassifierMixin, _SketchedNewtonBase):
    """Unregularized multinomial logistic regression fit in weakly convex mode.

    ``lam`` is accepted for interface symmetry and ignored: the objective has no
    regularizer, so the pseudo-inverse step picks the minimum-norm direction.
    """

    _mode = Mode.WEAKLY_CONVEX

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=np.float64)
        check_classification_targets(y)
        self.classes_, codes = np.unique(y, return_inverse=True)
        K = len(self.classes_)
        if K < 2:
            raise ValueError("need at least 2 classes")
        self.n_features_in_ = X.shape[1]
        Y = np.zeros((K, X.shape[0]))
        Y[codes, np.arange(X.shape[0])] = 1.0
        w = self._solve(SoftmaxProblem(Dataset(self._augment(X).T, Y, "softmax")))
        coef, icpt = self._split(w, X.shape[1])
        self.coef_, self.intercept_ = coef.T, icpt
        return self

    def predict_proba(self, X):
        return softmax(self._decision(X), axis=1)

    def predict(self, X):
        scores = self._decision(X)
        return self.classes_[np.argmax(scores, axis=1)]


class SketchedNewtonRegressor(RegressorMixin, _SketchedNewtonBase):
    """Ridge regression ``(1/2n) ||X w - y||^2 + (lam/2) ||w||^2``."""

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=np.float64, y_numeric=True)
        self.n_features_in_ = X.shape[1]
        w = self._solve(RidgeProblem(Dataset(self._augment(X).T, y, "ridge"), lam=self.lam))
        coef, icpt = self._split(w, X.shape[1])
        self.coef_, self.intercept_ = coef[:, 0], float(icpt[0])
        return self

    def predict(self, X):
        return self._decision(X)
