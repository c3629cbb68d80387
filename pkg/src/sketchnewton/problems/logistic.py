from __future__ import annotations

import numpy as np
from scipy.special import expit

from ..simulator import SimExecutor
from .base import Dataset, Problem

__all__ = ["LogisticProblem"]


class LogisticProblem(Problem):
    """``f(w) = (1/n) sum_i log(1 + exp(-y_i w^T x_i)) + (lam/2) ||w||^2``.

    The gradient runs as two coded matrix-vector products (``X^T w`` then ``X beta``).
    The Hessian square root is ``sqrt(diag(gamma)) X^T`` with
    ``gamma_i = sigma(y_i alpha_i) sigma(-y_i alpha_i)``; the ``1/n`` scale and
    ``lam * I`` are applied at the master, never sketched.
    """

    def __init__(self, data: Dataset, lam: float = 1e-3, n_shards: int = 8, coded_blocks: int = 16):
        if data.kind != "logistic":
            raise ValueError(f"LogisticProblem needs a logistic dataset, got {data.kind!r}")
        if lam < 0:
            raise ValueError(f"lam must be >= 0, got {lam}")
        super().__init__(data, n_shards, coded_blocks)
        self.lam = float(lam)
        self.ridge = self.lam
        self.hessian_scale = 1.0 / data.n
        self._alpha_cache: tuple[bytes, np.ndarray] | None = None

    @property
    def dim(self) -> int:
        return self.data.d

    def shard_value(self, sl, w):
        X, y = self.data.X[:, sl], self.data.y[sl]
        return float(np.sum(np.logaddexp(0.0, -y * (w @ X)))) / self.data.n

    def shard_gradient(self, sl, w):
        X, y = self.data.X[:, sl], self.data.y[sl]
        beta = -y * expit(-y * (w @ X))
        return (X @ beta) / self.data.n

    def margins(self, w, executor: SimExecutor | None = None) -> np.ndarray:
        """``alpha = X^T w``, cached for the Hessian step at the same ``w``."""
        w = self._check_w(w)
        alpha = self._matvec(self.coded_Xt, self.data.X.T, w, executor)
        self._alpha_cache = (w.tobytes(), alpha)
        return alpha

    def _cached_margins(self, w) -> np.ndarray:
        if self._alpha_cache is not None and self._alpha_cache[0] == w.tobytes():
            return self._alpha_cache[1]
        return self.data.X.T @ w

    def gradient(self, w, executor: SimExecutor | None = None) -> np.ndarray:
        w = self._check_w(w)
        y = self.data.y
        alpha = self.margins(w, executor)
        beta = -y * expit(-y * alpha)
        g = self._matvec(self.coded_X, self.data.X, beta, executor)
        return g / self.data.n + self.lam * w

    def curvature(self, w) -> np.ndarray:
        """Per-sample weights ``gamma_i`` in (0, 1/4]."""
        w = self._check_w(w)
        ya = self.data.y * self._cached_margins(w)
        return expit(ya) * expit(-ya)

    def hessian_sqrt(self, w) -> np.ndarray:
        return np.sqrt(self.curvature(w))[:, None] * self.data.X.T
