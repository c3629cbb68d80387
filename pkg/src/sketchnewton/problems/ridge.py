from __future__ import annotations

import numpy as np

from ..simulator import SimExecutor
from .base import Dataset, Problem

__all__ = ["RidgeProblem"]


class RidgeProblem(Problem):
    """``f(w) = (1/2n) ||X^T w - y||^2 + (lam/2) ||w||^2``; Hessian ``X X^T / n + lam I``."""

    def __init__(self, data: Dataset, lam: float = 1e-3, n_shards: int = 8, coded_blocks: int = 16):
        if data.kind not in ("ridge", "logistic"):
            raise ValueError(f"RidgeProblem needs real labels, got a {data.kind!r} dataset")
        if lam < 0:
            raise ValueError(f"lam must be >= 0, got {lam}")
        super().__init__(data, n_shards, coded_blocks)
        self.lam = float(lam)
        self.ridge = self.lam
        self.hessian_scale = 1.0 / data.n

    @property
    def dim(self) -> int:
        return self.data.d

    def shard_value(self, sl, w):
        r = w @ self.data.X[:, sl] - self.data.y[sl]
        return 0.5 * float(r @ r) / self.data.n

    def shard_gradient(self, sl, w):
        X = self.data.X[:, sl]
        return X @ (w @ X - self.data.y[sl]) / self.data.n

    def gradient(self, w, executor: SimExecutor | None = None) -> np.ndarray:
        w = self._check_w(w)
        beta = self._matvec(self.coded_Xt, self.data.X.T, w, executor)
        g = self._matvec(self.coded_X, self.data.X, beta - self.data.y, executor)
        return g / self.data.n + self.lam * w

    def hessian_sqrt(self, w) -> np.ndarray:
        return self.data.X.T

    def closed_form(self) -> np.ndarray:
        """Normal-equations minimizer (requires ``lam > 0`` or full-rank ``X``)."""
        X, n = self.data.X, self.data.n
        return np.linalg.solve(X @ X.T / n + self.lam * np.eye(self.dim), X @ self.data.y / n)
