from __future__ import annotations

import numpy as np
from scipy.special import logsumexp, softmax

from ..simulator import SimExecutor
from .base import Dataset, Problem

__all__ = ["SoftmaxProblem"]


class SoftmaxProblem(Problem):
    """Unregularized multinomial negative log-likelihood.

    ``f(W) = sum_n [logsumexp_k(w_k^T x_n) - sum_k y_kn w_k^T x_n]`` with the ``d x K``
    weight matrix flattened class by class: ``w[k*d:(k+1)*d]`` is ``w_k``. The
    objective is invariant to adding one vector to every ``w_k``, so the Hessian is
    always singular.
    """

    def __init__(self, data: Dataset, n_shards: int = 8, coded_blocks: int = 16):
        if data.kind != "softmax":
            raise ValueError(f"SoftmaxProblem needs a softmax dataset, got {data.kind!r}")
        super().__init__(data, n_shards, coded_blocks)
        self._alpha_cache: tuple[bytes, np.ndarray] | None = None

    @property
    def K(self) -> int:
        return self.data.K

    @property
    def dim(self) -> int:
        return self.data.d * self.data.K

    def unflatten(self, w) -> np.ndarray:
        """``d x K`` weight matrix from the flat class-major vector."""
        return np.asarray(w, dtype=np.float64).reshape(self.K, self.data.d).T

    @staticmethod
    def flatten(W) -> np.ndarray:
        return np.asarray(W, dtype=np.float64).T.ravel()

    def shard_value(self, sl, w):
        X, Y = self.data.X[:, sl], self.data.y[:, sl]
        alpha = X.T @ self.unflatten(w)
        return float(np.sum(logsumexp(alpha, axis=1)) - np.sum(Y.T * alpha))

    def shard_gradient(self, sl, w):
        X, Y = self.data.X[:, sl], self.data.y[:, sl]
        alpha = X.T @ self.unflatten(w)
        beta = softmax(alpha, axis=1) - Y.T
        return self.flatten(X @ beta)

    def scores(self, w, executor: SimExecutor | None = None) -> np.ndarray:
        """``alpha = X^T W`` (``n x K``), cached for the Hessian step."""
        w = self._check_w(w)
        alpha = self._matvec(self.coded_Xt, self.data.X.T, self.unflatten(w), executor)
        self._alpha_cache = (w.tobytes(), alpha)
        return alpha

    def _cached_scores(self, w) -> np.ndarray:
        if self._alpha_cache is not None and self._alpha_cache[0] == w.tobytes():
            return self._alpha_cache[1]
        return self.data.X.T @ self.unflatten(w)

    def gradient(self, w, executor: SimExecutor | None = None) -> np.ndarray:
        w = self._check_w(w)
        alpha = self.scores(w, executor)
        beta = softmax(alpha, axis=1) - self.data.y.T
        return self.flatten(self._matvec(self.coded_X, self.data.X, beta, executor))

    def hessian_sqrt(self, w) -> np.ndarray:
        """``nK x dK`` factor ``A`` with ``A^T A`` equal to the full Hessian.

        Sample ``n`` contributes ``K`` rows ``L_n[k, i] * x_n`` in column block ``i``,
        where ``L_n`` is the PSD square root of ``diag(s_n) - s_n s_n^T``.
        """
        w = self._check_w(w)
        probs = softmax(self._cached_scores(w), axis=1)
        lam = probs[:, :, None] * np.eye(self.K) - probs[:, :, None] * probs[:, None, :]
        evals, evecs = np.linalg.eigh(lam)
        root = np.sqrt(np.clip(evals, 0.0, None))
        L = np.einsum("nij,nj,nkj->nik", evecs, root, evecs)
        n, d = self.data.n, self.data.d
        A = np.einsum("nki,dn->nkid", L, self.data.X)
        return A.reshape(n * self.K, self.K * d)
