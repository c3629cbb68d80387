from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from ..coding import CodedMatrix, coded_matvec, encode_2d
from ..simulator import SimExecutor, Task

__all__ = ["Dataset", "Problem"]

_ids = itertools.count()


@dataclass(frozen=True, eq=False)
class Dataset:
    """Samples stored as columns: ``X`` is ``d x n``.

    ``y`` is a ``(n,)`` vector of +-1 labels (logistic) or reals (ridge), or a
    ``K x n`` one-hot matrix (softmax).
    """

    X: np.ndarray
    y: np.ndarray
    kind: str = "logistic"

    def __post_init__(self):
        X = np.asarray(self.X, dtype=np.float64)
        y = np.asarray(self.y, dtype=np.float64)
        if X.ndim != 2:
            raise ValueError(f"X must be d x n, got shape {X.shape}")
        if not np.all(np.isfinite(X)):
            raise ValueError("X contains NaN or Inf")
        if self.kind == "softmax":
            if y.ndim != 2 or y.shape[1] != X.shape[1]:
                raise ValueError(f"softmax labels must be K x n one-hot, got shape {y.shape}")
            if y.shape[0] < 2:
                raise ValueError("softmax needs K >= 2 classes")
            if not (np.all((y == 0) | (y == 1)) and np.all(y.sum(axis=0) == 1)):
                raise ValueError("softmax labels must be one-hot columns")
        else:
            if y.shape != (X.shape[1],):
                raise ValueError(f"labels must have shape ({X.shape[1]},), got {y.shape}")
            if self.kind == "logistic" and not np.all(np.abs(y) == 1):
                raise ValueError("logistic labels must be +1 or -1")
            if self.kind not in ("logistic", "ridge"):
                raise ValueError(f"unknown dataset kind {self.kind!r}")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)

    @property
    def d(self) -> int:
        return self.X.shape[0]

    @property
    def n(self) -> int:
        return self.X.shape[1]

    @property
    def K(self) -> int:
        return self.y.shape[0] if self.kind == "softmax" else 1


def _coded_block_height(rows: int, target_blocks: int) -> int:
    return max(1, -(-rows // target_blocks))


class Problem:
    """Objective ``f = sum_i f_i + r`` over sample shards plus a master-side regularizer.

    Subclasses define the per-shard value/gradient and the Hessian square root; the
    Hessian is ``hessian_scale * A^T A + ridge * I`` for ``A = hessian_sqrt(w)``.
    """

    hessian_scale = 1.0
    ridge = 0.0

    def __init__(self, data: Dataset, n_shards: int = 8, coded_blocks: int = 16):
        self.data = data
        self.n_shards = max(1, min(int(n_shards), data.n))
        bounds = np.linspace(0, data.n, self.n_shards + 1).round().astype(int)
        self.shards = [slice(int(a), int(b)) for a, b in zip(bounds[:-1], bounds[1:])]
        self.coded_X = encode_2d(data.X, _coded_block_height(data.d, coded_blocks))
        self.coded_Xt = encode_2d(data.X.T, _coded_block_height(data.n, coded_blocks))
        self._shard_keys: dict = {}

    # -- to be provided by subclasses -------------------------------------------
    @property
    def dim(self) -> int:
        raise NotImplementedError

    def shard_value(self, sl: slice, w: np.ndarray) -> float:
        raise NotImplementedError

    def shard_gradient(self, sl: slice, w: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def gradient(self, w, executor: SimExecutor | None = None) -> np.ndarray:
        raise NotImplementedError

    def hessian_sqrt(self, w) -> np.ndarray:
        raise NotImplementedError

    def reg_value(self, w: np.ndarray) -> float:
        return 0.5 * self.ridge * float(w @ w)

    def reg_gradient(self, w: np.ndarray) -> np.ndarray:
        return self.ridge * w

    # -- shared machinery ---------------------------------------------------------
    def _check_w(self, w) -> np.ndarray:
        w = np.asarray(w, dtype=np.float64)
        if w.shape != (self.dim,):
            raise ValueError(f"expected parameter vector of length {self.dim}, got shape {w.shape}")
        return w

    def value(self, w) -> float:
        w = self._check_w(w)
        return math.fsum(self.shard_value(sl, w) for sl in self.shards) + self.reg_value(w)

    def serial_gradient(self, w) -> np.ndarray:
        w = self._check_w(w)
        g = np.zeros(self.dim)
        for sl in self.shards:
            g += self.shard_gradient(sl, w)
        return g + self.reg_gradient(w)

    def hessian(self, w) -> np.ndarray:
        A = self.hessian_sqrt(w)
        return self.hessian_scale * (A.T @ A) + self.ridge * np.eye(self.dim)

    def _matvec(self, coded: CodedMatrix, plain: np.ndarray, x, executor):
        if executor is None:
            return plain @ x
        y, _ = coded_matvec(coded, x, executor)
        return y

    def _upload_shards(self, executor: SimExecutor) -> list[str]:
        cached = self._shard_keys.get(id(executor.store))
        if cached is not None and cached[0] is executor.store:
            return cached[1]
        prefix = f"shard/{next(_ids)}"
        keys = [executor.store.put(f"{prefix}/{i}", np.array([sl.start, sl.stop])) for i, sl in enumerate(self.shards)]
        self._shard_keys[id(executor.store)] = (executor.store, keys)
        return keys

    def _shard_flops(self, sl: slice, points: int) -> float:
        return 2.0 * self.data.d * self.data.K * (sl.stop - sl.start) * points

    def value_shards(self, w, executor: SimExecutor | None = None) -> float:
        """``f(w)`` assembled from one worker per data shard."""
        w = self._check_w(w)
        return float(self.values_along(w, np.zeros_like(w), (0.0,), executor)[0])

    def values_along(self, w, p, alphas, executor: SimExecutor | None = None) -> np.ndarray:
        """``f(w + alpha p)`` for every alpha; one worker per shard evaluates all points."""
        w, p = self._check_w(w), self._check_w(p)
        points = [w + a * p for a in alphas]

        def work(bounds, pts):
            sl = slice(int(bounds[0]), int(bounds[1]))
            return np.array([self.shard_value(sl, x) for x in pts])

        parts = self._shard_round(work, points, executor)
        return np.array(
            [math.fsum(col) + self.reg_value(x) for col, x in zip(np.asarray(parts).T, points)]
        )

    def gradients_along(self, w, p, alphas, executor: SimExecutor | None = None) -> np.ndarray:
        """``grad f(w + alpha p)`` for every alpha, shape ``(len(alphas), dim)``."""
        w, p = self._check_w(w), self._check_w(p)
        points = [w + a * p for a in alphas]

        def work(bounds, pts):
            sl = slice(int(bounds[0]), int(bounds[1]))
            return np.stack([self.shard_gradient(sl, x) for x in pts])

        parts = self._shard_round(work, points, executor)
        total = np.zeros((len(points), self.dim))
        for part in parts:
            total += part
        return total + np.stack([self.reg_gradient(x) for x in points])

    def _shard_round(self, work, points, executor):
        if executor is None:
            return [work(np.array([sl.start, sl.stop]), points) for sl in self.shards]
        keys = self._upload_shards(executor)
        tasks = [
            Task(work, (points,), self._shard_flops(sl, len(points)), (k,), f"shard[{i}]")
            for i, (sl, k) in enumerate(zip(self.shards, keys))
        ]
        handles = executor.submit(tasks)
        done, _ = executor.await_all(handles)
        return [h.result() for h in sorted(done, key=lambda h: h.task_id)]
