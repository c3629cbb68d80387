"""Distributed approximate Gram matrices ``A^T S S^T A`` on the simulated pool.

Two phases run through the executor:

* sketch: one task per Count-Sketch block computes ``S_i^T A``; all ``N + e`` are
  awaited.
* gram: for every ``b x b`` output tile, ``N + e`` tasks each multiply one band of
  the sketched factor with itself; the tile is reduced from whichever ``N`` return
  first and scaled by ``1/N``.

Reduction is treated as instantaneous master work.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .linalg import as_matrix
from .simulator import SimExecutor, Task
from .sketching import OverSketchSpec, apply_block_left

__all__ = [
    "GramStats",
    "HessianStats",
    "SketchedFactor",
    "exact_gram",
    "gram_phase",
    "oversketched_hessian",
    "sketch_phase",
]

_ids = itertools.count()


@dataclass(frozen=True, eq=False)
class SketchedFactor:
    """Stacked ``S_i^T A`` bands, ``(N + e) * b`` rows by ``d`` columns."""

    tilde: np.ndarray
    spec: OverSketchSpec

    def band(self, i: int) -> np.ndarray:
        b = self.spec.b
        return self.tilde[i * b:(i + 1) * b]


@dataclass(frozen=True)
class GramStats:
    start: float
    clock: float
    tile_clocks: dict
    survivors: dict
    tasks: int

    @property
    def elapsed(self) -> float:
        return self.clock - self.start


@dataclass(frozen=True)
class HessianStats:
    sketch_start: float
    sketch_clock: float
    gram: GramStats
    tasks: int

    @property
    def sketch_time(self) -> float:
        return self.sketch_clock - self.sketch_start

    @property
    def gram_time(self) -> float:
        return self.gram.elapsed

    @property
    def total_time(self) -> float:
        return self.gram.clock - self.sketch_start


def _sketch_task(A: np.ndarray, block) -> np.ndarray:
    return apply_block_left(block, A)


def sketch_phase(A, spec: OverSketchSpec, executor: SimExecutor) -> tuple[SketchedFactor, float]:
    """Returns the sketched factor and the virtual time the last block landed."""
    A = as_matrix(A)
    if A.shape[0] != spec.n:
        raise ValueError(f"sketch expects {spec.n} rows, A has {A.shape[0]}")
    key = executor.store.put(f"sketch-input/{next(_ids)}", A)
    flops = 2.0 * A.shape[0] * A.shape[1]
    tasks = [Task(_sketch_task, (blk,), flops, (key,), f"sketch[{i}]") for i, blk in enumerate(spec.blocks)]
    handles = executor.submit(tasks)
    done, clock = executor.await_all(handles)
    bands = [h.result() for h in sorted(done, key=lambda h: h.task_id)]
    executor.store.delete(key)
    return SketchedFactor(np.vstack(bands), spec), clock


def _tile_product(band: np.ndarray, p: int, q: int, b: int) -> np.ndarray:
    return band[:, p * b:(p + 1) * b].T @ band[:, q * b:(q + 1) * b]


def gram_phase(factor: SketchedFactor, executor: SimExecutor) -> tuple[np.ndarray, GramStats]:
    """Blocked ``(1/N) sum_{i in survivors} band_i^T band_i`` with per-tile early stop."""
    spec = factor.spec
    b, N, total = spec.b, spec.N, spec.N + spec.e
    d = factor.tilde.shape[1]
    g = -(-d // b)
    prefix = f"gram/{next(_ids)}"
    keys = []
    for i in range(total):
        band = np.zeros((b, g * b))
        band[:, :d] = factor.band(i)
        keys.append(executor.store.put(f"{prefix}/{i}", band))
    tiles = [(p, q) for p in range(g) for q in range(g)]
    tasks = [
        Task(_tile_product, (p, q, b), 2.0 * b**3, (keys[i],), f"tile[{p},{q}][{i}]")
        for (p, q) in tiles
        for i in range(total)
    ]
    start = executor.now
    handles = executor.submit(tasks)
    H = np.zeros((g * b, g * b))
    tile_clocks, survivors = {}, {}
    for t, (p, q) in enumerate(tiles):
        group = handles[t * total:(t + 1) * total]
        first, clock = executor.await_first_k(group, N)
        used = sorted(h.task_id - t * total for h in first)
        acc = np.zeros((b, b))
        for i in used:
            acc += group[i].result()
        H[p * b:(p + 1) * b, q * b:(q + 1) * b] = acc / N
        tile_clocks[(p, q)] = clock
        survivors[(p, q)] = tuple(used)
    executor.store.delete(*keys)
    H = H[:d, :d]
    H = (H + H.T) / 2.0
    end = max(tile_clocks.values()) if tile_clocks else start
    return H, GramStats(start, end, tile_clocks, survivors, len(tasks))


def oversketched_hessian(A, spec: OverSketchSpec, executor: SimExecutor) -> tuple[np.ndarray, HessianStats]:
    """``A^T S S^T A`` with ``S`` the ``1/sqrt(N)``-scaled block sketch in ``spec``."""
    before = executor.tasks_submitted
    start = executor.now
    factor, sketch_clock = sketch_phase(A, spec, executor)
    H, gram = gram_phase(factor, executor)
    return H, HessianStats(start, sketch_clock, gram, executor.tasks_submitted - before)


def _chunk_product(A: np.ndarray, r: int, p: int, q: int, b: int) -> np.ndarray:
    rows = A[r * b:(r + 1) * b]
    return rows[:, p * b:(p + 1) * b].T @ rows[:, q * b:(q + 1) * b]


def exact_gram(A, executor: SimExecutor, b: int) -> tuple[np.ndarray, GramStats]:
    """Exact ``A^T A`` from ``b x b`` block products, waiting for every worker."""
    A = as_matrix(A)
    n, d = A.shape
    g = -(-d // b)
    chunks = max(1, -(-n // b))
    padded = np.zeros((chunks * b, g * b))
    padded[:n, :d] = A
    key = executor.store.put(f"exact/{next(_ids)}", padded)
    tiles = [(p, q) for p in range(g) for q in range(g)]
    tasks = [
        Task(_chunk_product, (r, p, q, b), 2.0 * b**3, (key,), f"exact[{p},{q}][{r}]")
        for (p, q) in tiles
        for r in range(chunks)
    ]
    start = executor.now
    handles = executor.submit(tasks)
    _, clock = executor.await_all(handles)
    H = np.zeros((g * b, g * b))
    for t, (p, q) in enumerate(tiles):
        acc = np.zeros((b, b))
        for r in range(chunks):
            acc += handles[t * chunks + r].result()
        H[p * b:(p + 1) * b, q * b:(q + 1) * b] = acc
    executor.store.delete(key)
    H = H[:d, :d]
    H = (H + H.T) / 2.0
    tile_clocks = {tile: clock for tile in tiles}
    survivors = {tile: tuple(range(chunks)) for tile in tiles}
    return H, GramStats(start, clock, tile_clocks, survivors, len(tasks))
