"""Straggler-resilient matrix-vector products with a 2-D product code.

The row blocks of ``A`` are laid out on an ``s x s`` grid. Workers get the ``s**2``
systematic blocks, one parity block per grid row, one per grid column, and a corner
block. The master waits until the received results can be peeled, then solves for
the missing systematic results one parity constraint at a time.

Task numbering::

    0 .. T-1          systematic block (r, c) at index r * s + c
    T .. T+s-1        row parities
    T+s .. T+2s-1     column parities
    T+2s              corner (sum of every systematic block)
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Mapping, Sequence

import numpy as np

from .linalg import as_matrix
from .simulator import SimExecutor, Task, TaskHandle

__all__ = [
    "CodeLayout",
    "CodedMatrix",
    "CollectionStats",
    "Undecodable",
    "coded_matvec",
    "decodable_check",
    "encode_2d",
    "erasure_pattern",
    "peel_decode",
]

_upload_ids = itertools.count()


@dataclass(frozen=True)
class CodeLayout:
    s: int

    @property
    def T(self) -> int:
        return self.s * self.s

    @property
    def n_tasks(self) -> int:
        return self.T + 2 * self.s + 1

    def systematic(self, r: int, c: int) -> int:
        return r * self.s + c

    def row_parity(self, r: int) -> int:
        return self.T + r

    def col_parity(self, c: int) -> int:
        return self.T + self.s + c

    @property
    def corner(self) -> int:
        return self.T + 2 * self.s

    @cached_property
    def constraints(self) -> tuple[tuple[tuple[int, ...], tuple[float, ...]], ...]:
        """Parity checks as ``(members, signs)`` with ``sum(sign * y) == 0``.

        Members are listed in ascending task index.
        """
        s, out = self.s, []
        for r in range(s):
            out.append(([self.systematic(r, c) for c in range(s)], self.row_parity(r)))
        for c in range(s):
            out.append(([self.systematic(r, c) for r in range(s)], self.col_parity(c)))
        out.append(([self.row_parity(r) for r in range(s)], self.corner))
        out.append(([self.col_parity(c) for c in range(s)], self.corner))
        out.append((list(range(self.T)), self.corner))
        return tuple(
            (tuple(parts) + (total,), (1.0,) * len(parts) + (-1.0,)) for parts, total in out
        )


@dataclass(frozen=True)
class Undecodable:
    """Peeling stalled; ``missing`` holds the systematic blocks still unknown."""

    missing: frozenset[int]

    def __bool__(self) -> bool:
        return False


@dataclass(eq=False)
class CodedMatrix:
    rows: int
    cols: int
    b: int
    layout: CodeLayout
    blocks: np.ndarray  # (n_tasks, b, cols): systematic blocks then parities
    _uploads: dict = field(default_factory=dict, init=False, repr=False)

    @property
    def s(self) -> int:
        return self.layout.s

    @property
    def systematic(self) -> np.ndarray:
        return self.blocks[: self.layout.T]

    @property
    def row_parities(self) -> np.ndarray:
        T, s = self.layout.T, self.layout.s
        return self.blocks[T:T + s]

    @property
    def col_parities(self) -> np.ndarray:
        T, s = self.layout.T, self.layout.s
        return self.blocks[T + s:T + 2 * s]

    @property
    def corner_parity(self) -> np.ndarray:
        return self.blocks[self.layout.corner]

    def assemble(self, sys_results: Sequence[np.ndarray]) -> np.ndarray:
        return np.concatenate(list(sys_results), axis=0)[: self.rows]


def _ordered_sum(parts) -> np.ndarray:
    parts = iter(parts)
    acc = np.array(next(parts), dtype=np.float64, copy=True)
    for p in parts:
        acc += p
    return acc


def encode_2d(A, b: int) -> CodedMatrix:
    """Split ``A`` into row blocks of height ``b`` and add product-code parities.

    The block count is padded with zero blocks up to the next perfect square.
    """
    A = as_matrix(A)
    if b < 1:
        raise ValueError(f"block height must be >= 1, got {b}")
    rows, cols = A.shape
    n_blocks = max(1, -(-rows // b))
    s = math.isqrt(n_blocks - 1) + 1 if n_blocks > 1 else 1
    layout = CodeLayout(s)
    blocks = np.zeros((layout.n_tasks, b, cols))
    padded = np.zeros((layout.T * b, cols))
    padded[:rows] = A
    blocks[: layout.T] = padded.reshape(layout.T, b, cols)
    for r in range(s):
        blocks[layout.row_parity(r)] = _ordered_sum(blocks[layout.systematic(r, c)] for c in range(s))
    for c in range(s):
        blocks[layout.col_parity(c)] = _ordered_sum(blocks[layout.systematic(r, c)] for r in range(s))
    blocks[layout.corner] = _ordered_sum(blocks[i] for i in range(layout.T))
    blocks.setflags(write=False)
    return CodedMatrix(rows, cols, b, layout, blocks)


def _peel(layout: CodeLayout, received, values: dict | None):
    """Shared peeling loop. With ``values is None`` it only tracks knowledge."""
    known = set(received)
    target = set(range(layout.T))
    steps = 0
    progress = True
    while progress and not target <= known:
        progress = False
        for members, signs in layout.constraints:
            unknown = [m for m in members if m not in known]
            if len(unknown) != 1:
                continue
            u = unknown[0]
            if values is not None:
                terms = (sg * values[m] for m, sg in zip(members, signs) if m != u)
                usign = signs[members.index(u)]
                values[u] = -usign * _ordered_sum(terms)
            known.add(u)
            steps += 1
            progress = True
    return known, steps


def decodable_check(received, layout: CodeLayout) -> bool:
    """True iff peeling from the ``received`` task set recovers every systematic block."""
    known, _ = _peel(layout, _as_index_set(received, layout), None)
    return set(range(layout.T)) <= known


def peel_decode(partials: Mapping[int, np.ndarray], layout: CodeLayout, rows: int | None = None):
    """Recover the full product from a subset of per-task results.

    Returns the stacked systematic results (trimmed to ``rows``) or an
    :class:`Undecodable` carrying the systematic blocks peeling could not reach.
    """
    return _decode(partials, layout, rows)[0]


def _decode(partials, layout, rows):
    values = dict(partials)
    known, steps = _peel(layout, list(values), values)
    missing = frozenset(set(range(layout.T)) - known)
    if missing:
        return Undecodable(missing), steps
    y = np.concatenate([values[i] for i in range(layout.T)], axis=0)
    return (y if rows is None else y[:rows]), steps


def erasure_pattern(missing, layout: CodeLayout) -> np.ndarray:
    """Boolean received-mask with every task in ``missing`` erased."""
    received = np.ones(layout.n_tasks, dtype=bool)
    received[list(missing)] = False
    return received


def _as_index_set(received, layout: CodeLayout) -> set[int]:
    """Accept a boolean mask over all tasks or an iterable of received task ids."""
    if isinstance(received, np.ndarray) and received.dtype == bool:
        if received.shape != (layout.n_tasks,):
            raise ValueError(f"erasure pattern must have {layout.n_tasks} entries, got {received.shape}")
        return set(np.flatnonzero(received).tolist())
    return {int(i) for i in received}


@dataclass(frozen=True)
class CollectionStats:
    start: float
    clock: float
    tasks: int
    received: int
    peel_steps: int

    @property
    def elapsed(self) -> float:
        return self.clock - self.start


def _block_product(block: np.ndarray, x: np.ndarray) -> np.ndarray:
    return block @ x


def upload(C: CodedMatrix, executor: SimExecutor) -> list[str]:
    """Place each coded block in the executor's store once; returns the keys."""
    cached = C._uploads.get(id(executor.store))
    if cached is not None and cached[0] is executor.store:
        return cached[1]
    prefix = f"coded/{next(_upload_ids)}"
    names = [executor.store.put(f"{prefix}/{i}", C.blocks[i]) for i in range(C.layout.n_tasks)]
    C._uploads[id(executor.store)] = (executor.store, names)
    return names


def coded_matvec(C: CodedMatrix, x, executor: SimExecutor) -> tuple[np.ndarray, CollectionStats]:
    """Compute ``A @ x`` (``x`` a vector or a matrix) on the simulated pool."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[0] != C.cols:
        raise ValueError(f"dimension mismatch: A has {C.cols} columns, x has {x.shape[0]} rows")
    keys = upload(C, executor)
    width = 1 if x.ndim == 1 else x.shape[1]
    flops = 2.0 * C.b * C.cols * width
    tasks = [Task(_block_product, (x,), flops, (k,), f"matvec[{i}]") for i, k in enumerate(keys)]
    start = executor.now
    handles = executor.submit(tasks)
    layout = C.layout

    def ready(log: list[TaskHandle]) -> bool:
        return decodable_check((h.task_id for h in log), layout)

    log, clock = executor.await_predicate(handles, ready)
    partials = {h.task_id: h.result() for h in log}
    y, steps = _decode(partials, layout, C.rows)
    return y, CollectionStats(start, clock, len(handles), len(log), steps)
