"""Count-Sketch blocks and the over-provisioned block sketch built from them.

Randomness is counter-based: block ``i`` of a sketch with master seed ``s`` draws from
``Philox(SeedSequence([s, i]))``, so every block is reproducible on its own and
independent of how many blocks were requested.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "CountSketchBlock",
    "OverSketchSpec",
    "apply_block_left",
    "build_count_sketch",
    "build_oversketch",
    "default_sketch_params",
    "materialize_block",
    "materialize_oversketch",
]


def _philox(entropy) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))


@dataclass(frozen=True, eq=False)
class CountSketchBlock:
    """An ``n x b`` Count-Sketch matrix stored as its hash and sign maps."""

    n: int
    b: int
    bucket: np.ndarray
    sign: np.ndarray
    seed: object = None

    def __post_init__(self):
        self.bucket.setflags(write=False)
        self.sign.setflags(write=False)


def build_count_sketch(n: int, b: int, seed) -> CountSketchBlock:
    if n < 1 or b < 1:
        raise ValueError(f"need n >= 1 and b >= 1, got n={n}, b={b}")
    rng = _philox(seed)
    bucket = rng.integers(0, b, size=n, dtype=np.int64)
    sign = np.where(rng.integers(0, 2, size=n) == 1, 1.0, -1.0)
    return CountSketchBlock(int(n), int(b), bucket, sign, seed)


def apply_block_left(block: CountSketchBlock, A) -> np.ndarray:
    """Compute ``S^T A`` by streaming rows of ``A`` into their buckets.

    Row ``j`` of ``A`` is added, with sign ``sigma(j)``, into output row ``h(j)`` in
    ascending ``j`` order; the result is bit-for-bit reproducible.
    """
    A = np.asarray(A, dtype=np.float64)
    if A.ndim != 2 or A.shape[0] != block.n:
        raise ValueError(f"dimension mismatch: sketch has n={block.n}, A has shape {A.shape}")
    out = np.zeros((block.b, A.shape[1]))
    # ufunc.at is unbuffered and visits indices in order.
    np.add.at(out, block.bucket, A * block.sign[:, None])
    return out


def materialize_block(block: CountSketchBlock) -> np.ndarray:
    S = np.zeros((block.n, block.b))
    S[np.arange(block.n), block.bucket] = block.sign
    return S


@dataclass(frozen=True, eq=False)
class OverSketchSpec:
    """``N + e`` independent Count-Sketch blocks of width ``b`` over ``n`` rows.

    Any ``N`` of the blocks form the sketch; the ``1/sqrt(N)`` scale is applied once
    when products are reduced, not stored in the blocks.
    """

    n: int
    N: int
    e: int
    b: int
    master_seed: int
    blocks: tuple[CountSketchBlock, ...] = field(repr=False)

    @property
    def m(self) -> int:
        return self.N * self.b

    @property
    def total_width(self) -> int:
        return (self.N + self.e) * self.b


def build_oversketch(n: int, N: int, e: int, b: int, master_seed: int) -> OverSketchSpec:
    if N < 1 or e < 0:
        raise ValueError(f"need N >= 1 and e >= 0, got N={N}, e={e}")
    blocks = tuple(build_count_sketch(n, b, (int(master_seed), i)) for i in range(N + e))
    return OverSketchSpec(int(n), int(N), int(e), int(b), int(master_seed), blocks)


def materialize_oversketch(spec: OverSketchSpec, used=None) -> np.ndarray:
    """Dense ``n x (len(used) * b)`` sketch ``(1/sqrt(N)) [S_i for i in used]``."""
    if used is None:
        used = range(spec.N)
    used = list(used)
    return np.hstack([materialize_block(spec.blocks[i]) for i in used]) / math.sqrt(spec.N)


def default_sketch_params(d: int, multiple: int = 10, straggler_fraction: float = 0.1) -> tuple[int, int, int]:
    """Pick ``(m, b, e)`` with ``m = multiple * d`` and ``N = m / b`` in [6, 16].

    ``N = 10`` is preferred; ``e = ceil(straggler_fraction * N)``.
    """
    m = multiple * d
    for N in (10, 8, 12, 9, 11, 16, 6, 15, 14, 13, 7):
        if m % N == 0:
            break
    else:
        N = 10
        m = N * -(-m // N)
    b = m // N
    e = math.ceil(straggler_fraction * N)
    return m, b, e
