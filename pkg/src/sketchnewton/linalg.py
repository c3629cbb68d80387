"""Dense linear algebra used by the master: blocked views and small local solvers."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "BlockGrid",
    "ConvergenceError",
    "SpectralEstimates",
    "as_matrix",
    "as_vector",
    "block_partition",
    "cg_solve",
    "check_symmetric",
    "estimate_spectrum",
    "matvec",
    "pinv_apply",
]


class ConvergenceError(RuntimeError):
    """An iterative solver stopped before meeting its tolerance."""

    def __init__(self, message: str, residual: float, iterations: int):
        super().__init__(f"{message} (relative residual {residual:.3e} after {iterations} iterations)")
        self.residual = residual
        self.iterations = iterations


def as_matrix(A, name: str = "A") -> np.ndarray:
    """Return ``A`` as a finite 2-D float64 array."""
    A = np.asarray(A, dtype=np.float64)
    if A.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise ValueError(f"{name} contains NaN or Inf")
    return A


def as_vector(x, name: str = "x") -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError(f"{name} must be 1-D, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValueError(f"{name} contains NaN or Inf")
    return x


def check_symmetric(H: np.ndarray, tol: float = 1e-10, name: str = "H") -> None:
    if H.shape[0] != H.shape[1]:
        raise ValueError(f"{name} must be square, got shape {H.shape}")
    scale = max(float(np.max(np.abs(H), initial=0.0)), 1.0)
    if np.max(np.abs(H - H.T), initial=0.0) > tol * scale:
        raise ValueError(f"{name} is not symmetric to {tol:g}")


def matvec(A, x) -> np.ndarray:
    """Reference dense product ``A @ x``."""
    A = as_matrix(A)
    x = np.asarray(x, dtype=np.float64)
    if A.shape[1] != x.shape[0]:
        raise ValueError(f"dimension mismatch: A is {A.shape}, x has length {x.shape[0]}")
    return A @ x


@dataclass(frozen=True)
class BlockGrid:
    """A ``b x b`` tile view of a matrix, zero padded up to a multiple of ``b``."""

    source: np.ndarray
    block_size: int

    @property
    def grid_rows(self) -> int:
        return -(-self.source.shape[0] // self.block_size)

    @property
    def grid_cols(self) -> int:
        return -(-self.source.shape[1] // self.block_size)

    @property
    def padding(self) -> tuple[int, int]:
        b = self.block_size
        return (self.grid_rows * b - self.source.shape[0], self.grid_cols * b - self.source.shape[1])

    def tile(self, i: int, j: int) -> np.ndarray:
        if not (0 <= i < self.grid_rows and 0 <= j < self.grid_cols):
            raise IndexError(f"tile ({i}, {j}) outside {self.grid_rows}x{self.grid_cols} grid")
        b = self.block_size
        out = np.zeros((b, b))
        part = self.source[i * b:(i + 1) * b, j * b:(j + 1) * b]
        out[: part.shape[0], : part.shape[1]] = part
        return out

    def padded(self) -> np.ndarray:
        b = self.block_size
        out = np.zeros((self.grid_rows * b, self.grid_cols * b))
        out[: self.source.shape[0], : self.source.shape[1]] = self.source
        return out

    def reassemble(self) -> np.ndarray:
        """Stitch the tiles back together and strip the padding."""
        b = self.block_size
        rows = [np.hstack([self.tile(i, j) for j in range(self.grid_cols)]) for i in range(self.grid_rows)]
        full = np.vstack(rows) if rows else np.zeros((0, self.grid_cols * b))
        return full[: self.source.shape[0], : self.source.shape[1]]


def block_partition(A, b: int) -> BlockGrid:
    if b < 1:
        raise ValueError(f"block size must be >= 1, got {b}")
    return BlockGrid(as_matrix(A), int(b))


def cg_solve(H, g, tol: float = 1e-10, max_iter: int | None = None) -> np.ndarray:
    """Solve ``H p = g`` for symmetric positive definite ``H`` by conjugate gradients.

    Raises:
        ConvergenceError: if ``||H p - g|| > tol * ||g||`` after ``max_iter`` steps.
    """
    H = as_matrix(H, "H")
    check_symmetric(H)
    g = as_vector(g, "g")
    if H.shape[0] != g.shape[0]:
        raise ValueError(f"dimension mismatch: H is {H.shape}, g has length {g.shape[0]}")
    n = g.shape[0]
    if max_iter is None:
        max_iter = 10 * max(n, 1)
    gnorm = np.linalg.norm(g)
    p = np.zeros(n)
    if gnorm == 0.0:
        return p
    r = g.copy()
    d = r.copy()
    rr = r @ r
    for it in range(1, max_iter + 1):
        Hd = H @ d
        dHd = d @ Hd
        if dHd <= 0.0:
            raise ConvergenceError("H is not positive definite", np.sqrt(rr) / gnorm, it)
        step = rr / dHd
        p += step * d
        r -= step * Hd
        rr_new = r @ r
        if np.sqrt(rr_new) <= tol * gnorm:
            # The recurrence drifts from the true residual; confirm before returning.
            true_res = np.linalg.norm(H @ p - g)
            if true_res <= tol * gnorm:
                return p
            r = g - H @ p
            rr_new = r @ r
            d = r.copy()
            rr = rr_new
            continue
        d = r + (rr_new / rr) * d
        rr = rr_new
    res = np.linalg.norm(H @ p - g) / gnorm
    raise ConvergenceError("conjugate gradients did not converge", float(res), max_iter)


def pinv_apply(H, g, rank_tol: float = 1e-10) -> np.ndarray:
    """Apply the Moore-Penrose pseudo-inverse of a symmetric PSD ``H`` to ``g``.

    Eigenvalues at or below ``rank_tol * lambda_max`` are treated as zero, so the
    result is the minimum-norm least-squares solution and lies in Range(H).
    """
    H = as_matrix(H, "H")
    check_symmetric(H)
    g = as_vector(g, "g")
    if H.shape[0] != g.shape[0]:
        raise ValueError(f"dimension mismatch: H is {H.shape}, g has length {g.shape[0]}")
    evals, evecs = np.linalg.eigh((H + H.T) / 2.0)
    top = evals[-1] if evals.size else 0.0
    if top <= 0.0:
        return np.zeros_like(g)
    keep = evals > rank_tol * top
    V = evecs[:, keep]
    return V @ ((V.T @ g) / evals[keep])


@dataclass(frozen=True)
class SpectralEstimates:
    lambda_min: float
    lambda_max: float
    iterations: tuple[int, int]
    tolerance: float


def _power_iteration(H: np.ndarray, v: np.ndarray, tol: float, max_iter: int) -> tuple[float, int]:
    v = v / np.linalg.norm(v)
    theta = 0.0
    for it in range(1, max_iter + 1):
        Hv = H @ v
        theta = float(v @ Hv)
        res = np.linalg.norm(Hv - theta * v)
        nrm = np.linalg.norm(Hv)
        if nrm == 0.0 or res <= tol * max(abs(theta), np.finfo(float).tiny):
            return theta, it
        v = Hv / nrm
    return theta, max_iter


def estimate_spectrum(H, tol: float = 1e-10, max_iter: int = 200_000, seed: int = 0) -> SpectralEstimates:
    """Extreme eigenvalues of a symmetric PSD matrix by power iteration.

    ``lambda_max`` comes from power iteration on ``H``; ``lambda_min`` from power
    iteration on the shifted matrix ``lambda_max * I - H``.
    """
    H = as_matrix(H, "H")
    check_symmetric(H)
    n = H.shape[0]
    rng = np.random.default_rng(seed)
    start = rng.standard_normal(n)
    lam_max, it_max = _power_iteration(H, start, tol, max_iter)
    shifted = lam_max * np.eye(n) - H
    top_shift, it_min = _power_iteration(shifted, start, tol, max_iter)
    lam_min = lam_max - top_shift
    scale = max(abs(lam_max), 1.0)
    if lam_min < 0.0:
        if lam_min < -1e-8 * scale:
            raise ValueError("matrix is not positive semidefinite")
        lam_min = 0.0
    return SpectralEstimates(float(lam_min), float(lam_max), (it_max, it_min), tol)
