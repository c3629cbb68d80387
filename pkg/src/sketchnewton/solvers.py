"""Sketched Newton solvers with distributed line search, plus first-order baselines.

Each iteration fans out through the simulated executor in three phases: a coded
gradient, a (sketched or exact) Hessian, and one line-search round in which every
data shard evaluates all candidate step sizes at once.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Sequence

import numpy as np

from .hessian import exact_gram, oversketched_hessian
from .linalg import ConvergenceError, cg_solve, pinv_apply
from .problems.base import Problem
from .simulator import SimExecutor, StragglerModel
from .sketching import build_oversketch, default_sketch_params

__all__ = [
    "DEFAULT_CANDIDATES",
    "HessianMode",
    "IterationRecord",
    "LineSearchResult",
    "Mode",
    "SolveTrace",
    "SolverConfig",
    "Termination",
    "armijo_select_f",
    "armijo_select_gradsq",
    "gd_solve",
    "nag_solve",
    "solve",
]

DEFAULT_CANDIDATES = tuple(4.0**-k for k in range(6))


class Mode(str, Enum):
    STRONGLY_CONVEX = "strongly_convex"
    WEAKLY_CONVEX = "weakly_convex"


class HessianMode(str, Enum):
    OVERSKETCHED = "oversketched"
    EXACT = "exact"


class Termination(str, Enum):
    CONVERGED = "converged"
    MAX_ITERS = "max_iters"
    LINE_SEARCH_STALLED = "line_search_stalled"


@dataclass(frozen=True)
class SolverConfig:
    mode: Mode = Mode.STRONGLY_CONVEX
    hessian_mode: HessianMode = HessianMode.OVERSKETCHED
    beta: float = 0.1
    step_candidates: tuple[float, ...] = DEFAULT_CANDIDATES
    sketch_m: int | None = None
    sketch_b: int | None = None
    sketch_e: int | None = None
    max_iters: int = 50
    grad_tol: float = 1e-8
    line_search: bool = True
    seed: int = 0
    cg_tol: float = 1e-10
    rank_tol: float = 1e-10
    max_backtrack_rounds: int = 8

    def __post_init__(self):
        object.__setattr__(self, "mode", Mode(self.mode))
        object.__setattr__(self, "hessian_mode", HessianMode(self.hessian_mode))
        cands = tuple(float(a) for a in self.step_candidates)
        object.__setattr__(self, "step_candidates", cands)
        if not 0.0 < self.beta <= 0.5:
            raise ValueError(f"beta must lie in (0, 1/2], got {self.beta}")
        if not cands:
            raise ValueError("step_candidates must be nonempty")
        if any(a <= 0.0 or a > 1.0 for a in cands):
            raise ValueError("step candidates must lie in (0, 1]")
        if any(a <= b for a, b in zip(cands, cands[1:])):
            raise ValueError("step candidates must be strictly descending")
        if self.max_iters < 0:
            raise ValueError(f"max_iters must be >= 0, got {self.max_iters}")
        if self.sketch_m is not None and self.sketch_b is not None and self.sketch_m % self.sketch_b:
            raise ValueError(f"sketch_m={self.sketch_m} is not a multiple of sketch_b={self.sketch_b}")

    def sketch_params(self, d: int) -> tuple[int, int, int]:
        """``(N, b, e)`` for a Hessian of size ``d``; defaults give ``m = 10 d``."""
        m, b, e = default_sketch_params(d)
        if self.sketch_m is not None:
            m = int(self.sketch_m)
            if self.sketch_b is not None:
                b = int(self.sketch_b)
            else:
                m_fit, b, _ = default_sketch_params(m, multiple=1)
                if m_fit != m:
                    raise ValueError(f"sketch_m={m} has no block count in [6, 16]; set sketch_b")
            if m % b:
                raise ValueError(f"sketch_m={m} is not a multiple of sketch_b={b}")
            e = math.ceil(0.1 * (m // b))
        elif self.sketch_b is not None:
            b = int(self.sketch_b)
            m = b * -(-m // b)
            e = math.ceil(0.1 * (m // b))
        if self.sketch_e is not None:
            e = int(self.sketch_e)
        return m // b, b, e


@dataclass(frozen=True)
class IterationRecord:
    iter: int
    f_value: float
    grad_norm: float
    grad_norm_sq: float
    step: float
    direction_norm: float
    vt_gradient: float
    vt_hessian: float
    vt_linesearch: float
    vt_cumulative: float
    workers_used: int
    armijo_lhs: float = math.nan
    armijo_rhs: float = math.nan


@dataclass
class SolveTrace:
    records: list[IterationRecord] = field(default_factory=list)
    final_w: np.ndarray | None = None
    termination: Termination | None = None

    @property
    def iterations(self) -> int:
        """Number of update steps taken."""
        return sum(1 for r in self.records if r.step > 0.0)

    def iterations_to(self, tol: float) -> float:
        for r in self.records:
            if r.grad_norm <= tol:
                return r.iter
        return math.inf


@dataclass(frozen=True)
class LineSearchResult:
    """Outcome of one distributed line-search round; ``alpha is None`` means stalled."""

    alpha: float | None
    reference: float
    slope: float
    trials: dict

    @property
    def lhs(self) -> float:
        return self.trials[self.alpha] if self.alpha is not None else math.nan

    @property
    def rhs(self) -> float:
        return self.reference + self.alpha * self.slope if self.alpha is not None else math.nan


def _largest_passing(alphas, trial, reference, slope):
    for a, v in zip(alphas, trial):
        if v <= reference + a * slope:
            return a
    return None


def armijo_select_f(
    problem: Problem, w, p, g, cfg: SolverConfig, executor: SimExecutor | None = None
) -> LineSearchResult:
    """Largest candidate with ``f(w + a p) <= f(w) + a * beta * p^T g``.

    ``f`` at ``w`` and at every candidate comes back from a single round of shard
    workers.
    """
    pg = float(np.dot(p, g))
    if not pg < 0.0:
        raise ValueError(f"p is not a descent direction (p^T g = {pg:.3e})")
    alphas = cfg.step_candidates
    vals = problem.values_along(w, p, (0.0,) + alphas, executor)
    reference, slope = float(vals[0]), cfg.beta * pg
    trials = dict(zip(alphas, map(float, vals[1:])))
    return LineSearchResult(_largest_passing(alphas, vals[1:], reference, slope), reference, slope, trials)


def armijo_select_gradsq(
    problem: Problem, w, p, H, g, cfg: SolverConfig, executor: SimExecutor | None = None
) -> LineSearchResult:
    """Largest candidate with ``||grad f(w + a p)||^2 <= ||grad f(w)||^2 + 2 a beta p^T H g``."""
    pHg = float(p @ (H @ g))
    scale = float(np.linalg.norm(g)) ** 2 + 1e-300
    if pHg > 1e-12 * scale:
        raise ValueError(f"p^T H g = {pHg:.3e} > 0; direction does not reduce ||grad f||^2")
    alphas = cfg.step_candidates
    grads = problem.gradients_along(w, p, (0.0,) + alphas, executor)
    sq = np.einsum("ij,ij->i", grads, grads)
    reference, slope = float(sq[0]), 2.0 * cfg.beta * pHg
    trials = dict(zip(alphas, map(float, sq[1:])))
    return LineSearchResult(_largest_passing(alphas, sq[1:], reference, slope), reference, slope, trials)


def _sketch_seed(seed: int, t: int) -> int:
    return int(np.random.SeedSequence([int(seed), int(t)]).generate_state(1)[0])


def _default_executor(cfg: SolverConfig) -> SimExecutor:
    return SimExecutor(StragglerModel(seed=cfg.seed))


def approximate_hessian(problem: Problem, w, cfg: SolverConfig, executor: SimExecutor, t: int = 0):
    """Master-side Hessian estimate ``scale * A^T S S^T A + ridge * I`` (or exact)."""
    A = problem.hessian_sqrt(w)
    N, b, e = cfg.sketch_params(problem.dim)
    if cfg.hessian_mode is HessianMode.EXACT:
        gram, _ = exact_gram(A, executor, b)
    else:
        spec = build_oversketch(A.shape[0], N, e, b, _sketch_seed(cfg.seed, t))
        gram, _ = oversketched_hessian(A, spec, executor)
    return problem.hessian_scale * gram + problem.ridge * np.eye(problem.dim)


def _newton_solve(H: np.ndarray, g: np.ndarray, ridge: float, cfg: SolverConfig) -> np.ndarray:
    """``H^{-1} g`` by CG, or against the PSD projection of ``H`` if CG meets negative curvature.

    Tiles of an oversketched Hessian may come from different survivor sets, so at
    small sketch sizes the assembled matrix can be slightly indefinite.
    """
    try:
        return cg_solve(H, g, cfg.cg_tol)
    except ConvergenceError:
        evals, evecs = np.linalg.eigh(H)
        floor = max(ridge, cfg.rank_tol * float(np.max(np.abs(evals))))
        return evecs @ ((evecs.T @ g) / np.maximum(evals, floor))


def solve(
    problem: Problem,
    cfg: SolverConfig,
    executor: SimExecutor | None = None,
    w0=None,
    callback: Callable[[IterationRecord], None] | None = None,
) -> SolveTrace:
    """Run the sketched Newton iteration until ``||grad f|| <= grad_tol``.

    Strongly convex mode solves ``H p = -g`` by conjugate gradients and line-searches
    on ``f``; weakly convex mode takes ``p = -H^+ g`` and line-searches on
    ``||grad f||^2``. A line search with no passing candidate ends the run.
    """
    executor = executor or _default_executor(cfg)
    w = np.zeros(problem.dim) if w0 is None else np.array(w0, dtype=np.float64)
    trace = SolveTrace()
    weak = cfg.mode is Mode.WEAKLY_CONVEX

    for t in range(cfg.max_iters + 1):
        tasks0, t0 = executor.tasks_submitted, executor.now
        g = problem.gradient(w, executor)
        t1 = executor.now
        gnorm = float(np.linalg.norm(g))
        base = dict(iter=t, f_value=problem.value(w), grad_norm=gnorm, grad_norm_sq=float(g @ g))

        def emit(step=0.0, pnorm=0.0, t2=t1, t3=t1, ls=None):
            rec = IterationRecord(
                **base,
                step=step,
                direction_norm=pnorm,
                vt_gradient=t1 - t0,
                vt_hessian=t2 - t1,
                vt_linesearch=t3 - t2,
                vt_cumulative=executor.now,
                workers_used=executor.tasks_submitted - tasks0,
                armijo_lhs=ls.lhs if ls is not None else math.nan,
                armijo_rhs=ls.rhs if ls is not None else math.nan,
            )
            trace.records.append(rec)
            if callback is not None:
                callback(rec)

        if gnorm <= cfg.grad_tol:
            emit()
            trace.termination = Termination.CONVERGED
            break
        if t == cfg.max_iters:
            emit()
            trace.termination = Termination.MAX_ITERS
            break

        H = approximate_hessian(problem, w, cfg, executor, t)
        p = -pinv_apply(H, g, cfg.rank_tol) if weak else -_newton_solve(H, g, problem.ridge, cfg)
        t2 = executor.now

        ls = None
        if cfg.line_search:
            if weak:
                ls = armijo_select_gradsq(problem, w, p, H, g, cfg, executor)
            else:
                ls = armijo_select_f(problem, w, p, g, cfg, executor)
            if ls.alpha is None:
                emit(0.0, float(np.linalg.norm(p)), t2, executor.now, ls)
                trace.termination = Termination.LINE_SEARCH_STALLED
                break
            if not ls.lhs <= ls.rhs:
                raise AssertionError(f"accepted step violates the Armijo condition at iteration {t}")
            alpha = ls.alpha
        else:
            alpha = 1.0
        emit(alpha, float(np.linalg.norm(p)), t2, executor.now, ls)
        w = w + alpha * p

    trace.final_w = w
    return trace


def _backtrack(problem, x, g, cfg, executor) -> LineSearchResult:
    """Armijo on ``f`` along ``-g``, trying the candidate set then ever smaller rounds."""
    p = -g
    slope = -cfg.beta * float(g @ g)
    alphas = cfg.step_candidates
    # each further round continues the geometric sequence below the last candidate
    shift = 0.25 * alphas[-1] / alphas[0]
    reference = None
    trials = {}
    for _ in range(cfg.max_backtrack_rounds):
        pts = ((0.0,) if reference is None else ()) + tuple(alphas)
        vals = problem.values_along(x, p, pts, executor)
        if reference is None:
            reference, vals = float(vals[0]), vals[1:]
        trials.update(zip(alphas, map(float, vals)))
        a = _largest_passing(alphas, vals, reference, slope)
        if a is not None:
            return LineSearchResult(a, reference, slope, trials)
        alphas = tuple(a * shift for a in alphas)
    return LineSearchResult(None, reference, slope, trials)


def _first_order(problem, cfg, executor, w0, callback, momentum: bool) -> SolveTrace:
    executor = executor or _default_executor(cfg)
    w = np.zeros(problem.dim) if w0 is None else np.array(w0, dtype=np.float64)
    y = w.copy()
    trace = SolveTrace()
    for t in range(cfg.max_iters + 1):
        tasks0, t0 = executor.tasks_submitted, executor.now
        x = y if momentum else w
        g = problem.gradient(x, executor)
        t1 = executor.now
        gnorm = float(np.linalg.norm(g))
        done = gnorm <= cfg.grad_tol or t == cfg.max_iters
        ls = None if done else _backtrack(problem, x, g, cfg, executor)
        stalled = ls is not None and ls.alpha is None
        alpha = 0.0 if (done or stalled) else ls.alpha
        rec = IterationRecord(
            iter=t,
            f_value=problem.value(x),
            grad_norm=gnorm,
            grad_norm_sq=float(g @ g),
            step=alpha,
            direction_norm=gnorm,
            vt_gradient=t1 - t0,
            vt_hessian=0.0,
            vt_linesearch=executor.now - t1,
            vt_cumulative=executor.now,
            workers_used=executor.tasks_submitted - tasks0,
            armijo_lhs=ls.lhs if ls is not None and not stalled else math.nan,
            armijo_rhs=ls.rhs if ls is not None and not stalled else math.nan,
        )
        trace.records.append(rec)
        if callback is not None:
            callback(rec)
        if done:
            trace.termination = Termination.CONVERGED if gnorm <= cfg.grad_tol else Termination.MAX_ITERS
            w = x
            break
        if stalled:
            trace.termination = Termination.LINE_SEARCH_STALLED
            w = x
            break
        w_next = x - alpha * g
        if momentum:
            y = w_next + (t / (t + 3.0)) * (w_next - w)
        w = w_next
    trace.final_w = w
    return trace


def gd_solve(problem: Problem, cfg: SolverConfig, executor: SimExecutor | None = None, w0=None, callback=None) -> SolveTrace:
    """Gradient descent with the same coded gradient and distributed backtracking."""
    return _first_order(problem, cfg, executor, w0, callback, momentum=False)


def nag_solve(problem: Problem, cfg: SolverConfig, executor: SimExecutor | None = None, w0=None, callback=None) -> SolveTrace:
    """Nesterov's accelerated gradient; the gradient is taken at the extrapolated point."""
    return _first_order(problem, cfg, executor, w0, callback, momentum=True)
