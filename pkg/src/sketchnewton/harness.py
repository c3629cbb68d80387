"""Experiment runner: YAML config in, CSV trace and one-line summary out."""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any

import yaml

from .problems import (
    LogisticProblem,
    RidgeProblem,
    SoftmaxProblem,
    gen_synthetic_logistic,
    gen_synthetic_ridge,
    gen_synthetic_softmax,
    load_libsvm,
)
from .problems.base import Problem
from .simulator import CloudStore, SimExecutor, StragglerModel
from .solvers import DEFAULT_CANDIDATES, IterationRecord, SolverConfig, Termination, gd_solve, nag_solve, solve

__all__ = [
    "CSV_HEADER",
    "EXIT_CODES",
    "OUTPUT_DIR_ENV",
    "CompareReport",
    "ConfigError",
    "ExperimentConfig",
    "RunResult",
    "build_problem",
    "compare_runs",
    "load_config",
    "parse_config",
    "read_trace",
    "run_experiment",
    "with_seed",
]

CSV_HEADER = "iter,f_value,grad_norm,step_alpha,vt_grad,vt_hess,vt_linesearch,vt_cumulative,workers_used"
OUTPUT_DIR_ENV = "SKETCHNEWTON_OUTPUT_DIR"
EXIT_CODES = {
    Termination.CONVERGED: 0,
    Termination.MAX_ITERS: 2,
    Termination.LINE_SEARCH_STALLED: 3,
}
EXIT_ERROR = 1


class ConfigError(ValueError):
    """Invalid experiment config; ``field`` is the dotted path of the offending key."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


@dataclass(frozen=True)
class ProblemConfig:
    kind: str = "logistic"
    lam: float = 1e-3
    dataset: Path | None = None
    n: int = 1000
    d: int = 10
    K: int = 3
    data_seed: int | None = None
    n_shards: int = 8


@dataclass(frozen=True)
class StragglerConfig:
    straggler_prob: float = 0.02
    slowdown: float = 180.0 / 135.0
    invoke_overhead: float = 0.0
    base_time: float = 1.0
    flops_per_second: float | None = None
    jitter: float = 0.0
    get_latency: float = 0.0
    put_latency: float = 0.0


@dataclass(frozen=True)
class ExperimentConfig:
    name: str
    problem: ProblemConfig
    method: str
    solver: SolverConfig
    stragglers: StragglerConfig
    seed: int = 0
    output: Path | None = None


# -- validation helpers ----------------------------------------------------------

def _section(raw: dict, key: str, path: str) -> dict:
    value = raw.get(key, {})
    if value is None:
        return {}
    if not isinstance(value, dict):
        raise ConfigError(path, f"expected a mapping, got {type(value).__name__}")
    return value


def _reject_unknown(section: dict, allowed: set, prefix: str) -> None:
    for key in section:
        if key not in allowed:
            raise ConfigError(f"{prefix}{key}", f"unknown key (allowed: {', '.join(sorted(allowed))})")


def _get(section: dict, key: str, path: str, kind, default, *, lo=None, lo_open=False, hi=None, choices=None):
    if key not in section or section[key] is None:
        return default
    value = section[key]
    where = f"{path}.{key}" if path else key
    if kind is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(where, f"expected an integer, got {value!r}")
    elif kind is float:
        # YAML 1.1 reads exponent forms without a dot (1e-3) as strings
        if isinstance(value, str):
            try:
                value = float(value)
            except ValueError:
                raise ConfigError(where, f"expected a number, got {value!r}") from None
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(where, f"expected a number, got {value!r}")
        value = float(value)
        if not math.isfinite(value):
            raise ConfigError(where, f"must be finite, got {value!r}")
    elif kind is bool:
        if not isinstance(value, bool):
            raise ConfigError(where, f"expected true/false, got {value!r}")
    elif kind is str:
        if not isinstance(value, str):
            raise ConfigError(where, f"expected a string, got {value!r}")
    if choices is not None and value not in choices:
        raise ConfigError(where, f"must be one of {', '.join(choices)}, got {value!r}")
    if lo is not None and (value <= lo if lo_open else value < lo):
        raise ConfigError(where, f"must be {'>' if lo_open else '>='} {lo}, got {value!r}")
    if hi is not None and value > hi:
        raise ConfigError(where, f"must be <= {hi}, got {value!r}")
    return value


_PROBLEM_KEYS = {"kind", "lam", "dataset", "synthetic", "n_shards"}
_SYNTH_KEYS = {"n", "d", "K", "seed"}
_SOLVER_KEYS = {
    "method", "mode", "hessian_mode", "m", "b", "e", "beta", "candidates",
    "max_iters", "grad_tol", "line_search", "cg_tol", "rank_tol",
}
_STRAGGLER_KEYS = {
    "straggler_prob", "slowdown", "invoke_overhead", "base_time",
    "flops_per_second", "jitter", "get_latency", "put_latency",
}
_TOP_KEYS = {"name", "seed", "output", "problem", "solver", "stragglers"}


def parse_config(raw: Any, base_dir: Path | str = ".", name: str = "experiment") -> ExperimentConfig:
    """Validate a config mapping; relative dataset paths resolve against ``base_dir``."""
    if not isinstance(raw, dict):
        raise ConfigError("<root>", "config must be a mapping")
    _reject_unknown(raw, _TOP_KEYS, "")
    base_dir = Path(base_dir)
    seed = _get(raw, "seed", "", int, 0, lo=0)
    name = _get(raw, "name", "", str, name)

    praw = _section(raw, "problem", "problem")
    _reject_unknown(praw, _PROBLEM_KEYS, "problem.")
    kind = _get(praw, "kind", "problem", str, "logistic", choices=("logistic", "softmax", "ridge"))
    lam = _get(praw, "lam", "problem", float, 0.0 if kind == "softmax" else 1e-3, lo=0.0)
    if kind == "softmax" and lam != 0.0:
        raise ConfigError("problem.lam", "softmax is unregularized; lam must be 0")
    dataset = _get(praw, "dataset", "problem", str, None)
    sraw = _section(praw, "synthetic", "problem.synthetic")
    _reject_unknown(sraw, _SYNTH_KEYS, "problem.synthetic.")
    if dataset is not None:
        if sraw:
            raise ConfigError("problem.synthetic", "give either problem.dataset or problem.synthetic, not both")
        dataset = Path(dataset)
        if not dataset.is_absolute():
            dataset = base_dir / dataset
        if not dataset.is_file():
            raise ConfigError("problem.dataset", f"file not found: {dataset}")
    problem = ProblemConfig(
        kind=kind,
        lam=lam,
        dataset=dataset,
        n=_get(sraw, "n", "problem.synthetic", int, 1000, lo=1),
        d=_get(sraw, "d", "problem.synthetic", int, 10, lo=1),
        K=_get(sraw, "K", "problem.synthetic", int, 3, lo=2),
        data_seed=_get(sraw, "seed", "problem.synthetic", int, None, lo=0),
        n_shards=_get(praw, "n_shards", "problem", int, 8, lo=1),
    )

    vraw = _section(raw, "solver", "solver")
    _reject_unknown(vraw, _SOLVER_KEYS, "solver.")
    method = _get(vraw, "method", "solver", str, "newton", choices=("newton", "gd", "nag"))
    mode = _get(
        vraw, "mode", "solver", str,
        "weakly_convex" if kind == "softmax" else "strongly_convex",
        choices=("strongly_convex", "weakly_convex"),
    )
    m = _get(vraw, "m", "solver", int, None, lo=1)
    b = _get(vraw, "b", "solver", int, None, lo=1)
    if m is not None and b is not None and m % b:
        raise ConfigError("solver.m", f"must be divisible by solver.b ({m} % {b} = {m % b})")
    if m is not None and b is None:
        raise ConfigError("solver.b", "required when solver.m is set")
    candidates = vraw.get("candidates", list(DEFAULT_CANDIDATES))
    if (
        not isinstance(candidates, list)
        or not candidates
        or not all(isinstance(a, (int, float)) and not isinstance(a, bool) for a in candidates)
    ):
        raise ConfigError("solver.candidates", "expected a nonempty list of numbers")
    if any(not 0 < a <= 1 for a in candidates):
        raise ConfigError("solver.candidates", "every candidate must lie in (0, 1]")
    if any(a <= c for a, c in zip(candidates, candidates[1:])):
        raise ConfigError("solver.candidates", "candidates must be strictly descending")
    solver = SolverConfig(
        mode=mode,
        hessian_mode=_get(vraw, "hessian_mode", "solver", str, "oversketched", choices=("oversketched", "exact")),
        beta=_get(vraw, "beta", "solver", float, 0.1, lo=0.0, lo_open=True, hi=0.5),
        step_candidates=tuple(float(a) for a in candidates),
        sketch_m=m,
        sketch_b=b,
        sketch_e=_get(vraw, "e", "solver", int, None, lo=0),
        max_iters=_get(vraw, "max_iters", "solver", int, 50, lo=0),
        grad_tol=_get(vraw, "grad_tol", "solver", float, 1e-8, lo=0.0),
        line_search=_get(vraw, "line_search", "solver", bool, True),
        seed=seed,
        cg_tol=_get(vraw, "cg_tol", "solver", float, 1e-10, lo=0.0, lo_open=True),
        rank_tol=_get(vraw, "rank_tol", "solver", float, 1e-10, lo=0.0),
    )

    graw = _section(raw, "stragglers", "stragglers")
    _reject_unknown(graw, _STRAGGLER_KEYS, "stragglers.")
    stragglers = StragglerConfig(
        straggler_prob=_get(graw, "straggler_prob", "stragglers", float, 0.02, lo=0.0, hi=1.0),
        slowdown=_get(graw, "slowdown", "stragglers", float, 180.0 / 135.0, lo=1.0),
        invoke_overhead=_get(graw, "invoke_overhead", "stragglers", float, 0.0, lo=0.0),
        base_time=_get(graw, "base_time", "stragglers", float, 1.0, lo=0.0, lo_open=True),
        flops_per_second=_get(graw, "flops_per_second", "stragglers", float, None, lo=0.0, lo_open=True),
        jitter=_get(graw, "jitter", "stragglers", float, 0.0, lo=0.0),
        get_latency=_get(graw, "get_latency", "stragglers", float, 0.0, lo=0.0),
        put_latency=_get(graw, "put_latency", "stragglers", float, 0.0, lo=0.0),
    )
    output = _get(raw, "output", "", str, None)
    return ExperimentConfig(
        name=name,
        problem=problem,
        method=method,
        solver=solver,
        stragglers=stragglers,
        seed=seed,
        output=Path(output) if output else None,
    )


def load_config(path: Path | str) -> ExperimentConfig:
    path = Path(path)
    try:
        with open(path, encoding="utf-8") as fh:
            raw = yaml.safe_load(fh)
    except yaml.YAMLError as exc:
        raise ConfigError("<file>", f"cannot parse {path}: {exc}") from None
    return parse_config(raw if raw is not None else {}, path.parent, path.stem)


def with_seed(cfg: ExperimentConfig, seed: int) -> ExperimentConfig:
    return replace(cfg, seed=seed, solver=replace(cfg.solver, seed=seed))


# -- running ------------------------------------------------------------------------

def build_problem(pcfg: ProblemConfig, seed: int = 0) -> Problem:
    data_seed = seed if pcfg.data_seed is None else pcfg.data_seed
    if pcfg.dataset is not None:
        data = load_libsvm(pcfg.dataset, kind=pcfg.kind)
    elif pcfg.kind == "logistic":
        data = gen_synthetic_logistic(pcfg.n, pcfg.d, data_seed)[0]
    elif pcfg.kind == "softmax":
        data = gen_synthetic_softmax(pcfg.n, pcfg.d, pcfg.K, data_seed)[0]
    else:
        data = gen_synthetic_ridge(pcfg.n, pcfg.d, data_seed)[0]
    if pcfg.kind == "logistic":
        return LogisticProblem(data, lam=pcfg.lam, n_shards=pcfg.n_shards)
    if pcfg.kind == "softmax":
        return SoftmaxProblem(data, n_shards=pcfg.n_shards)
    return RidgeProblem(data, lam=pcfg.lam, n_shards=pcfg.n_shards)


def build_executor(scfg: StragglerConfig, seed: int) -> SimExecutor:
    kwargs = dict(
        straggler_prob=scfg.straggler_prob,
        slowdown=scfg.slowdown,
        invoke_overhead=scfg.invoke_overhead,
        base_time=scfg.base_time,
        jitter=scfg.jitter,
        seed=seed,
    )
    if scfg.flops_per_second is not None:
        kwargs["flops_per_second"] = scfg.flops_per_second
    return SimExecutor(StragglerModel(**kwargs), CloudStore(scfg.get_latency, scfg.put_latency))


def resolve_output(cfg: ExperimentConfig, out: Path | str | None = None) -> Path:
    """``--out`` wins; otherwise the config's file name, moved under the env directory if set."""
    if out is not None:
        return Path(out)
    path = cfg.output or Path(f"{cfg.name}.csv")
    env_dir = os.environ.get(OUTPUT_DIR_ENV)
    if env_dir:
        path = Path(env_dir) / path.name
    return path


def format_row(rec: IterationRecord) -> str:
    reals = (
        rec.f_value, rec.grad_norm, rec.step, rec.vt_gradient, rec.vt_hessian,
        rec.vt_linesearch, rec.vt_cumulative,
    )
    return ",".join([str(rec.iter), *("%.17g" % v for v in reals), str(rec.workers_used)])


@dataclass(frozen=True)
class RunResult:
    termination: Termination
    iterations: int
    grad_norm: float
    virtual_time: float
    trace_path: Path

    @property
    def exit_code(self) -> int:
        return EXIT_CODES[self.termination]

    def summary(self) -> str:
        return (
            f"termination={self.termination.value} iterations={self.iterations} "
            f"grad_norm={self.grad_norm:.6e} virtual_time={self.virtual_time:.6f} trace={self.trace_path}"
        )


def run_experiment(cfg: ExperimentConfig, out: Path | str | None = None) -> RunResult:
    """Run one experiment, streaming each iteration to the CSV as it completes."""
    path = resolve_output(cfg, out)
    problem = build_problem(cfg.problem, cfg.seed)
    executor = build_executor(cfg.stragglers, cfg.seed)
    runner = {"newton": solve, "gd": gd_solve, "nag": nag_solve}[cfg.method]
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(CSV_HEADER + "\n")
        fh.flush()

        def emit(rec: IterationRecord) -> None:
            fh.write(format_row(rec) + "\n")
            fh.flush()

        trace = runner(problem, cfg.solver, executor, callback=emit)
    last = trace.records[-1]
    return RunResult(trace.termination, trace.iterations, last.grad_norm, executor.now, path)


# -- comparison --------------------------------------------------------------------

def read_trace(path: Path | str) -> list[dict]:
    with open(path, encoding="utf-8", newline="") as fh:
        header = fh.readline().strip()
        if header != CSV_HEADER:
            raise ValueError(f"{path}: unexpected header {header!r}")
        rows = []
        for rec in csv.DictReader(fh, fieldnames=CSV_HEADER.split(",")):
            rows.append(
                {k: (int(v) if k in ("iter", "workers_used") else float(v)) for k, v in rec.items()}
            )
    return rows


@dataclass(frozen=True)
class CompareReport:
    tol: float
    iters: tuple[float, float]
    vtime: tuple[float, float]

    @property
    def reached(self) -> tuple[bool, bool]:
        return tuple(math.isfinite(i) for i in self.iters)

    @staticmethod
    def _ratio(a: float, b: float) -> float:
        if math.isinf(a) and math.isinf(b):
            return math.nan
        if math.isinf(a) or math.isinf(b):
            return math.inf if math.isinf(a) else 0.0
        if b == 0:
            return 1.0 if a == 0 else math.inf
        return a / b

    @property
    def iter_ratio(self) -> float:
        return self._ratio(*self.iters)

    @property
    def time_ratio(self) -> float:
        return self._ratio(*self.vtime)

    def table(self, names=("a", "b")) -> str:
        def fmt(v):
            return "inf" if math.isinf(v) else f"{v:.6g}"

        lines = [f"tolerance grad_norm <= {self.tol:g}", f"{'run':<40} {'iters':>10} {'vtime':>14} reached"]
        for nm, it, vt, ok in zip(names, self.iters, self.vtime, self.reached):
            lines.append(f"{str(nm):<40} {fmt(it):>10} {fmt(vt):>14} {'yes' if ok else 'NO (inf)'}")
        lines.append(f"{'ratio a/b':<40} {fmt(self.iter_ratio):>10} {fmt(self.time_ratio):>14}")
        return "\n".join(lines)


def _to_tolerance(rows: list[dict], tol: float) -> tuple[float, float]:
    """Iterations and cumulative virtual time when ``grad_norm <= tol`` first holds.

    The gradient at row ``t`` is computed during iteration ``t``, so the clock is
    read at the end of its gradient phase.
    """
    prev = 0.0
    for r in rows:
        if r["grad_norm"] <= tol:
            return float(r["iter"]), prev + r["vt_grad"]
        prev = r["vt_cumulative"]
    return math.inf, math.inf


def compare_runs(trace_a, trace_b, tol: float = 1e-4) -> CompareReport:
    rows_a = read_trace(trace_a) if not isinstance(trace_a, list) else trace_a
    rows_b = read_trace(trace_b) if not isinstance(trace_b, list) else trace_b
    (ia, ta), (ib, tb) = _to_tolerance(rows_a, tol), _to_tolerance(rows_b, tol)
    return CompareReport(tol, (ia, ib), (ta, tb))
