"""Straggler-resilient sketched Newton methods on a deterministic serverless simulator."""

from .coding import CodedMatrix, coded_matvec, decodable_check, encode_2d, peel_decode
from .estimators import SketchedNewtonClassifier, SketchedNewtonRegressor, SketchedSoftmaxClassifier
from .hessian import exact_gram, gram_phase, oversketched_hessian, sketch_phase
from .simulator import CloudStore, SimExecutor, StragglerModel, Task
from .sketching import build_count_sketch, build_oversketch
from .solvers import HessianMode, Mode, SolverConfig, SolveTrace, Termination, gd_solve, nag_solve, solve

__version__ = "0.1.0"

__all__ = [
    "CloudStore",
    "CodedMatrix",
    "HessianMode",
    "Mode",
    "SimExecutor",
    "SketchedNewtonClassifier",
    "SketchedNewtonRegressor",
    "SketchedSoftmaxClassifier",
    "SolveTrace",
    "SolverConfig",
    "StragglerModel",
    "Task",
    "Termination",
    "build_count_sketch",
    "build_oversketch",
    "coded_matvec",
    "decodable_check",
    "encode_2d",
    "exact_gram",
    "gd_solve",
    "gram_phase",
    "nag_solve",
    "oversketched_hessian",
    "peel_decode",
    "sketch_phase",
    "solve",
]
