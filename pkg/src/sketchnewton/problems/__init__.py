"""Objectives exposing value, gradient and Hessian-square-root oracles."""

from .base import Dataset, Problem
from .data import (
    LibsvmFormatError,
    gen_synthetic_logistic,
    gen_synthetic_ridge,
    gen_synthetic_softmax,
    load_libsvm,
    save_libsvm,
)
from .logistic import LogisticProblem
from .ridge import RidgeProblem
from .softmax import SoftmaxProblem

__all__ = [
    "Dataset",
    "LibsvmFormatError",
    "LogisticProblem",
    "Problem",
    "RidgeProblem",
    "SoftmaxProblem",
    "gen_synthetic_logistic",
    "gen_synthetic_ridge",
    "gen_synthetic_softmax",
    "load_libsvm",
    "save_libsvm",
]
