"""Dataset ingestion (LIBSVM text) and synthetic generators."""

from __future__ import annotations

import numpy as np
from scipy.special import expit, softmax

from .base import Dataset

__all__ = [
    "LibsvmFormatError",
    "gen_synthetic_logistic",
    "gen_synthetic_ridge",
    "gen_synthetic_softmax",
    "load_libsvm",
    "save_libsvm",
]


class LibsvmFormatError(ValueError):
    def __init__(self, path, lineno: int, message: str):
        super().__init__(f"{path}:{lineno}: {message}")
        self.lineno = lineno


def load_libsvm(path, kind: str = "logistic", n_features: int | None = None) -> Dataset:
    """Read ``label idx:val idx:val ...`` lines (1-based, strictly ascending indices).

    Logistic labels in {0, 1} are mapped to {-1, +1}. Softmax labels are class ids,
    mapped in sorted order onto one-hot rows. Blank lines and ``#`` comments are
    skipped.
    """
    labels, rows = [], []
    max_index = 0
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            head, *tokens = line.split()
            try:
                label = float(head)
            except ValueError:
                raise LibsvmFormatError(path, lineno, f"bad label {head!r}") from None
            feats = {}
            last = 0
            for tok in tokens:
                idx_s, sep, val_s = tok.partition(":")
                try:
                    if not sep:
                        raise ValueError
                    idx, val = int(idx_s), float(val_s)
                except ValueError:
                    raise LibsvmFormatError(path, lineno, f"malformed feature {tok!r}") from None
                if idx < 1:
                    raise LibsvmFormatError(path, lineno, f"feature index {idx} is not 1-based")
                if idx <= last:
                    raise LibsvmFormatError(path, lineno, f"feature indices not ascending at {idx}")
                if not np.isfinite(val):
                    raise LibsvmFormatError(path, lineno, f"non-finite value {val_s!r}")
                feats[idx] = val
                last = idx
            max_index = max(max_index, last)
            labels.append(label)
            rows.append(feats)

    d = max_index if n_features is None else int(n_features)
    if max_index > d:
        raise ValueError(f"{path}: feature index {max_index} exceeds n_features={d}")
    X = np.zeros((d, len(rows)))
    for j, feats in enumerate(rows):
        for idx, val in feats.items():
            X[idx - 1, j] = val
    y = np.asarray(labels, dtype=np.float64)
    if kind == "logistic":
        values = set(np.unique(y).tolist())
        if values <= {0.0, 1.0}:
            y = 2.0 * y - 1.0
        elif not values <= {-1.0, 1.0}:
            raise ValueError(f"{path}: logistic labels must be in {{0,1}} or {{-1,+1}}, got {sorted(values)}")
    elif kind == "softmax":
        classes, codes = np.unique(y, return_inverse=True)
        y = np.zeros((len(classes), len(labels)))
        y[codes, np.arange(len(labels))] = 1.0
    return Dataset(X, y, kind)


def save_libsvm(path, data: Dataset) -> None:
    """Write ``data`` in LIBSVM format with full-precision values (zeros omitted)."""
    if data.kind == "softmax":
        labels = [str(int(k)) for k in np.argmax(data.y, axis=0)]
    elif data.kind == "logistic":
        labels = ["+1" if v > 0 else "-1" for v in data.y]
    else:
        labels = [f"{v:.17g}" for v in data.y]
    with open(path, "w", encoding="utf-8") as fh:
        for j, label in enumerate(labels):
            col = data.X[:, j]
            feats = " ".join(f"{i + 1}:{col[i]:.17g}" for i in np.flatnonzero(col))
            fh.write(f"{label} {feats}".rstrip() + "\n")


def gen_synthetic_logistic(n: int, d: int, seed: int = 0) -> tuple[Dataset, np.ndarray, float]:
    """Features uniform on ``[-1, 1]^d``; ``P[y = 1] = 1 / (1 + exp(x^T w + b))``.

    Returns the dataset and the planted ``(w, b)``, both standard normal.
    """
    if n < 1 or d < 1:
        raise ValueError(f"need n, d >= 1, got n={n}, d={d}")
    rng = np.random.default_rng(seed)
    w = rng.standard_normal(d)
    b = float(rng.standard_normal())
    X = rng.uniform(-1.0, 1.0, size=(d, n))
    p_pos = expit(-(w @ X + b))
    y = np.where(rng.random(n) < p_pos, 1.0, -1.0)
    return Dataset(X, y, "logistic"), w, b


def gen_synthetic_softmax(
    n: int, d: int, K: int, seed: int = 0, scale: float = 1.0
) -> tuple[Dataset, np.ndarray]:
    """Features uniform on ``[-1, 1]^d``; labels drawn from a planted softmax model.

    Sampled (rather than argmax) labels keep the classes overlapping, so the
    likelihood has a finite minimizer.
    """
    if K < 2:
        raise ValueError("softmax needs K >= 2")
    rng = np.random.default_rng(seed)
    W = scale * rng.standard_normal((d, K))
    X = rng.uniform(-1.0, 1.0, size=(d, n))
    probs = softmax(X.T @ W, axis=1)
    cdf = np.cumsum(probs, axis=1)
    u = rng.random(n)[:, None]
    cls = np.minimum((u > cdf).sum(axis=1), K - 1)
    Y = np.zeros((K, n))
    Y[cls, np.arange(n)] = 1.0
    return Dataset(X, Y, "softmax"), W


def gen_synthetic_ridge(n: int, d: int, seed: int = 0, noise: float = 0.1) -> tuple[Dataset, np.ndarray]:
    rng = np.random.default_rng(seed)
    w = rng.standard_normal(d)
    X = rng.uniform(-1.0, 1.0, size=(d, n))
    y = w @ X + noise * rng.standard_normal(n)
    return Dataset(X, y, "ridge"), w
