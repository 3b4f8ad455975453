"""The seven pair metrics and the 7-d pair feature built from them.

All metrics are oriented smaller-is-more-similar; cosine and correlation are
returned as distances (one minus the similarity).
"""

from __future__ import annotations

import math

import numpy as np

from .errors import DegenerateInput, ShapeError

METRICS = (
    "euclidean",
    "cityblock",
    "chebyshev",
    "correlation",
    "sqeuclidean",
    "braycurtis",
    "cosine",
)


def _check(a, b) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 1 or a.shape != b.shape or a.size < 1:
        raise ShapeError(f"need two equal-length non-empty vectors, got {a.shape} and {b.shape}")
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise DegenerateInput("non-finite vector component")
    return a, b


def _one_minus_cos(a: np.ndarray, b: np.ndarray, metric: str, same: bool) -> float:
    na = float(a @ a)
    nb = float(b @ b)
    if na == 0.0 or nb == 0.0:
        if na == nb and same:
            return 0.0
        raise DegenerateInput(f"{metric}: zero-norm operand")
    # sqrt(na * nb) rather than sqrt(na) * sqrt(nb): exact 1.0 when a == b
    sim = float(a @ b) / math.sqrt(na * nb)
    return min(2.0, max(0.0, 1.0 - sim))


def euclidean(a, b) -> float:
    a, b = _check(a, b)
    d = a - b
    return math.sqrt(float(d @ d))


def sqeuclidean(a, b) -> float:
    a, b = _check(a, b)
    d = a - b
    return float(d @ d)


def cityblock(a, b) -> float:
    a, b = _check(a, b)
    return float(np.abs(a - b).sum())


def chebyshev(a, b) -> float:
    a, b = _check(a, b)
    return float(np.abs(a - b).max())


def braycurtis(a, b) -> float:
    a, b = _check(a, b)
    den = float(np.abs(a + b).sum())
    if den == 0.0:
        if np.array_equal(a, b):
            return 0.0
        raise DegenerateInput("braycurtis: sum |a + b| is zero")
    return float(np.abs(a - b).sum()) / den


def cosine(a, b) -> float:
    a, b = _check(a, b)
    return _one_minus_cos(a, b, "cosine", np.array_equal(a, b))


def correlation(a, b) -> float:
    a, b = _check(a, b)
    return _one_minus_cos(a - a.mean(), b - b.mean(), "correlation", np.array_equal(a, b))


_FUNCS = {
    "euclidean": euclidean,
    "cityblock": cityblock,
    "chebyshev": chebyshev,
    "correlation": correlation,
    "sqeuclidean": sqeuclidean,
    "braycurtis": braycurtis,
    "cosine": cosine,
}


def distance(metric: str, a, b) -> float:
    try:
        fn = _FUNCS[metric]
    except KeyError:
        raise ValueError(f"unknown metric {metric!r}; expected one of {METRICS}") from None
    return fn(a, b)


def pair_feature(a, b) -> np.ndarray:
    """Vector of the seven metrics in canonical order."""
    a, b = _check(a, b)
    out = np.empty(len(METRICS))
    for i, m in enumerate(METRICS):
        try:
            out[i] = _FUNCS[m](a, b)
        except DegenerateInput as exc:
            raise DegenerateInput(f"pair feature, metric {m!r}: {exc}") from None
    return out


def pair_features(query, candidates: np.ndarray) -> np.ndarray:
    """Row-wise :func:`pair_feature` of one query against a candidate matrix."""
    candidates = np.asarray(candidates, dtype=np.float64)
    return np.stack([pair_feature(query, c) for c in candidates]) if len(candidates) else np.zeros((0, 7))
