"""Cosine-proximity and Poisson losses with analytic gradients w.r.t. the prediction."""

from __future__ import annotations

import numpy as np

from ..errors import DegenerateInput

POISSON_FLOOR = 1e-7


def cosine_proximity_loss(pred, target) -> tuple[float, np.ndarray]:
    """-(p . t) / (|p| |t|)."""
    p = np.asarray(pred, dtype=np.float64)
    t = np.asarray(target, dtype=np.float64)
    np_ = np.linalg.norm(p)
    nt = np.linalg.norm(t)
    if np_ == 0.0 or nt == 0.0:
        raise DegenerateInput("cosine proximity loss: zero-norm prediction or target")
    dot = float(p @ t)
    loss = -dot / (np_ * nt)
    grad = -(t / (np_ * nt) - dot * p / (np_ ** 3 * nt))
    return loss, grad


def poisson_loss(pred, target) -> tuple[float, np.ndarray]:
    """mean(p - t log p), with p floored at POISSON_FLOOR (zero gradient below the floor)."""
    p = np.asarray(pred, dtype=np.float64)
    t = np.asarray(target, dtype=np.float64)
    pf = np.maximum(p, POISSON_FLOOR)
    if not np.all(pf > 0):
        raise DegenerateInput("poisson loss: non-positive or non-finite prediction")
    n = p.size
    loss = float(np.sum(pf - t * np.log(pf)) / n)
    grad = np.where(p > POISSON_FLOOR, (1.0 - t / pf) / n, 0.0)
    return loss, grad


LOSSES = {
    "cosine_proximity": cosine_proximity_loss,
    "poisson": poisson_loss,
}


def batch_loss(name: str, pred: np.ndarray, target: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean per-sample loss over a (B, n) batch and its gradient."""
    fn = LOSSES[name]
    B = len(pred)
    total = 0.0
    grad = np.empty_like(pred, dtype=np.float64)
    for r in range(B):
        l, g = fn(pred[r], target[r])
        total += l
        grad[r] = g / B
    return total / B, grad
