"""ADAM with bias correction, one state per parameter tensor."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

BETA1 = 0.9
BETA2 = 0.999
EPS = 1e-8


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def zeros_like(cls, param: np.ndarray) -> "AdamState":
        return cls(np.zeros_like(param, dtype=np.float64), np.zeros_like(param, dtype=np.float64), 0)


def adam_step(param: np.ndarray, grad: np.ndarray, state: AdamState, lr: float) -> tuple[np.ndarray, AdamState]:
    """One update; returns fresh arrays and leaves the inputs untouched."""
    if lr <= 0:
        raise ValueError("learning rate must be positive")
    grad = np.asarray(grad, dtype=np.float64)
    if grad.shape != np.shape(param):
        raise ValueError(f"gradient shape {grad.shape} != parameter shape {np.shape(param)}")
    t = state.t + 1
    m = BETA1 * state.m + (1.0 - BETA1) * grad
    v = BETA2 * state.v + (1.0 - BETA2) * grad * grad
    m_hat = m / (1.0 - BETA1 ** t)
    v_hat = v / (1.0 - BETA2 ** t)
    new = param - lr * m_hat / (np.sqrt(v_hat) + EPS)
    return new, AdamState(m, v, t)


class Adam:
    """Convenience wrapper holding one AdamState per named parameter."""

    def __init__(self, params: dict[str, np.ndarray], lr: float = 0.001) -> None:
        self.lr = lr
        self.states = {k: AdamState.zeros_like(v) for k, v in params.items()}

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        for k in params:
            params[k], self.states[k] = adam_step(params[k], grads[k], self.states[k], self.lr)
