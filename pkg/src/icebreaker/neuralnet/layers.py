"""Hand-differentiated layers: dense, time-distributed dense, masked LSTM, sigmoid.

Every ``*_forward`` returns ``(output, cache)``; the matching ``*_backward``
takes the upstream gradient and the cache and returns input and parameter
gradients. Dense weights are laid out ``(out, in)`` so ``y = x W^T + b``.
"""

from __future__ import annotations

import numpy as np

from ..errors import ShapeError


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def sigmoid(x: np.ndarray) -> np.ndarray:
    # split by sign so neither branch overflows
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def glorot_uniform(rng: np.random.Generator, fan_out: int, fan_in: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_out, fan_in))


def dense_forward(W: np.ndarray, b: np.ndarray, x: np.ndarray, activation: str = "relu"):
    x = np.asarray(x, dtype=np.float64)
    if W.ndim != 2 or b.shape != (W.shape[0],) or x.shape[-1] != W.shape[1]:
        raise ShapeError(f"dense: W {W.shape}, b {b.shape}, x {x.shape}")
    z = x @ W.T + b
    if activation == "relu":
        y = relu(z)
    elif activation == "sigmoid":
        y = sigmoid(z)
    elif activation == "linear":
        y = z
    else:
        raise ValueError(f"unknown activation {activation!r}")
    return y, (W, x, z, y, activation)


def dense_backward(dy: np.ndarray, cache):
    """Gradients (dx, dW, db); ``x`` may carry any number of leading axes."""
    W, x, z, y, activation = cache
    if activation == "relu":
        dz = dy * (z > 0)
    elif activation == "sigmoid":
        dz = dy * y * (1.0 - y)
    else:
        dz = dy
    dz2 = dz.reshape(-1, dz.shape[-1])
    x2 = x.reshape(-1, x.shape[-1])
    return dz @ W, dz2.T @ x2, dz2.sum(axis=0)


def time_distributed_dense(W: np.ndarray, b: np.ndarray, seq: np.ndarray, activation: str = "relu"):
    """The same dense map applied to every timestep of ``seq`` (..., T, d)."""
    seq = np.asarray(seq, dtype=np.float64)
    if seq.ndim < 2:
        raise ShapeError(f"time-distributed dense needs a (T, d) sequence, got {seq.shape}")
    return dense_forward(W, b, seq, activation)


time_distributed_backward = dense_backward


def lstm_init(rng: np.random.Generator, input_dim: int, units: int) -> dict[str, np.ndarray]:
    """Gate blocks stacked as [input, forget, candidate, output]; forget bias starts at 1."""
    b = np.zeros(4 * units)
    b[units:2 * units] = 1.0
    return {
        "W": glorot_uniform(rng, 4 * units, input_dim),
        "U": glorot_uniform(rng, 4 * units, units),
        "b": b,
    }


def lstm_forward(params: dict[str, np.ndarray], seq: np.ndarray, mask: np.ndarray | None = None):
    """Final hidden state of a zero-initialised LSTM over ``seq`` (B, T, d) or (T, d).

    Steps with ``mask == 0`` carry the previous state through unchanged.
    """
    W, U, b = params["W"], params["U"], params["b"]
    seq = np.asarray(seq, dtype=np.float64)
    single = seq.ndim == 2
    if single:
        seq = seq[None]
        if mask is not None:
            mask = np.asarray(mask)[None]
    if seq.ndim != 3 or seq.shape[1] < 1:
        raise ShapeError(f"lstm: expected (B, T>=1, d) input, got {seq.shape}")
    B, T, D = seq.shape
    H = U.shape[1]
    if W.shape != (4 * H, D) or U.shape != (4 * H, H) or b.shape != (4 * H,):
        raise ShapeError(f"lstm: W {W.shape}, U {U.shape}, b {b.shape} for input dim {D}")
    if mask is None:
        mask = np.ones((B, T), dtype=bool)
    mask = np.asarray(mask).astype(bool)
    if mask.shape != (B, T):
        raise ShapeError(f"lstm: mask {mask.shape} does not match input {(B, T)}")

    h = np.zeros((B, H))
    c = np.zeros((B, H))
    steps = []
    for t in range(T):
        # per-step products keep results independent of the padded length
        z = seq[:, t] @ W.T + h @ U.T + b
        i = sigmoid(z[:, :H])
        f = sigmoid(z[:, H:2 * H])
        g = np.tanh(z[:, 2 * H:3 * H])
        o = sigmoid(z[:, 3 * H:])
        c_new = f * c + i * g
        tc = np.tanh(c_new)
        h_new = o * tc
        m = mask[:, t:t + 1]
        steps.append((h, c, i, f, g, o, tc, m))
        h = np.where(m, h_new, h)
        c = np.where(m, c_new, c)
    cache = (params, seq, steps, single)
    return (h[0] if single else h), cache


def lstm_backward(dh: np.ndarray, cache):
    """Backpropagation through time; returns (dseq, {"W", "U", "b"} grads)."""
    params, seq, steps, single = cache
    W, U = params["W"], params["U"]
    H = U.shape[1]
    dh = np.atleast_2d(np.asarray(dh, dtype=np.float64))
    dc = np.zeros_like(dh)
    dW = np.zeros_like(W)
    dU = np.zeros_like(U)
    db = np.zeros(4 * H)
    dseq = np.zeros_like(seq)
    for t in range(len(steps) - 1, -1, -1):
        h_prev, c_prev, i, f, g, o, tc, m = steps[t]
        dh_new = np.where(m, dh, 0.0)
        dc_new = np.where(m, dc, 0.0) + dh_new * o * (1.0 - tc * tc)
        dz = np.concatenate([
            dc_new * g * i * (1.0 - i),
            dc_new * c_prev * f * (1.0 - f),
            dc_new * i * (1.0 - g * g),
            dh_new * tc * o * (1.0 - o),
        ], axis=1)
        dW += dz.T @ seq[:, t]
        dU += dz.T @ h_prev
        db += dz.sum(axis=0)
        dseq[:, t] = dz @ W
        dh = np.where(m, 0.0, dh) + dz @ U
        dc = np.where(m, 0.0, dc) + dc_new * f
    if single:
        dseq = dseq[0]
    return dseq, {"W": dW, "U": dU, "b": db}


def concat_forward(a: np.ndarray, b: np.ndarray):
    return np.concatenate([a, b], axis=-1), a.shape[-1]


def concat_backward(dy: np.ndarray, split: int):
    return dy[..., :split], dy[..., split:]
