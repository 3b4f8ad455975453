import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from icebreaker.errors import DegenerateInput, ShapeError
from icebreaker.neuralnet.adam import Adam, AdamState, adam_step
from icebreaker.neuralnet.layers import (
    concat_backward,
    concat_forward,
    dense_backward,
    dense_forward,
    glorot_uniform,
    lstm_backward,
    lstm_forward,
    lstm_init,
    sigmoid,
    time_distributed_backward,
    time_distributed_dense,
)
from icebreaker.neuralnet.losses import batch_loss, cosine_proximity_loss, poisson_loss

H = 1e-5


def numgrad(f, x, h=H):
    """Central differences of scalar f with respect to array x (perturbed in place)."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + h
        fp = f()
        x[i] = old - h
        fm = f()
        x[i] = old
        g[i] = (fp - fm) / (2 * h)
    return g


def rel_err(a, b):
    return np.max(np.abs(a - b)) / max(np.max(np.abs(a)), np.max(np.abs(b)), 1e-12)


def test_dense_identity_relu():
    y, _ = dense_forward(np.eye(2), np.zeros(2), np.array([1.0, -2.0]))
    assert y.tolist() == [1.0, 0.0]
    with pytest.raises(ShapeError):
        dense_forward(np.eye(2), np.zeros(2), np.ones(3))


def test_time_distributed_matches_per_step(rng):
    W, b = rng.normal(size=(4, 3)), rng.normal(size=4)
    seq = rng.normal(size=(3, 3))
    y, _ = time_distributed_dense(W, b, seq)
    for t in range(3):
        np.testing.assert_allclose(y[t], dense_forward(W, b, seq[t])[0], rtol=0, atol=1e-12)


@pytest.mark.parametrize("act", ["relu", "sigmoid", "linear"])
def test_dense_gradients(rng, act):
    W, b = rng.normal(size=(4, 5)), rng.normal(size=4)
    x = rng.normal(size=(3, 5))
    R = rng.normal(size=(3, 4))

    def f():
        return float((dense_forward(W, b, x, act)[0] * R).sum())

    _, cache = dense_forward(W, b, x, act)
    dx, dW, db = dense_backward(R, cache)
    assert rel_err(dW, numgrad(f, W)) < 1e-4
    assert rel_err(db, numgrad(f, b)) < 1e-4
    assert rel_err(dx, numgrad(f, x)) < 1e-4


def test_time_distributed_gradients(rng):
    W, b = rng.normal(size=(3, 2)), rng.normal(size=3)
    seq = rng.normal(size=(2, 4, 2))

    def f():
        return float(time_distributed_dense(W, b, seq)[0].sum())

    _, cache = time_distributed_dense(W, b, seq)
    dseq, dW, db = time_distributed_backward(np.ones((2, 4, 3)), cache)
    assert rel_err(dW, numgrad(f, W)) < 1e-4
    assert rel_err(db, numgrad(f, b)) < 1e-4
    assert rel_err(dseq, numgrad(f, seq)) < 1e-4


def test_concat_round_trip(rng):
    a, b = rng.normal(size=(2, 3)), rng.normal(size=(2, 4))
    y, split = concat_forward(a, b)
    da, db = concat_backward(y, split)
    np.testing.assert_array_equal(da, a)
    np.testing.assert_array_equal(db, b)


def test_sigmoid_stable_and_in_range():
    x = np.array([-1000.0, -30.0, 0.0, 30.0, 1000.0])
    s = sigmoid(x)
    assert np.all(np.isfinite(s)) and s[2] == 0.5
    assert np.all((s[1:4] > 0) & (s[1:4] < 1))


def test_glorot_bounds(rng):
    W = glorot_uniform(rng, 30, 50)
    assert W.shape == (30, 50)
    assert np.abs(W).max() <= math.sqrt(6 / 80)


def test_lstm_zero_weights_give_zero_state(rng):
    p = {"W": np.zeros((8, 3)), "U": np.zeros((8, 2)), "b": np.zeros(8)}
    h, _ = lstm_forward(p, rng.normal(size=(5, 3)))
    assert h.tolist() == [0.0, 0.0]


def test_lstm_one_step_hand_evaluation():
    # 1 unit, 1 input; gate order i, f, g, o
    wi, wf, wg, wo = 0.5, -0.3, 0.8, 0.2
    bi, bf, bg, bo = 0.1, 1.0, -0.2, 0.05
    p = {"W": np.array([[wi], [wf], [wg], [wo]]), "U": np.array([[0.7], [0.1], [-0.4], [0.3]]),
         "b": np.array([bi, bf, bg, bo])}
    x = 1.5
    sig = lambda z: 1 / (1 + math.exp(-z))
    i, g, o = sig(wi * x + bi), math.tanh(wg * x + bg), sig(wo * x + bo)
    c = i * g  # c0 = 0 so the forget gate drops out
    expected = o * math.tanh(c)
    h, _ = lstm_forward(p, np.array([[x]]))
    assert abs(h[0] - expected) < 1e-12


def test_lstm_bptt_gradients(rng):
    p = lstm_init(rng, 2, 3)
    p["b"] = p["b"] + rng.normal(scale=0.3, size=12)
    seq = rng.normal(size=(2, 4, 2))
    mask = np.array([[1, 1, 1, 1], [1, 1, 0, 0]], dtype=bool)
    R = rng.normal(size=(2, 3))

    def f():
        return float((lstm_forward(p, seq, mask)[0] * R).sum())

    _, cache = lstm_forward(p, seq, mask)
    dseq, grads = lstm_backward(R, cache)
    for k in ("W", "U", "b"):
        assert rel_err(grads[k], numgrad(f, p[k])) < 1e-4, k
    assert rel_err(dseq, numgrad(f, seq)) < 1e-4
    # padded steps receive no gradient
    assert np.all(dseq[1, 2:] == 0)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 6), st.integers(1, 5))
def test_lstm_padding_invariance(seed, T, pad):
    rng = np.random.default_rng(seed)
    p = lstm_init(rng, 3, 4)
    seq = rng.normal(size=(T, 3))
    h, _ = lstm_forward(p, seq)
    padded = np.vstack([seq, np.zeros((pad, 3))])
    mask = np.r_[np.ones(T, bool), np.zeros(pad, bool)]
    hp, _ = lstm_forward(p, padded, mask)
    assert np.array_equal(h, hp)


def test_lstm_shape_errors(rng):
    p = lstm_init(rng, 3, 2)
    with pytest.raises(ShapeError):
        lstm_forward(p, np.zeros((4, 5)))
    with pytest.raises(ShapeError):
        lstm_forward(p, np.zeros((0, 3)))


def test_cosine_loss_examples(rng):
    loss, grad = cosine_proximity_loss([1.0, 0.0], [1.0, 0.0])
    assert loss == -1.0 and grad[1] == 0.0
    assert cosine_proximity_loss([1.0, 0.0], [0.0, 2.0])[0] == 0.0
    with pytest.raises(DegenerateInput):
        cosine_proximity_loss([0.0, 0.0], [1.0, 0.0])
    p, t = rng.normal(size=10), rng.random(10)
    _, g = cosine_proximity_loss(p, t)
    assert rel_err(g, numgrad(lambda: cosine_proximity_loss(p, t)[0], p, h=1e-6)) < 1e-6


def test_poisson_loss_examples(rng):
    assert poisson_loss([1.0, 1.0], [1.0, 1.0])[0] == 1.0
    p = np.array([0.2, 0.7, 0.4])
    assert poisson_loss(p, np.zeros(3))[0] == pytest.approx(p.mean(), abs=1e-15)
    with pytest.raises(DegenerateInput):
        poisson_loss([np.nan, 1.0], [0.0, 1.0])
    p, t = rng.random(10) + 0.1, rng.integers(0, 2, 10).astype(float)
    _, g = poisson_loss(p, t)
    assert rel_err(g, numgrad(lambda: poisson_loss(p, t)[0], p, h=1e-6)) < 1e-6


@pytest.mark.parametrize("name", ["cosine_proximity", "poisson"])
def test_sigmoid_head_and_batch_loss_gradient(rng, name):
    W, b = rng.normal(size=(5, 4)), rng.normal(size=5)
    x = rng.normal(size=(3, 4))
    T = rng.integers(0, 2, (3, 5)).astype(float)
    T[:, 0] = 1.0

    def f():
        return batch_loss(name, dense_forward(W, b, x, "sigmoid")[0], T)[0]

    y, cache = dense_forward(W, b, x, "sigmoid")
    assert np.all((y > 0) & (y < 1))
    _, dy = batch_loss(name, y, T)
    dx, dW, db = dense_backward(dy, cache)
    assert rel_err(dW, numgrad(f, W)) < 1e-4
    assert rel_err(dx, numgrad(f, x)) < 1e-4


def test_adam_first_step():
    new, st_ = adam_step(np.array(0.0), np.array(1.0), AdamState.zeros_like(np.array(0.0)), 0.001)
    assert float(new) == pytest.approx(-0.001, rel=1e-6)
    assert st_.t == 1


def test_adam_zero_gradient():
    p = np.array([1.0, -2.0])
    new, st_ = adam_step(p, np.zeros(2), AdamState.zeros_like(p), 0.01)
    assert np.array_equal(new, p) and st_.t == 1


def test_adam_quadratic():
    params = {"w": np.array(1.0)}
    opt = Adam(params, lr=0.1)
    for _ in range(200):
        opt.step(params, {"w": 2 * params["w"]})
    assert abs(float(params["w"])) < 0.05


def test_adam_rejects_bad_input():
    with pytest.raises(ValueError):
        adam_step(np.zeros(2), np.zeros(2), AdamState.zeros_like(np.zeros(2)), 0.0)
    with pytest.raises(ValueError):
        adam_step(np.zeros(2), np.zeros(3), AdamState.zeros_like(np.zeros(2)), 0.1)
