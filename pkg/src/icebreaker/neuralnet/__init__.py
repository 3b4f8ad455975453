"""Minimal numpy layer engine and the two-branch regression model."""

from .adam import Adam, AdamState, adam_step
from .layers import (
    dense_backward,
    dense_forward,
    lstm_backward,
    lstm_forward,
    sigmoid,
    time_distributed_backward,
    time_distributed_dense,
)
from .losses import cosine_proximity_loss, poisson_loss
from .regression import (
    RegressionModel,
    RegressionNetConfig,
    build_and_train_regression,
    dump_regression,
    init_regression,
    load_regression,
    parse_regression,
    predict_many,
    predict_regression,
    save_regression,
)
