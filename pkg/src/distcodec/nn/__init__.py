"""Autodiff engine, layers and training for the distribution compressor."""
from .autodiff import Tensor, parameter
from .layers import (
    add_uniform_noise,
    channel_shuffle,
    channel_unshuffle,
    conv1d,
    conv1d_transposed,
    histogram_node,
    interp_pmf_lookup,
)
from .training import Adam, TrainConfig, compressor_loss, lambda_q, q_rate_loss, rate_loss, train, train_step
from .transforms import TransformConfig, count_params, init_params, parameter_shapes

__all__ = [
    "Adam", "Tensor", "TrainConfig", "TransformConfig", "add_uniform_noise", "channel_shuffle",
    "channel_unshuffle", "compressor_loss", "conv1d", "conv1d_transposed", "count_params",
    "histogram_node", "init_params", "interp_pmf_lookup", "lambda_q", "parameter",
    "parameter_shapes", "q_rate_loss", "rate_loss", "train", "train_step",
]
