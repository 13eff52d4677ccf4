"""Minimal reverse-mode autodiff engine (float64 throughout)."""

from .lstm import lstm_sequence, lstm_sequence_batch
from .ops import (add_channel_bias, add_channel_bias_batch, concat, concat_columns, conv2d,
                  conv2d_batch, depthwise_conv2d, depthwise_conv2d_batch, global_avg_pool,
                  global_avg_pool_batch, linear, linear_batch, mse_loss, relu, scale_shift,
                  squeeze_column)
from .optim import CHECKPOINT_MAGIC, ParamStore, adam_step, load_checkpoint, save_checkpoint
from .rng import SeededRng
from .tensor import Tensor, as_tensor, debug_enabled, no_grad, set_debug

__all__ = [
    "Tensor", "as_tensor", "no_grad", "set_debug", "debug_enabled",
    "conv2d", "depthwise_conv2d", "add_channel_bias", "linear", "relu",
    "global_avg_pool", "concat", "mse_loss", "scale_shift", "lstm_sequence",
    "conv2d_batch", "depthwise_conv2d_batch", "add_channel_bias_batch",
    "global_avg_pool_batch", "linear_batch", "concat_columns", "squeeze_column",
    "lstm_sequence_batch",
    "ParamStore", "adam_step", "save_checkpoint", "load_checkpoint", "CHECKPOINT_MAGIC",
    "SeededRng",
]
