"""Attention-based encoder-decoder on the autodiff engine."""

from ..network import ModelConfig, init_params, param_shapes
from .seq2seq import (
    TensorOps,
    bind,
    decode_step,
    encode,
    forward_nll,
    generator_factored,
    global_attention,
    gru_step,
    lstm_step,
    stack_decoder,
)

__all__ = [
    "ModelConfig", "TensorOps", "bind", "decode_step", "encode", "forward_nll",
    "generator_factored", "global_attention", "gru_step", "init_params", "lstm_step",
    "param_shapes", "stack_decoder",
]
