"""Attention encoder-decoder with hand-written backpropagation."""
from .params import (
    CHECKPOINT_FORMAT_VERSION, PRESETS, ModelConfig, ModelParameters, ShapeError,
    clip_gradients, global_norm, init_params, load_checkpoint, param_shapes,
    save_checkpoint, sgd_step,
)
from .network import (
    ForwardRecord, NonFiniteError, StaleRecordError, backward, encode, forward_nll,
)
from .decode import beam_decode, combine_log_probs, greedy_decode

__all__ = [
    "CHECKPOINT_FORMAT_VERSION", "PRESETS", "ModelConfig", "ModelParameters",
    "ShapeError", "clip_gradients", "global_norm", "init_params", "load_checkpoint",
    "param_shapes", "save_checkpoint", "sgd_step", "ForwardRecord", "NonFiniteError",
    "StaleRecordError", "backward", "encode", "forward_nll", "beam_decode",
    "combine_log_probs", "greedy_decode",
]
