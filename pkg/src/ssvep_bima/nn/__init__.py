"""Minimal differentiable primitives with exact analytic gradients."""

from .autodiff import (
    ParamStore,
    Tape,
    Tensor,
    add,
    add_constant,
    as_tensor,
    channel_mix,
    concat,
    cross_entropy_loss,
    dropout,
    gelu,
    layer_norm,
    linear,
    multi_head_attention,
    reshape,
    scale,
    softmax,
    transpose_last,
)
from .functional import (
    attention_mask,
    cross_entropy,
    dropout_forward,
    gelu_forward,
    layer_norm_forward,
    linear_forward,
    masked_attention,
    positional_encoding,
    softmax_rows,
)
from .gradcheck import grad_check, relative_error

__all__ = [
    "ParamStore",
    "Tape",
    "Tensor",
    "add",
    "add_constant",
    "as_tensor",
    "attention_mask",
    "channel_mix",
    "concat",
    "cross_entropy",
    "cross_entropy_loss",
    "dropout",
    "dropout_forward",
    "gelu",
    "gelu_forward",
    "grad_check",
    "layer_norm",
    "layer_norm_forward",
    "linear",
    "linear_forward",
    "masked_attention",
    "multi_head_attention",
    "positional_encoding",
    "relative_error",
    "reshape",
    "scale",
    "softmax",
    "softmax_rows",
    "transpose_last",
]
