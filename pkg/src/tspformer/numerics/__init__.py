"""Dense tensors with reverse-mode gradients, transformer layers and AdamW."""

from .functional import (
    ConfigError,
    DegenerateMaskError,
    LabelMaskError,
    cross_entropy_smoothed,
    dropout,
    ffn,
    layer_norm,
    linear,
    log_softmax_masked,
    multi_head_attention,
    softmax_masked,
)
from .gradcheck import grad_check, gradients
from .layers import FeedForward, LayerNorm, Linear, Module, MultiHeadAttention
from .optim import AdamW, adamw_step
from .tensor import (
    NumericError,
    Parameter,
    ShapeError,
    Tensor,
    as_tensor,
    concat,
    default_dtype,
    gather_rows,
    matmul,
    no_grad,
    precision,
    set_default_dtype,
)

__all__ = [
    "AdamW",
    "ConfigError",
    "DegenerateMaskError",
    "FeedForward",
    "LabelMaskError",
    "LayerNorm",
    "Linear",
    "Module",
    "MultiHeadAttention",
    "NumericError",
    "Parameter",
    "ShapeError",
    "Tensor",
    "adamw_step",
    "as_tensor",
    "concat",
    "cross_entropy_smoothed",
    "default_dtype",
    "dropout",
    "ffn",
    "gather_rows",
    "grad_check",
    "gradients",
    "layer_norm",
    "linear",
    "log_softmax_masked",
    "matmul",
    "multi_head_attention",
    "no_grad",
    "precision",
    "set_default_dtype",
    "softmax_masked",
]
