"""Dense-tensor autodiff and the layers the trajectory heads are built on."""

from .tensor import (DimensionError, GraphStateError, NumericError, Tensor, as_tensor,
                     backward, check_finite)
from .layers import (ConfigError, LayerNorm, Linear, MLP, MultiHeadAttention, ParamStore,
                     Transformer, TransformerConfig, affine, multi_head_attention,
                     transformer_forward)
from .optim import Adam, adam_step
from . import checkpoint, tensor

__all__ = [
    "Adam", "ConfigError", "DimensionError", "GraphStateError", "LayerNorm", "Linear", "MLP",
    "MultiHeadAttention", "NumericError", "ParamStore", "Tensor", "Transformer",
    "TransformerConfig", "adam_step", "affine", "as_tensor", "backward", "check_finite",
    "checkpoint", "multi_head_attention", "tensor", "transformer_forward",
]
