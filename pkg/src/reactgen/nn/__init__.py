from .ops import (
    MultiHeadSelfAttention,
    ShapeError,
    causal_attention_weights,
    causal_self_attention,
    embedding_lookup,
    forward_conv1d,
    forward_linear,
    gelu,
    layer_norm,
)
from .optim import AdamOptimizer, MissingGradientError
from .gradcheck import GradCheckReport, finite_difference_check
from .checkpoint import (
    CheckpointFormatError,
    load_checkpoint,
    load_into_module,
    save_checkpoint,
    save_module,
)

__all__ = [
    "MultiHeadSelfAttention", "ShapeError", "causal_attention_weights",
    "causal_self_attention", "embedding_lookup", "forward_conv1d",
    "forward_linear", "gelu", "layer_norm",
    "AdamOptimizer", "MissingGradientError",
    "GradCheckReport", "finite_difference_check",
    "CheckpointFormatError", "load_checkpoint", "load_into_module",
    "save_checkpoint", "save_module",
]
