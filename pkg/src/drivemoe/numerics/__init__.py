"""Dense-array autodiff substrate: tensors, layers, optimizer, gradient oracle."""

from .gradcheck import finite_diff_check, numeric_gradient
from .nn import MLP, Attention, EncoderBlock, LayerNorm, Linear, Module
from .optim import Adam, OptimizerConfig, clip_gradients, global_grad_norm, optimizer_step, warmup_rate
from .tensor import (
    FLOAT32,
    FLOAT64,
    NumericsError,
    Parameter,
    Tensor,
    as_tensor,
    backprop,
    concat,
    grad_enabled,
    layer_norm,
    no_grad,
    scatter_rows,
    stack,
    where,
)

__all__ = [
    "Adam", "Attention", "EncoderBlock", "FLOAT32", "FLOAT64", "LayerNorm", "Linear", "MLP",
    "Module", "NumericsError", "OptimizerConfig", "Parameter", "Tensor", "as_tensor", "backprop",
    "clip_gradients", "concat", "finite_diff_check", "global_grad_norm", "grad_enabled",
    "layer_norm", "no_grad", "numeric_gradient", "optimizer_step", "scatter_rows", "stack",
    "warmup_rate", "where",
]
