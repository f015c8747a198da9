"""Dense tensors, reverse-mode differentiation and network primitives."""

from .gradcheck import GradCheckReport, finite_diff_check
from .ops import (
    BatchNormState,
    LayerNormState,
    batchnorm2d,
    bce_loss,
    concat,
    conv2d,
    elementwise,
    gelu,
    global_avg_pool,
    layernorm,
    linear,
    maps_from_tokens,
    maxpool2d,
    sigmoid,
    softmax,
    tokens_from_maps,
)
from .tensor import (
    Tensor,
    add,
    as_tensor,
    backward,
    default_dtype,
    get_numeric_mode,
    matmul,
    multiply,
    no_grad,
    numeric_mode,
    relu,
    reshape,
    scale,
    set_numeric_mode,
    subtract,
    transpose,
)

__all__ = [
    'Tensor',
    'as_tensor',
    'backward',
    'no_grad',
    'numeric_mode',
    'set_numeric_mode',
    'get_numeric_mode',
    'default_dtype',
    'add',
    'subtract',
    'multiply',
    'scale',
    'relu',
    'reshape',
    'transpose',
    'matmul',
    'BatchNormState',
    'LayerNormState',
    'conv2d',
    'maxpool2d',
    'batchnorm2d',
    'layernorm',
    'linear',
    'softmax',
    'sigmoid',
    'gelu',
    'elementwise',
    'concat',
    'global_avg_pool',
    'tokens_from_maps',
    'maps_from_tokens',
    'bce_loss',
    'GradCheckReport',
    'finite_diff_check',
]
