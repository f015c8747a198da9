"""Convolutional building blocks of both streams and the content head."""

from typing import Dict, Optional

from engine import Tensor, batchnorm2d, concat, conv2d, maxpool2d, relu, subtract
from engine.tensor import add
from utils.errors import DimensionError

from .parameters import ModelParameters


def _require_even(x: Tensor, block: str) -> None:
    if x.ndim != 4:
        raise DimensionError(f"{block}: expected N×C×H×W input, got {x.shape}")
    h, w = x.shape[2], x.shape[3]
    if h % 2 or w % 2:
        raise DimensionError(f"{block}: height/width (axes 2, 3) must be even, got {h}×{w}")


def _conv_bn_relu(x: Tensor, params: ModelParameters, conv: str, bn: str, training: bool) -> Tensor:
    weight, bias = params.layer(conv)
    y = conv2d(x, weight, bias, stride=1, padding=1)
    return relu(batchnorm2d(y, params.batch_norms[bn], training))


def module_a_forward(x: Tensor, params: ModelParameters, prefix: str, training: bool = False) -> Tensor:
    """Two conv3×3-BN-ReLU groups then a 3×3/stride-2 max pool; halves H and W."""
    _require_even(x, prefix)
    y = _conv_bn_relu(x, params, f"{prefix}.conv1", f"{prefix}.bn1", training)
    y = _conv_bn_relu(y, params, f"{prefix}.conv2", f"{prefix}.bn2", training)
    return maxpool2d(y, k=3, stride=2, padding=1)


def module_b1_forward(x: Tensor, params: ModelParameters, prefix: str, training: bool = False) -> Tensor:
    """
    Pooling branch (conv-BN-ReLU-maxpool) plus convolutional branch
    (stride-2 conv), summed and passed through ReLU.
    """
    _require_even(x, prefix)
    pooled = maxpool2d(
        _conv_bn_relu(x, params, f"{prefix}.pool_conv", f"{prefix}.pool_bn", training), k=3, stride=2, padding=1
    )
    weight, bias = params.layer(f"{prefix}.down_conv")
    strided = conv2d(x, weight, bias, stride=2, padding=1)
    if pooled.shape != strided.shape:
        raise DimensionError(f"{prefix}: branch shapes differ {pooled.shape} vs {strided.shape}")
    return relu(add(pooled, strided))


def module_b2_forward(x: Tensor, params: ModelParameters, prefix: str, training: bool = False) -> Tensor:
    """conv3×3-BN-ReLU then 3×3/stride-2 max pool."""
    _require_even(x, prefix)
    y = _conv_bn_relu(x, params, f"{prefix}.conv", f"{prefix}.bn", training)
    return maxpool2d(y, k=3, stride=2, padding=1)


def content_head_forward(
    rgb: Tensor,
    params: ModelParameters,
    prefix: str = "content.head",
    trace: Optional[Dict[str, Tensor]] = None,
) -> Tensor:
    """
    Build the 12-channel content input from RGB.

    mix = conv1×1(rgb); l = [mix, rgb]; l~ = l - conv3×3(l);
    out = [l~, conv3×3(l~)].
    """
    if rgb.ndim != 4 or rgb.shape[1] != 3:
        raise DimensionError(f"content head expects N×3×s×s input, got {rgb.shape}")
    mix_w, mix_b = params.layer(f"{prefix}.mix")
    diff_w, diff_b = params.layer(f"{prefix}.diff")
    refine_w, refine_b = params.layer(f"{prefix}.refine")

    mixed = concat([conv2d(rgb, mix_w, mix_b), rgb], axis=1)
    difference = subtract(mixed, conv2d(mixed, diff_w, diff_b, padding=1))
    out = concat([difference, conv2d(difference, refine_w, refine_b, padding=1)], axis=1)
    if trace is not None:
        trace["content.difference"] = difference
    return out
