"""Network layer primitives with hand-written backward rules."""

import logging
import math
from dataclasses import dataclass
from typing import List, Optional, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from utils.errors import ArgumentError, DimensionError, StatisticsError

from .tensor import Tensor, add, as_tensor, relu, reshape, scale, subtract, transpose

logger = logging.getLogger(__name__)

BN_MOMENTUM = 0.1
BN_EPS = 1e-5
LN_EPS = 1e-6
PROB_EPS = 1e-7


@dataclass
class BatchNormState:
    """Affine parameters and running statistics of one batch-norm layer."""

    gamma: Tensor
    beta: Tensor
    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = BN_MOMENTUM
    eps: float = BN_EPS

    def __post_init__(self):
        channels = {self.gamma.size, self.beta.size, self.running_mean.size, self.running_var.size}
        if len(channels) != 1:
            raise DimensionError(f"BatchNormState arrays differ in length: {sorted(channels)}")
        if not 0.0 < self.momentum < 1.0:
            raise ArgumentError(f"BatchNorm momentum must lie in (0, 1), got {self.momentum}")
        if self.eps <= 0:
            raise ArgumentError(f"BatchNorm eps must be positive, got {self.eps}")

    @property
    def channels(self) -> int:
        return self.gamma.size


@dataclass
class LayerNormState:
    """Affine parameters of one layer-norm layer."""

    gamma: Tensor
    beta: Tensor
    eps: float = LN_EPS

    def __post_init__(self):
        if self.gamma.size != self.beta.size:
            raise DimensionError(f"LayerNormState gamma/beta differ: {self.gamma.size} vs {self.beta.size}")
        if self.eps <= 0:
            raise ArgumentError(f"LayerNorm eps must be positive, got {self.eps}")

    @property
    def width(self) -> int:
        return self.gamma.size


def conv2d(
    input: Tensor,
    weight: Tensor,
    bias: Optional[Tensor] = None,
    stride: int = 1,
    padding: int = 0,
) -> Tensor:
    """
    2-D cross-correlation with zero padding.

    Args:
        input: N×Cin×H×W
        weight: Cout×Cin×kh×kw
        bias: optional Cout
        stride: step between windows
        padding: zero rows/columns added on every side

    Returns:
        N×Cout×H'×W' with H' = floor((H + 2p - kh) / stride) + 1
    """
    if input.ndim != 4 or weight.ndim != 4:
        raise DimensionError(f"conv2d expects 4-d input and weight, got {input.shape} and {weight.shape}")
    if stride < 1 or padding < 0:
        raise ArgumentError(f"conv2d: stride must be >= 1 and padding >= 0, got {stride}, {padding}")
    n, cin, h, w = input.shape
    cout, wcin, kh, kw = weight.shape
    if wcin != cin:
        raise DimensionError(f"conv2d: input channels (axis 1) {cin} != weight channels (axis 1) {wcin}")
    if kh > h + 2 * padding or kw > w + 2 * padding:
        raise DimensionError(
            f"conv2d: kernel {kh}×{kw} exceeds padded height/width (axes 2, 3) {h + 2 * padding}×{w + 2 * padding}"
        )
    if bias is not None and bias.shape != (cout,):
        raise DimensionError(f"conv2d: bias shape {bias.shape} != ({cout},)")

    x = input.data
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x
    windows = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    ho, wo = windows.shape[2], windows.shape[3]
    out = np.tensordot(windows, weight.data, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)
    if bias is not None:
        out = out + bias.data[None, :, None, None]
    out = np.ascontiguousarray(out)

    def _backward(g: np.ndarray):
        grad_input = grad_weight = grad_bias = None
        if input.requires_grad:
            grad_padded = np.zeros_like(xp)
            for i in range(kh):
                for j in range(kw):
                    contribution = np.tensordot(g, weight.data[:, :, i, j], axes=([1], [0]))
                    grad_padded[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += (
                        contribution.transpose(0, 3, 1, 2)
                    )
            grad_input = grad_padded[:, :, padding:padding + h, padding:padding + w]
        if weight.requires_grad:
            grad_weight = np.tensordot(g, windows, axes=([0, 2, 3], [0, 2, 3]))
        if bias is not None and bias.requires_grad:
            grad_bias = g.sum(axis=(0, 2, 3))
        return grad_input, grad_weight, grad_bias

    parents = (input, weight) if bias is None else (input, weight, bias)
    return Tensor._from_op(out, parents, _backward, "conv2d")


def maxpool2d(input: Tensor, k: int = 3, stride: int = 2, padding: int = 1) -> Tensor:
    """
    Max pooling; padding cells count as -inf and ties route the gradient to
    the first maximal element of the window in row-major order.
    """
    if input.ndim != 4:
        raise DimensionError(f"maxpool2d expects a 4-d input, got {input.shape}")
    if padding > k // 2:
        raise DimensionError(f"maxpool2d: padding {padding} too large for window {k}")
    n, c, h, w = input.shape
    ho = (h + 2 * padding - k) // stride + 1
    wo = (w + 2 * padding - k) // stride + 1
    if ho <= 0 or wo <= 0:
        raise DimensionError(f"maxpool2d: degenerate output {ho}×{wo} for input {h}×{w}, k={k}")

    xp = np.pad(input.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)), constant_values=-np.inf)
    windows = sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::stride, ::stride][:, :, :ho, :wo]
    flat = windows.reshape(n, c, ho, wo, k * k)
    argmax = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, argmax[..., None], axis=-1)[..., 0]

    def _backward(g: np.ndarray):
        rows = np.arange(ho)[:, None] * stride + argmax // k
        cols = np.arange(wo)[None, :] * stride + argmax % k
        grad_padded = np.zeros(xp.shape, dtype=g.dtype)
        np.add.at(grad_padded, (np.arange(n)[:, None, None, None], np.arange(c)[None, :, None, None], rows, cols), g)
        return (grad_padded[:, :, padding:padding + h, padding:padding + w],)

    return Tensor._from_op(np.ascontiguousarray(out), (input,), _backward, "maxpool2d")


def batchnorm2d(input: Tensor, state: BatchNormState, training: bool) -> Tensor:
    """
    Per-channel batch normalization.

    Training mode normalizes with batch statistics over N, H, W and updates
    the running statistics (unbiased variance) by exponential moving average;
    inference mode uses the running statistics.
    """
    if input.ndim != 4:
        raise DimensionError(f"batchnorm2d expects a 4-d input, got {input.shape}")
    n, c, h, w = input.shape
    if c != state.channels:
        raise DimensionError(f"batchnorm2d: input channels {c} != state channels {state.channels}")
    x = input.data
    axes = (0, 2, 3)
    count = n * h * w

    if training:
        if count < 2:
            raise StatisticsError(f"batchnorm2d: batch statistics need N·H·W >= 2, got {count}")
        mean = x.mean(axis=axes)
        var = x.var(axis=axes)
        state.running_mean *= 1.0 - state.momentum
        state.running_mean += state.momentum * mean
        state.running_var *= 1.0 - state.momentum
        state.running_var += state.momentum * var * (count / (count - 1))
    else:
        mean = state.running_mean.astype(x.dtype, copy=False)
        var = state.running_var.astype(x.dtype, copy=False)

    inv_std = (1.0 / np.sqrt(var + state.eps)).astype(x.dtype)
    x_hat = (x - mean[None, :, None, None]) * inv_std[None, :, None, None]
    gamma = state.gamma.data[None, :, None, None]
    out = gamma * x_hat + state.beta.data[None, :, None, None]

    def _backward(g: np.ndarray):
        grad_x_hat = g * gamma
        if training:
            grad_input = (inv_std[None, :, None, None] / count) * (
                count * grad_x_hat
                - grad_x_hat.sum(axis=axes, keepdims=True)
                - x_hat * (grad_x_hat * x_hat).sum(axis=axes, keepdims=True)
            )
        else:
            grad_input = grad_x_hat * inv_std[None, :, None, None]
        return grad_input, (g * x_hat).sum(axis=axes), g.sum(axis=axes)

    return Tensor._from_op(out, (input, state.gamma, state.beta), _backward, "batchnorm2d")


def layernorm(tokens: Tensor, state: LayerNormState) -> Tensor:
    """Standardize every token over its last axis, then scale and shift."""
    d = tokens.shape[-1]
    if d != state.width:
        raise DimensionError(f"layernorm: token width {d} != state width {state.width}")
    x = tokens.data
    mean = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + state.eps)
    x_hat = (x - mean) * inv_std
    out = state.gamma.data * x_hat + state.beta.data
    lead = tuple(range(x.ndim - 1))

    def _backward(g: np.ndarray):
        grad_x_hat = g * state.gamma.data
        grad_input = (inv_std / d) * (
            d * grad_x_hat
            - grad_x_hat.sum(axis=-1, keepdims=True)
            - x_hat * (grad_x_hat * x_hat).sum(axis=-1, keepdims=True)
        )
        return grad_input, (g * x_hat).sum(axis=lead), g.sum(axis=lead)

    return Tensor._from_op(out, (tokens, state.gamma, state.beta), _backward, "layernorm")


def linear(input: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """Affine map of the last axis: input @ weight + bias, weight is Din×Dout."""
    if weight.ndim != 2 or input.ndim < 1 or input.shape[-1] != weight.shape[0]:
        raise DimensionError(f"linear: trailing axis of {input.shape} does not match weight {weight.shape}")
    din, dout = weight.shape
    if bias is not None and bias.shape != (dout,):
        raise DimensionError(f"linear: bias shape {bias.shape} != ({dout},)")
    out = input.data @ weight.data
    if bias is not None:
        out = out + bias.data

    def _backward(g: np.ndarray):
        flat_g = g.reshape(-1, dout)
        grad_input = g @ weight.data.T if input.requires_grad else None
        grad_weight = input.data.reshape(-1, din).T @ flat_g if weight.requires_grad else None
        grad_bias = flat_g.sum(axis=0) if bias is not None and bias.requires_grad else None
        return grad_input, grad_weight, grad_bias

    parents = (input, weight) if bias is None else (input, weight, bias)
    return Tensor._from_op(out, parents, _backward, "linear")


def softmax(input: Tensor, axis: int = -1) -> Tensor:
    """Numerically stable softmax (max-subtraction) along `axis`."""
    if not -input.ndim <= axis < input.ndim:
        raise DimensionError(f"softmax: axis {axis} invalid for {input.ndim}-d tensor")
    shifted = input.data - input.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def _backward(g: np.ndarray):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return Tensor._from_op(out, (input,), _backward, "softmax")


def sigmoid(input: Tensor) -> Tensor:
    x = input.data
    e = np.exp(-np.abs(x))
    out = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(x.dtype)

    def _backward(g: np.ndarray):
        return (g * out * (1.0 - out),)

    return Tensor._from_op(out, (input,), _backward, "sigmoid")


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(input: Tensor) -> Tensor:
    """Gaussian-error linear unit, tanh form."""
    x = input.data
    inner = _GELU_C * (x + 0.044715 * x ** 3)
    t = np.tanh(inner)
    out = 0.5 * x * (1.0 + t)

    def _backward(g: np.ndarray):
        d_inner = _GELU_C * (1.0 + 3 * 0.044715 * x ** 2)
        return (g * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t ** 2) * d_inner),)

    return Tensor._from_op(out.astype(x.dtype), (input,), _backward, "gelu")


def elementwise(op: str, a: Tensor, b: Optional[Tensor] = None, c: Optional[float] = None) -> Tensor:
    """
    Dispatch a pointwise operation by name.

    Args:
        op: one of "add", "subtract", "relu", "scale"
        a: first operand
        b: second operand for binary ops
        c: constant for "scale"
    """
    if op in ("add", "subtract"):
        if b is None:
            raise ArgumentError(f"elementwise '{op}' needs two operands")
        return add(a, b) if op == "add" else subtract(a, b)
    if op == "relu":
        return relu(a)
    if op == "scale":
        if c is None:
            raise ArgumentError("elementwise 'scale' needs a constant")
        return scale(a, c)
    raise ArgumentError(f"Unknown elementwise op '{op}'. Supported: add, subtract, relu, scale")


def concat(tensors: List[Tensor], axis: int) -> Tensor:
    """Join tensors along `axis`; every other axis must match."""
    if not tensors:
        raise ArgumentError("concat needs at least one tensor")
    first = tensors[0]
    ndim = first.ndim
    axis = axis % ndim
    for t in tensors[1:]:
        if t.ndim != ndim or any(t.shape[i] != first.shape[i] for i in range(ndim) if i != axis):
            raise DimensionError(f"concat: shapes {first.shape} and {t.shape} differ off axis {axis}")
    out = np.concatenate([t.data for t in tensors], axis=axis)
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def _backward(g: np.ndarray):
        return tuple(np.split(g, bounds, axis=axis))

    return Tensor._from_op(out, tuple(tensors), _backward, "concat")


def global_avg_pool(input: Tensor) -> Tensor:
    """N×C×H×W -> N×C spatial mean."""
    if input.ndim != 4:
        raise DimensionError(f"global_avg_pool expects a 4-d input, got {input.shape}")
    h, w = input.shape[2], input.shape[3]

    def _backward(g: np.ndarray):
        return (np.broadcast_to(g[:, :, None, None] / (h * w), input.shape).copy(),)

    return Tensor._from_op(input.data.mean(axis=(2, 3)), (input,), _backward, "global_avg_pool")


def tokens_from_maps(maps: Tensor, width: Optional[int] = None) -> Tensor:
    """N×C×S×S feature maps -> N×(S·S)×C token matrix (flatten, swap last two axes)."""
    if maps.ndim != 4:
        raise DimensionError(f"tokens_from_maps expects 4-d maps, got {maps.shape}")
    n, c, h, w = maps.shape
    if h != w:
        raise DimensionError(f"tokens_from_maps: maps must be square, got {h}×{w}")
    if width is not None and c != width:
        raise DimensionError(f"tokens_from_maps: expected {width} channels, got {c}")
    return transpose(reshape(maps, (n, c, h * w)), (0, 2, 1))


def maps_from_tokens(tokens: Tensor, side: Optional[int] = None) -> Tensor:
    """Inverse of tokens_from_maps: N×T×C -> N×C×S×S with T = S²."""
    if tokens.ndim != 3:
        raise DimensionError(f"maps_from_tokens expects 3-d tokens, got {tokens.shape}")
    n, t, c = tokens.shape
    root = math.isqrt(t)
    if root * root != t or (side is not None and side != root):
        raise DimensionError(f"maps_from_tokens: {t} tokens do not form a {side or '?'}-sided square")
    return reshape(transpose(tokens, (0, 2, 1)), (n, c, root, root))


def bce_loss(prob: Tensor, label: Union[Tensor, np.ndarray]) -> Tensor:
    """
    Mean binary cross entropy of probabilities against {0, 1} labels.

    Probabilities are clamped to [1e-7, 1 - 1e-7]; clamped entries pass no
    gradient.
    """
    if prob.size == 0:
        raise ArgumentError("bce_loss: empty batch")
    y = as_tensor(label).data.astype(prob.dtype, copy=False)
    if y.shape != prob.shape:
        raise DimensionError(f"bce_loss: labels {y.shape} do not match probabilities {prob.shape}")
    p = prob.data
    clipped = np.clip(p, PROB_EPS, 1.0 - PROB_EPS)
    n = p.size
    value = -np.mean(y * np.log(clipped) + (1.0 - y) * np.log(1.0 - clipped))

    def _backward(g: np.ndarray):
        inside = (p >= PROB_EPS) & (p <= 1.0 - PROB_EPS)
        return (g * inside * (-(y / clipped - (1.0 - y) / (1.0 - clipped)) / n),)

    return Tensor._from_op(np.asarray(value, dtype=p.dtype), (prob,), _backward, "bce_loss")
