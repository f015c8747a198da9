"""Cross multi-head attention between the residual (χ) and content (φ) token streams."""

import logging
import math
from typing import Dict, Optional, Tuple

from engine import Tensor, add, gelu, layernorm, linear, matmul, reshape, scale, softmax, transpose
from utils.errors import ConfigError, DimensionError

from .parameters import ModelParameters

logger = logging.getLogger(__name__)

Trace = Optional[Dict[str, Tensor]]


def _split_heads(tokens: Tensor, heads: int) -> Tensor:
    # N×T×D -> N×h×T×dk
    n, t, d = tokens.shape
    return transpose(reshape(tokens, (n, t, heads, d // heads)), (0, 2, 1, 3))


def _merge_heads(tokens: Tensor) -> Tensor:
    # N×h×T×dk -> N×T×D
    n, h, t, dk = tokens.shape
    return reshape(transpose(tokens, (0, 2, 1, 3)), (n, t, h * dk))


def attend(queries: Tensor, keys: Tensor, values: Tensor, heads: int, trace: Trace = None, tag: str = "") -> Tensor:
    """
    Scaled dot-product attention with per-head split and merge.

    Args:
        queries: N×T×D projected queries
        keys: N×T×D projected keys
        values: N×T×D values (used as-is)
        heads: Head count h, D % h == 0
        trace: Optional dict receiving the N×h×T×T attention weights under `tag`
        tag: Trace key

    Returns:
        N×T×D concatenation of per-head outputs
    """
    d = queries.shape[-1]
    if d % heads != 0:
        raise ConfigError(f"token width {d} is not divisible by heads ({heads})")
    dk = d // heads
    q = _split_heads(queries, heads)
    k = _split_heads(keys, heads)
    v = _split_heads(values, heads)
    scores = scale(matmul(q, transpose(k, (0, 1, 3, 2))), 1.0 / math.sqrt(dk))
    weights = softmax(scores, axis=-1)
    if trace is not None:
        trace[tag] = weights
    return _merge_heads(matmul(weights, v))


def cma_increments(
    chi_tokens: Tensor,
    phi_tokens: Tensor,
    params: ModelParameters,
    heads: int,
    prefix: str = "encoder.0.cma",
    trace: Trace = None,
) -> Tuple[Tensor, Tensor]:
    """
    Attention outputs of both directions, before they are added back.

    χ attends to φ with Q from χ and K from φ, reading φ itself as values; the
    mirrored direction swaps roles. Both directions read the same input tokens.

    Returns:
        (concat_heads(φ′), concat_heads(χ′))
    """
    if chi_tokens.ndim != 3 or chi_tokens.shape != phi_tokens.shape:
        raise DimensionError(f"cma_forward: token shapes differ {chi_tokens.shape} vs {phi_tokens.shape}")
    if chi_tokens.shape[-1] % heads != 0:
        raise ConfigError(f"token width {chi_tokens.shape[-1]} is not divisible by heads ({heads})")

    q_chi = linear(chi_tokens, *params.layer(f"{prefix}.q_residual"))
    k_phi = linear(phi_tokens, *params.layer(f"{prefix}.k_content"))
    q_phi = linear(phi_tokens, *params.layer(f"{prefix}.q_content"))
    k_chi = linear(chi_tokens, *params.layer(f"{prefix}.k_residual"))

    phi_prime = attend(q_chi, k_phi, phi_tokens, heads, trace, f"{prefix}.residual_to_content")
    chi_prime = attend(q_phi, k_chi, chi_tokens, heads, trace, f"{prefix}.content_to_residual")
    return phi_prime, chi_prime


def cma_forward(
    chi_tokens: Tensor,
    phi_tokens: Tensor,
    params: ModelParameters,
    heads: int,
    prefix: str = "encoder.0.cma",
    trace: Trace = None,
) -> Tuple[Tensor, Tensor]:
    """
    One cross multi-head attention step in both directions.

    Returns:
        (χ + concat_heads(φ′), φ + concat_heads(χ′))
    """
    phi_prime, chi_prime = cma_increments(chi_tokens, phi_tokens, params, heads, prefix, trace)
    return add(chi_tokens, phi_prime), add(phi_tokens, chi_prime)


def _mlp(tokens: Tensor, params: ModelParameters, prefix: str) -> Tensor:
    hidden = gelu(linear(tokens, *params.layer(f"{prefix}.fc1")))
    return linear(hidden, *params.layer(f"{prefix}.fc2"))


def encoder_block_forward(
    chi_tokens: Tensor,
    phi_tokens: Tensor,
    params: ModelParameters,
    index: int = 0,
    trace: Trace = None,
) -> Tuple[Tensor, Tensor]:
    """
    Pre-norm encoder block: LN, cross attention with a residual path, then
    LN and a per-token MLP with a residual path, for each stream.
    """
    config = params.config
    expected = (chi_tokens.shape[0], config.token_count, config.embed_width)
    for name, tokens in (("residual", chi_tokens), ("content", phi_tokens)):
        if tokens.shape != expected:
            raise DimensionError(f"encoder block {index}: {name} tokens are {tokens.shape}, expected {expected}")

    prefix = f"encoder.{index}"
    u_chi = layernorm(chi_tokens, params.layer_norms[f"{prefix}.residual.ln1"])
    u_phi = layernorm(phi_tokens, params.layer_norms[f"{prefix}.content.ln1"])
    phi_prime, chi_prime = cma_increments(u_chi, u_phi, params, config.heads, f"{prefix}.cma", trace)

    y_chi = add(chi_tokens, phi_prime)
    y_phi = add(phi_tokens, chi_prime)

    z_chi = add(y_chi, _mlp(layernorm(y_chi, params.layer_norms[f"{prefix}.residual.ln2"]), params, f"{prefix}.residual.mlp"))
    z_phi = add(y_phi, _mlp(layernorm(y_phi, params.layer_norms[f"{prefix}.content.ln2"]), params, f"{prefix}.content.mlp"))
    return z_chi, z_phi


def zero_encoder_outputs(params: ModelParameters) -> None:
    """
    Zero every encoder path that feeds a residual increment.

    Clears the first layer-norm affine of both streams (so the attention
    values are zero), the Q/K projections and the MLP output layers, which
    turns each encoder block into the identity map.
    """
    for name, tensor in params.named_parameters():
        if not name.startswith("encoder."):
            continue
        role = name.split(".", 2)[2]
        if role.endswith(("ln1.gamma", "ln1.beta")) or role.startswith("cma.") or ".mlp.fc2." in f".{role}":
            tensor.data[...] = 0
    logger.debug("Encoder output paths zeroed")
