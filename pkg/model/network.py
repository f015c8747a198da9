"""Full dual-stream detector: residual and content streams, cross attention, classifier."""

import logging
from typing import Dict, Optional

import numpy as np

from engine import (
    Tensor,
    as_tensor,
    concat,
    global_avg_pool,
    linear,
    maps_from_tokens,
    no_grad,
    reshape,
    sigmoid,
    tokens_from_maps,
)
from srm import build_filter_bank, extract_residuals
from utils.errors import ConfigError, DimensionError

from .attention import encoder_block_forward
from .blocks import content_head_forward, module_a_forward, module_b1_forward, module_b2_forward
from .config import ModelConfig
from .parameters import ModelParameters, init_parameters

logger = logging.getLogger(__name__)


def _expect(x: Tensor, shape: tuple, stage: str) -> None:
    if x.shape != shape:
        raise DimensionError(f"{stage}: produced {x.shape}, expected {shape}")


def model_forward(
    images: Tensor,
    params: ModelParameters,
    config: ModelConfig,
    training: bool = False,
    trace: Optional[Dict[str, Tensor]] = None,
) -> Tensor:
    """
    Compute one logit per image (positive class = generated).

    Args:
        images: N×3×s×s batch with s == config.input_side
        params: Parameters built for `config`
        config: Model configuration
        training: Use batch statistics in BN layers and update running stats
        trace: Optional dict that receives intermediate tensors

    Returns:
        Tensor of shape (N,)
    """
    if params.config != config:
        raise ConfigError("Parameters were built for a different model configuration")
    if images.ndim != 4 or images.shape[1] != 3:
        raise DimensionError(f"model_forward expects N×3×s×s images, got {images.shape}")
    n, _, height, width = images.shape
    s = config.input_side
    if height != s or width != s:
        raise ConfigError(f"input_side mismatch: images are {height}×{width}, model expects {s}×{s}")

    d = config.embed_width
    side = config.feature_side
    pooled = []
    chi = phi = None

    if config.enable_residual_stream:
        residuals = extract_residuals(images, build_filter_bank())
        chi = module_a_forward(residuals, params, "residual.a", training)
        chi = module_b1_forward(chi, params, "residual.b1_1", training)
        chi = module_b1_forward(chi, params, "residual.b1_2", training)
        _expect(chi, (n, d, side, side), "residual stream")

    if config.enable_content_stream:
        head = content_head_forward(images, params, trace=trace)
        phi = module_a_forward(head, params, "content.a", training)
        phi = module_b2_forward(phi, params, "content.b2_1", training)
        phi = module_b2_forward(phi, params, "content.b2_2", training)
        _expect(phi, (n, d, side, side), "content stream")

    if trace is not None:
        if chi is not None:
            trace["residual.features"] = chi
        if phi is not None:
            trace["content.features"] = phi

    if config.enable_cma:
        chi_tokens = tokens_from_maps(chi, d)
        phi_tokens = tokens_from_maps(phi, d)
        _expect(chi_tokens, (n, config.token_count, d), "residual tokens")
        _expect(phi_tokens, (n, config.token_count, d), "content tokens")
        for index in range(config.encoder_repeats):
            chi_tokens, phi_tokens = encoder_block_forward(chi_tokens, phi_tokens, params, index, trace)
        chi = maps_from_tokens(chi_tokens, side)
        phi = maps_from_tokens(phi_tokens, side)
        if trace is not None:
            trace["residual.tokens"] = chi_tokens
            trace["content.tokens"] = phi_tokens

    if chi is not None:
        chi = module_b1_forward(chi, params, "residual.post_1", training)
        chi = module_b1_forward(chi, params, "residual.post_2", training)
        pooled.append(global_avg_pool(chi))
    if phi is not None:
        phi = module_b2_forward(phi, params, "content.post_1", training)
        phi = module_b2_forward(phi, params, "content.post_2", training)
        pooled.append(global_avg_pool(phi))

    features = pooled[0] if len(pooled) == 1 else concat(pooled, axis=1)
    _expect(features, (n, config.classifier_width), "pooled features")
    if trace is not None:
        trace["pooled"] = features

    logits = linear(features, *params.layer("classifier"))
    return reshape(logits, (n,))


class DualStreamDetector:
    """Model configuration bound to its parameters."""

    def __init__(self, config: ModelConfig, params: Optional[ModelParameters] = None, seed: Optional[int] = None):
        self.config = config
        self.params = params if params is not None else init_parameters(config, config.seed if seed is None else seed)

    def forward(self, images, training: bool = False, trace: Optional[Dict[str, Tensor]] = None) -> Tensor:
        return model_forward(as_tensor(images), self.params, self.config, training, trace)

    __call__ = forward

    def predict_proba(self, images) -> np.ndarray:
        """Generated-class probabilities in inference mode, no gradient tracking."""
        with no_grad():
            logits = self.forward(images, training=False)
            return sigmoid(logits).numpy().copy()

    def parameter_count(self) -> int:
        return self.params.parameter_count()

    def __repr__(self) -> str:
        c = self.config
        streams = [name for name, on in (("residual", c.enable_residual_stream), ("content", c.enable_content_stream)) if on]
        return (
            f"DualStreamDetector(s={c.input_side}, streams={'+'.join(streams)}, "
            f"cma={c.enable_cma}, params={self.parameter_count():,})"
        )
