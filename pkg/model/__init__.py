"""Dual-stream detector: configuration, parameters and forward pass."""

from .attention import attend, cma_forward, cma_increments, encoder_block_forward, zero_encoder_outputs
from .blocks import content_head_forward, module_a_forward, module_b1_forward, module_b2_forward
from .config import ModelConfig
from .network import DualStreamDetector, model_forward
from .parameters import ModelParameters, init_parameters

__all__ = [
    'ModelConfig',
    'ModelParameters',
    'init_parameters',
    'module_a_forward',
    'module_b1_forward',
    'module_b2_forward',
    'content_head_forward',
    'attend',
    'cma_increments',
    'cma_forward',
    'encoder_block_forward',
    'zero_encoder_outputs',
    'model_forward',
    'DualStreamDetector',
]
