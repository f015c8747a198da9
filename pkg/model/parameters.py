"""Trainable state of the detector and its deterministic initialization.

Parameter names follow stage.layer.role, for example
`residual.a.conv1.weight`, `content.b2_1.bn.gamma`,
`encoder.0.cma.q_residual.weight` or `classifier.bias`.
"""

import logging
from typing import Dict, Iterator, List, Tuple

import numpy as np

from engine import BatchNormState, LayerNormState, Tensor, default_dtype
from srm import build_filter_bank
from utils.errors import ConfigError, DimensionError

from .config import ModelConfig

logger = logging.getLogger(__name__)

RGB_CHANNELS = 3
CONTENT_HEAD_CHANNELS = 6


class ModelParameters:
    """Named trainable tensors, batch-norm buffers and norm-layer states."""

    def __init__(self, config: ModelConfig, rng: np.random.Generator):
        self.config = config
        self.dtype = default_dtype()
        self._rng = rng
        self._tensors: Dict[str, Tensor] = {}
        self.batch_norms: Dict[str, BatchNormState] = {}
        self.layer_norms: Dict[str, LayerNormState] = {}

    # Registration helpers (called in forward order by init_parameters)

    def _register(self, name: str, values: np.ndarray) -> Tensor:
        if name in self._tensors:
            raise ConfigError(f"Duplicate parameter name '{name}'")
        tensor = Tensor(values, requires_grad=True, dtype=self.dtype)
        self._tensors[name] = tensor
        return tensor

    def _uniform(self, shape: Tuple[int, ...], fan_in: int) -> np.ndarray:
        bound = 1.0 / np.sqrt(fan_in)
        return self._rng.uniform(-bound, bound, size=shape)

    def add_conv(self, name: str, cin: int, cout: int, k: int) -> None:
        self._register(f"{name}.weight", self._uniform((cout, cin, k, k), cin * k * k))
        self._register(f"{name}.bias", np.zeros(cout))

    def add_linear(self, name: str, din: int, dout: int) -> None:
        self._register(f"{name}.weight", self._uniform((din, dout), din))
        self._register(f"{name}.bias", np.zeros(dout))

    def add_batchnorm(self, name: str, channels: int) -> None:
        gamma = self._register(f"{name}.gamma", np.ones(channels))
        beta = self._register(f"{name}.beta", np.zeros(channels))
        self.batch_norms[name] = BatchNormState(
            gamma=gamma,
            beta=beta,
            running_mean=np.zeros(channels, dtype=self.dtype),
            running_var=np.ones(channels, dtype=self.dtype),
        )

    def add_layernorm(self, name: str, width: int) -> None:
        gamma = self._register(f"{name}.gamma", np.ones(width))
        beta = self._register(f"{name}.beta", np.zeros(width))
        self.layer_norms[name] = LayerNormState(gamma=gamma, beta=beta)

    # Access

    def __getitem__(self, name: str) -> Tensor:
        try:
            return self._tensors[name]
        except KeyError:
            raise KeyError(f"Unknown parameter '{name}'") from None

    def __contains__(self, name: str) -> bool:
        return name in self._tensors

    def layer(self, name: str) -> Tuple[Tensor, Tensor]:
        """(weight, bias) of a conv or linear layer."""
        return self[f"{name}.weight"], self[f"{name}.bias"]

    def named_parameters(self) -> Iterator[Tuple[str, Tensor]]:
        yield from self._tensors.items()

    def named_buffers(self) -> Iterator[Tuple[str, np.ndarray]]:
        for name, state in self.batch_norms.items():
            yield f"{name}.running_mean", state.running_mean
            yield f"{name}.running_var", state.running_var

    def parameter_count(self) -> int:
        return sum(t.size for t in self._tensors.values())

    def zero_grad(self) -> None:
        for tensor in self._tensors.values():
            tensor.zero_grad()

    def state_arrays(self) -> Dict[str, np.ndarray]:
        """Copies of every parameter and buffer, in canonical order."""
        state = {name: t.data.copy() for name, t in self._tensors.items()}
        state.update({name: buf.copy() for name, buf in self.named_buffers()})
        return state

    def load_state_arrays(self, state: Dict[str, np.ndarray]) -> None:
        """Overwrite parameters and buffers in place; shapes must match."""
        targets: Dict[str, np.ndarray] = {name: t.data for name, t in self._tensors.items()}
        targets.update(dict(self.named_buffers()))
        missing = [name for name in targets if name not in state]
        if missing:
            raise DimensionError(f"State is missing entries: {', '.join(missing[:10])}")
        for name, target in targets.items():
            source = np.asarray(state[name])
            if source.shape != target.shape:
                raise DimensionError(f"Parameter '{name}' has shape {source.shape}, expected {target.shape}")
            target[...] = source

    def names(self) -> List[str]:
        return list(self._tensors)


def _module_a(params: ModelParameters, prefix: str, cin: int, cout: int) -> None:
    params.add_conv(f"{prefix}.conv1", cin, cout, 3)
    params.add_batchnorm(f"{prefix}.bn1", cout)
    params.add_conv(f"{prefix}.conv2", cout, cout, 3)
    params.add_batchnorm(f"{prefix}.bn2", cout)


def _module_b1(params: ModelParameters, prefix: str, cin: int, cout: int) -> None:
    params.add_conv(f"{prefix}.pool_conv", cin, cout, 3)
    params.add_batchnorm(f"{prefix}.pool_bn", cout)
    params.add_conv(f"{prefix}.down_conv", cin, cout, 3)


def _module_b2(params: ModelParameters, prefix: str, cin: int, cout: int) -> None:
    params.add_conv(f"{prefix}.conv", cin, cout, 3)
    params.add_batchnorm(f"{prefix}.bn", cout)


def init_parameters(config: ModelConfig, seed: int) -> ModelParameters:
    """
    Create the full parameter set for a configuration.

    Conv and linear weights are drawn from U(-1/sqrt(fan_in), 1/sqrt(fan_in))
    in registration order; biases and norm shifts are 0, norm scales 1.

    Args:
        config: Validated model configuration
        seed: Initialization seed

    Returns:
        ModelParameters, bit-identical for identical (config, seed, numeric mode)
    """
    params = ModelParameters(config, np.random.default_rng(seed))
    c0, c1, c2 = config.channel_plan
    p0, p1 = config.post_channel_plan
    d = config.embed_width

    if config.enable_residual_stream:
        residual_in = RGB_CHANNELS * len(build_filter_bank())
        _module_a(params, "residual.a", residual_in, c0)
        _module_b1(params, "residual.b1_1", c0, c1)
        _module_b1(params, "residual.b1_2", c1, c2)

    if config.enable_content_stream:
        params.add_conv("content.head.mix", RGB_CHANNELS, RGB_CHANNELS, 1)
        params.add_conv("content.head.diff", CONTENT_HEAD_CHANNELS, CONTENT_HEAD_CHANNELS, 3)
        params.add_conv("content.head.refine", CONTENT_HEAD_CHANNELS, CONTENT_HEAD_CHANNELS, 3)
        _module_a(params, "content.a", 2 * CONTENT_HEAD_CHANNELS, c0)
        _module_b2(params, "content.b2_1", c0, c1)
        _module_b2(params, "content.b2_2", c1, c2)

    if config.enable_cma:
        for index in range(config.encoder_repeats):
            prefix = f"encoder.{index}"
            params.add_layernorm(f"{prefix}.residual.ln1", d)
            params.add_layernorm(f"{prefix}.content.ln1", d)
            for role in ("q_residual", "k_content", "q_content", "k_residual"):
                params.add_linear(f"{prefix}.cma.{role}", d, d)
            for stream in ("residual", "content"):
                params.add_layernorm(f"{prefix}.{stream}.ln2", d)
                params.add_linear(f"{prefix}.{stream}.mlp.fc1", d, config.mlp_ratio * d)
                params.add_linear(f"{prefix}.{stream}.mlp.fc2", config.mlp_ratio * d, d)

    if config.enable_residual_stream:
        _module_b1(params, "residual.post_1", c2, p0)
        _module_b1(params, "residual.post_2", p0, p1)
    if config.enable_content_stream:
        _module_b2(params, "content.post_1", c2, p0)
        _module_b2(params, "content.post_2", p0, p1)

    params.add_linear("classifier", config.classifier_width, 1)

    logger.debug(
        f"Initialized {len(params.names())} parameter tensors "
        f"({params.parameter_count():,} values) with seed {seed}"
    )
    return params
