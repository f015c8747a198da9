"""Finite-difference gradient suite over every layer family and the full model."""

import logging
from typing import Callable, List, Optional

import numpy as np
from pydantic import BaseModel

from engine import (
    BatchNormState,
    LayerNormState,
    Tensor,
    batchnorm2d,
    bce_loss,
    concat,
    conv2d,
    elementwise,
    finite_diff_check,
    global_avg_pool,
    layernorm,
    linear,
    maps_from_tokens,
    maxpool2d,
    multiply,
    numeric_mode,
    sigmoid,
    softmax,
    tokens_from_maps,
)
from model import ModelConfig, cma_forward, init_parameters, model_forward
from utils.errors import ArgumentError

logger = logging.getLogger(__name__)

GRADCHECK_TOLERANCE = 1e-4
MODEL_PARAMETERS = (
    "classifier.weight",
    "residual.a.conv1.weight",
    "residual.b1_2.down_conv.weight",
    "content.head.mix.weight",
    "content.head.diff.weight",
    "content.b2_2.bn.gamma",
    "encoder.0.cma.q_residual.weight",
    "encoder.1.content.mlp.fc1.weight",
)


class GradCheckRow(BaseModel):
    """Result of one layer family."""

    family: str
    max_rel_error: float
    checked: int
    passed: bool


def _projection(rng: np.random.Generator, shape) -> Tensor:
    return Tensor(rng.standard_normal(shape))


def _weighted_sum(out: Tensor, weights: Tensor) -> Tensor:
    return multiply(out, weights).sum()


def _leaf(rng: np.random.Generator, *shape: int) -> Tensor:
    return Tensor(rng.standard_normal(shape), requires_grad=True)


class GradientSuite:
    """Builds one scalar probe per family and compares gradients."""

    def __init__(self, side: int = 32, heads: int = 8, seed: int = 0, step: float = 1e-5, coords: int = 24):
        self.side = side
        self.heads = heads
        self.seed = seed
        self.step = step
        self.coords = coords
        self.rng = np.random.default_rng(seed)

    def _check(self, fn: Callable[[], Tensor], inputs: List[Tensor], max_coords: Optional[int] = None) -> tuple:
        worst, checked = 0.0, 0
        for position, x in enumerate(inputs):
            report = finite_diff_check(
                lambda _: fn(), x, step=self.step, max_coords=max_coords or self.coords, seed=self.seed + position
            )
            error = report.max_rel_error
            worst = max(worst, error if np.isfinite(error) else float("inf"))
            checked += report.checked
        return worst, checked

    def _probe(self, out_fn: Callable[[], Tensor], inputs: List[Tensor], max_coords: Optional[int] = None) -> tuple:
        weights = _projection(self.rng, out_fn().shape)
        return self._check(lambda: _weighted_sum(out_fn(), weights), inputs, max_coords)

    def conv2d(self) -> tuple:
        x, w, b = _leaf(self.rng, 2, 3, 6, 6), _leaf(self.rng, 4, 3, 3, 3), _leaf(self.rng, 4)
        return self._probe(lambda: conv2d(x, w, b, stride=2, padding=1), [x, w, b])

    def maxpool2d(self) -> tuple:
        x = _leaf(self.rng, 2, 3, 6, 6)
        return self._probe(lambda: maxpool2d(x, 3, 2, 1), [x])

    def batchnorm2d(self) -> tuple:
        x = _leaf(self.rng, 3, 4, 4, 4)
        state = BatchNormState(
            gamma=_leaf(self.rng, 4), beta=_leaf(self.rng, 4),
            running_mean=np.zeros(4), running_var=np.ones(4),
        )
        return self._probe(lambda: batchnorm2d(x, state, training=True), [x, state.gamma, state.beta])

    def layernorm(self) -> tuple:
        x = _leaf(self.rng, 2, 5, 8)
        state = LayerNormState(gamma=_leaf(self.rng, 8), beta=_leaf(self.rng, 8))
        return self._probe(lambda: layernorm(x, state), [x, state.gamma, state.beta])

    def linear(self) -> tuple:
        x, w, b = _leaf(self.rng, 2, 5, 6), _leaf(self.rng, 6, 3), _leaf(self.rng, 3)
        return self._probe(lambda: linear(x, w, b), [x, w, b])

    def softmax(self) -> tuple:
        x = _leaf(self.rng, 2, 3, 7)
        return self._probe(lambda: softmax(x, axis=-1), [x])

    def elementwise(self) -> tuple:
        a, b = _leaf(self.rng, 3, 4), _leaf(self.rng, 3, 4)
        return self._probe(
            lambda: elementwise("relu", elementwise("subtract", elementwise("scale", a, c=1.7), elementwise("add", a, b))),
            [a, b],
        )

    def concat(self) -> tuple:
        a, b = _leaf(self.rng, 2, 3, 4), _leaf(self.rng, 2, 2, 4)
        return self._probe(lambda: concat([a, b], axis=1), [a, b])

    def global_avg_pool(self) -> tuple:
        x = _leaf(self.rng, 2, 3, 4, 4)
        return self._probe(lambda: global_avg_pool(x), [x])

    def tokens(self) -> tuple:
        x = _leaf(self.rng, 2, 4, 3, 3)
        return self._probe(lambda: maps_from_tokens(tokens_from_maps(x)), [x])

    def bce_loss(self) -> tuple:
        logits = _leaf(self.rng, 6)
        labels = (self.rng.random(6) > 0.5).astype(np.float64)
        return self._check(lambda: bce_loss(sigmoid(logits), labels), [logits])

    def cross_attention(self) -> tuple:
        config = ModelConfig(input_side=32, heads=self.heads)
        params = init_parameters(config, self.seed)
        width = config.embed_width
        chi = Tensor(self.rng.standard_normal((1, config.token_count, width)), requires_grad=True)
        phi = Tensor(self.rng.standard_normal((1, config.token_count, width)), requires_grad=True)
        q = params["encoder.0.cma.q_residual.weight"]

        def out():
            chi_out, phi_out = cma_forward(chi, phi, params, config.heads)
            return concat([chi_out, phi_out], axis=1)

        return self._probe(out, [chi, phi, q], max_coords=8)

    def model(self) -> tuple:
        config = ModelConfig(input_side=self.side, heads=self.heads, seed=self.seed)
        params = init_parameters(config, self.seed)
        images = Tensor(self.rng.random((2, 3, self.side, self.side)))
        labels = np.array([0.0, 1.0])
        inputs = [params[name] for name in MODEL_PARAMETERS if name in params]

        def loss() -> Tensor:
            return bce_loss(sigmoid(model_forward(images, params, config, training=True)), labels)

        return self._check(loss, inputs, max_coords=3)

    FAMILIES = (
        "conv2d", "maxpool2d", "batchnorm2d", "layernorm", "linear", "softmax", "elementwise",
        "concat", "global_avg_pool", "tokens", "bce_loss", "cross_attention", "model",
    )

    def run(self, families: Optional[List[str]] = None) -> List[GradCheckRow]:
        rows = []
        unknown = [f for f in families or () if f not in self.FAMILIES]
        if unknown:
            raise ArgumentError(f"Unknown gradcheck families {unknown}. Supported: {', '.join(self.FAMILIES)}")
        for family in families or self.FAMILIES:
            worst, checked = getattr(self, family)()
            row = GradCheckRow(
                family=family, max_rel_error=worst, checked=checked, passed=bool(worst < GRADCHECK_TOLERANCE)
            )
            logger.info(f"gradcheck {family}: max rel error {worst:.3e} over {checked} coordinates")
            rows.append(row)
        return rows


def run_gradcheck_suite(
    side: int = 32,
    heads: int = 8,
    seed: int = 0,
    families: Optional[List[str]] = None,
) -> List[GradCheckRow]:
    """
    Run finite_diff_check in 64-bit mode for every layer family.

    Args:
        side: Input side of the end-to-end model probe
        heads: Attention heads
        seed: Seed for inputs, parameters and coordinate sampling
        families: Optional subset of GradientSuite.FAMILIES

    Returns:
        One row per family; `passed` means max relative error < 1e-4
    """
    with numeric_mode("float64"):
        return GradientSuite(side, heads, seed).run(families)


def format_rows(rows: List[GradCheckRow]) -> str:
    lines = [f"{'family':<18}{'max rel error':>15}{'coords':>8}  status"]
    for row in rows:
        lines.append(f"{row.family:<18}{row.max_rel_error:>15.3e}{row.checked:>8}  {'ok' if row.passed else 'FAIL'}")
    return "\n".join(lines)
