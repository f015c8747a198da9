"""Tests for the detector's configuration, building blocks and full forward pass."""

import numpy as np
import pytest
from pydantic import ValidationError

from engine import (
    Tensor,
    backward,
    batchnorm2d,
    bce_loss,
    conv2d,
    maxpool2d,
    no_grad,
    relu,
    sigmoid,
    tokens_from_maps,
)
from model import (
    DualStreamDetector,
    ModelConfig,
    content_head_forward,
    init_parameters,
    model_forward,
    module_a_forward,
    module_b1_forward,
    module_b2_forward,
)
from utils.errors import ConfigError, DimensionError


def conv_count(cin, cout, k):
    return cout * cin * k * k + cout


def linear_count(din, dout):
    return din * dout + dout


def census(config: ModelConfig) -> int:
    """Independent layer-by-layer parameter tally."""
    c0, c1, c2 = config.channel_plan
    p0, p1 = config.post_channel_plan
    d = config.embed_width
    total = 0
    if config.enable_residual_stream:
        total += conv_count(90, c0, 3) + 2 * c0 + conv_count(c0, c0, 3) + 2 * c0
        total += conv_count(c0, c1, 3) + 2 * c1 + conv_count(c0, c1, 3)
        total += conv_count(c1, c2, 3) + 2 * c2 + conv_count(c1, c2, 3)
        total += conv_count(c2, p0, 3) + 2 * p0 + conv_count(c2, p0, 3)
        total += conv_count(p0, p1, 3) + 2 * p1 + conv_count(p0, p1, 3)
    if config.enable_content_stream:
        total += conv_count(3, 3, 1) + 2 * conv_count(6, 6, 3)
        total += conv_count(12, c0, 3) + 2 * c0 + conv_count(c0, c0, 3) + 2 * c0
        total += conv_count(c0, c1, 3) + 2 * c1
        total += conv_count(c1, c2, 3) + 2 * c2
        total += conv_count(c2, p0, 3) + 2 * p0
        total += conv_count(p0, p1, 3) + 2 * p1
    if config.enable_cma:
        hidden = config.mlp_ratio * d
        per_block = 2 * (2 * d) + 4 * linear_count(d, d) + 2 * (2 * d + linear_count(d, hidden) + linear_count(hidden, d))
        total += config.encoder_repeats * per_block
    total += linear_count(config.classifier_width, 1)
    return total


ABLATIONS = {
    "residual_only": dict(enable_content_stream=False, enable_cma=False),
    "content_only": dict(enable_residual_stream=False, enable_cma=False),
    "both_without_cma": dict(enable_cma=False),
    "full": dict(),
}


class TestModelConfig:
    def test_defaults(self):
        config = ModelConfig()
        assert config.input_side == 256
        assert config.heads == 8
        assert config.head_width == 32
        assert config.token_count == 1024
        assert config.classifier_width == 512

    @pytest.mark.parametrize(
        "overrides",
        [
            dict(input_side=48),
            dict(heads=7),
            dict(enable_residual_stream=False, enable_content_stream=False, enable_cma=False),
            dict(enable_content_stream=False),
            dict(channel_plan=[64, 128, 128]),
            dict(post_channel_plan=[256]),
        ],
    )
    def test_invariants(self, overrides):
        with pytest.raises(ValidationError):
            ModelConfig(**overrides)

    def test_unknown_keys_are_rejected(self):
        with pytest.raises(ValidationError):
            ModelConfig(depth=3)


class TestParameters:
    def test_census_matches_closed_form(self):
        config = ModelConfig(input_side=32, heads=8)
        params = init_parameters(config, 0)
        assert params.parameter_count() == census(config)

    @pytest.mark.parametrize("name", sorted(ABLATIONS))
    def test_ablation_census(self, name, tiny_config):
        config = ModelConfig(**{**tiny_config.model_dump(), **ABLATIONS[name]})
        assert init_parameters(config, 0).parameter_count() == census(config)

    def test_same_seed_is_bit_identical(self, tiny_config):
        a = init_parameters(tiny_config, 3).state_arrays()
        b = init_parameters(tiny_config, 3).state_arrays()
        assert list(a) == list(b)
        for name in a:
            np.testing.assert_array_equal(a[name], b[name])

    def test_different_seeds_differ(self, tiny_config):
        a = init_parameters(tiny_config, 3).state_arrays()
        b = init_parameters(tiny_config, 4).state_arrays()
        assert any(not np.array_equal(a[name], b[name]) for name in a)

    def test_initial_values(self, tiny_config):
        params = init_parameters(tiny_config, 0)
        weight = params["residual.a.conv1.weight"].data
        assert np.max(np.abs(weight)) <= 1.0 / np.sqrt(90 * 9)
        np.testing.assert_array_equal(params["residual.a.conv1.bias"].data, 0.0)
        np.testing.assert_array_equal(params["content.a.bn1.gamma"].data, 1.0)
        np.testing.assert_array_equal(params["encoder.0.residual.ln1.beta"].data, 0.0)
        assert params["classifier.weight"].shape == (tiny_config.classifier_width, 1)

    def test_names_are_unique_and_ordered(self, tiny_config):
        names = init_parameters(tiny_config, 0).names()
        assert len(names) == len(set(names))
        assert names[0] == "residual.a.conv1.weight"
        assert names[-1] == "classifier.bias"

    def test_load_state_rejects_bad_shape(self, tiny_config):
        params = init_parameters(tiny_config, 0)
        state = params.state_arrays()
        state["classifier.weight"] = np.zeros((3, 1))
        with pytest.raises(DimensionError, match="classifier.weight"):
            params.load_state_arrays(state)


class TestBlocks:
    def test_module_a_halves(self, float64, rng):
        params = init_parameters(ModelConfig(input_side=32), 0)
        x = Tensor(rng.standard_normal((1, 12, 32, 32)))
        assert module_a_forward(x, params, "content.a").shape == (1, 64, 16, 16)

    def test_module_a_zero_input(self, float64, tiny_config):
        params = init_parameters(tiny_config, 0)
        out = module_a_forward(Tensor(np.zeros((1, 12, 8, 8))), params, "content.a")
        np.testing.assert_array_equal(out.data, 0.0)

    def test_module_b1_without_strided_branch(self, float64, tiny_config, rng):
        params = init_parameters(tiny_config, 0)
        params["residual.b1_1.down_conv.weight"].data[...] = 0
        params["residual.b1_1.down_conv.bias"].data[...] = 0
        x = Tensor(rng.standard_normal((2, 8, 8, 8)))
        out = module_b1_forward(x, params, "residual.b1_1")

        weight, bias = params.layer("residual.b1_1.pool_conv")
        state = params.batch_norms["residual.b1_1.pool_bn"]
        expected = maxpool2d(relu(batchnorm2d(conv2d(x, weight, bias, padding=1), state, False)))
        np.testing.assert_array_equal(out.data, expected.data)

    def test_module_b2_shape_and_constant_interior(self, float64, tiny_config):
        params = init_parameters(tiny_config, 0)
        out = module_b2_forward(Tensor(np.full((1, 8, 12, 12), 0.4)), params, "content.b2_1")
        assert out.shape == (1, 12, 6, 6)
        interior = out.data[0, :, 1:-1, 1:-1]
        np.testing.assert_allclose(interior, interior[:, :1, :1] * np.ones_like(interior), atol=1e-12)

    @pytest.mark.parametrize("block", [module_a_forward, module_b1_forward, module_b2_forward])
    def test_odd_extent_is_rejected(self, block, tiny_config):
        params = init_parameters(tiny_config, 0)
        prefix = {module_a_forward: "content.a", module_b1_forward: "residual.b1_1",
                  module_b2_forward: "content.b2_1"}[block]
        cin = {module_a_forward: 12, module_b1_forward: 8, module_b2_forward: 8}[block]
        with pytest.raises(DimensionError):
            block(Tensor(np.zeros((1, cin, 7, 7))), params, prefix)


class TestContentHead:
    def test_twelve_channels(self, float64, tiny_config, rng):
        params = init_parameters(tiny_config, 0)
        assert content_head_forward(Tensor(rng.random((2, 3, 8, 8))), params).shape == (2, 12, 8, 8)

    def test_identity_taps_cancel(self, float64, tiny_config, rng):
        params = init_parameters(tiny_config, 0)
        weight = params["content.head.diff.weight"].data
        weight[...] = 0
        for channel in range(6):
            weight[channel, channel, 1, 1] = 1.0
        trace = {}
        content_head_forward(Tensor(rng.random((1, 3, 8, 8))), params, trace=trace)
        np.testing.assert_array_equal(trace["content.difference"].data, 0.0)

    def test_difference_matches_recomposition(self, float64, tiny_config, rng):
        params = init_parameters(tiny_config, 11)
        for name in ("content.head.mix.bias", "content.head.diff.bias"):
            params[name].data[...] = rng.standard_normal(params[name].shape)
        rgb = rng.random((1, 3, 8, 8))
        out = content_head_forward(Tensor(rgb), params).data

        mix_w = params["content.head.mix.weight"].data[:, :, 0, 0]
        mix = np.einsum("oc,chw->ohw", mix_w, rgb[0]) + params["content.head.mix.bias"].data[:, None, None]
        ell = np.concatenate([mix, rgb[0]])
        padded = np.pad(ell, ((0, 0), (1, 1), (1, 1)))
        diff_w = params["content.head.diff.weight"].data
        filtered = np.zeros_like(ell)
        for u in range(3):
            for v in range(3):
                filtered += np.einsum("oc,chw->ohw", diff_w[:, :, u, v], padded[:, u:u + 8, v:v + 8])
        filtered += params["content.head.diff.bias"].data[:, None, None]
        assert np.max(np.abs(out[0, :6] - (ell - filtered))) < 1e-10

    def test_rejects_grayscale(self, tiny_config):
        with pytest.raises(DimensionError):
            content_head_forward(Tensor(np.zeros((1, 1, 8, 8))), init_parameters(tiny_config, 0))


class TestForward:
    @pytest.mark.parametrize("side", [32, 64])
    def test_shape_contract(self, side, rng):
        config = ModelConfig(input_side=side)
        detector = DualStreamDetector(config)
        trace = {}
        with no_grad():
            logits = detector(rng.random((1, 3, side, side)), trace=trace)
        assert logits.shape == (1,)
        assert trace["residual.features"].shape == (1, 256, side // 8, side // 8)
        assert trace["content.features"].shape == (1, 256, side // 8, side // 8)
        assert trace["residual.tokens"].shape == (1, side * side // 64, 256)
        assert trace["content.tokens"].shape == (1, side * side // 64, 256)
        assert trace["pooled"].shape == (1, 512)

    def test_deterministic_logits(self, tiny_config, rng):
        images = rng.random((2, 3, 32, 32))
        a = DualStreamDetector(tiny_config).predict_proba(images)
        b = DualStreamDetector(tiny_config).predict_proba(images)
        np.testing.assert_array_equal(a, b)
        assert np.all((a > 0) & (a < 1))

    @pytest.mark.parametrize("name", sorted(ABLATIONS))
    def test_ablations_forward(self, name, tiny_config, rng):
        config = ModelConfig(**{**tiny_config.model_dump(), **ABLATIONS[name]})
        detector = DualStreamDetector(config)
        trace = {}
        logits = detector(rng.random((2, 3, 32, 32)), training=True, trace=trace)
        assert logits.shape == (2,)
        assert trace["pooled"].shape == (2, config.classifier_width)
        assert any(n.startswith("encoder.") for n in detector.params.names()) == config.enable_cma

    def test_every_parameter_receives_a_gradient(self, float64, tiny_config, rng):
        detector = DualStreamDetector(tiny_config)
        logits = detector(rng.random((2, 3, 32, 32)), training=True)
        backward(bce_loss(sigmoid(logits), np.array([0.0, 1.0])))
        missing = [name for name, t in detector.params.named_parameters() if t.grad is None]
        assert missing == []

    def test_side_mismatch(self, tiny_config):
        with pytest.raises(ConfigError, match="input_side"):
            DualStreamDetector(tiny_config)(np.zeros((1, 3, 64, 64)))

    def test_parameters_for_another_config(self, tiny_config):
        params = init_parameters(tiny_config, 0)
        other = ModelConfig(**{**tiny_config.model_dump(), "seed": 99})
        with pytest.raises(ConfigError):
            model_forward(Tensor(np.zeros((1, 3, 32, 32))), params, other)

    def test_content_tokens_are_shape_checked(self, tiny_config, monkeypatch):
        calls = []

        def short_content_tokens(maps, width=None):
            calls.append(maps)
            tokens = tokens_from_maps(maps, width)
            return tokens if len(calls) == 1 else Tensor(tokens.data[:, :-1])

        monkeypatch.setattr("model.network.tokens_from_maps", short_content_tokens)
        with pytest.raises(DimensionError, match="content tokens"):
            with no_grad():
                DualStreamDetector(tiny_config)(np.zeros((1, 3, 32, 32)))

    def test_repr_names_streams(self, tiny_config):
        text = repr(DualStreamDetector(tiny_config))
        assert "residual+content" in text
        assert "cma=True" in text
