"""Tests for the network primitives against direct-summation oracles."""

import math

import numpy as np
import pytest

from engine import (
    BatchNormState,
    LayerNormState,
    Tensor,
    backward,
    batchnorm2d,
    bce_loss,
    concat,
    conv2d,
    elementwise,
    global_avg_pool,
    layernorm,
    linear,
    maps_from_tokens,
    maxpool2d,
    sigmoid,
    softmax,
    tokens_from_maps,
)
from utils.errors import ArgumentError, DimensionError, StatisticsError


def naive_conv2d(x, w, b, stride, padding):
    n, cin, h, wd = x.shape
    cout, _, kh, kw = w.shape
    xp = np.zeros((n, cin, h + 2 * padding, wd + 2 * padding))
    xp[:, :, padding:padding + h, padding:padding + wd] = x
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (wd + 2 * padding - kw) // stride + 1
    out = np.zeros((n, cout, ho, wo))
    for i in range(n):
        for o in range(cout):
            for r in range(ho):
                for c in range(wo):
                    acc = 0.0 if b is None else b[o]
                    for ci in range(cin):
                        for u in range(kh):
                            for v in range(kw):
                                acc += xp[i, ci, r * stride + u, c * stride + v] * w[o, ci, u, v]
                    out[i, o, r, c] = acc
    return out


def naive_linear(x, w, b):
    rows, din = x.shape
    dout = w.shape[1]
    out = np.zeros((rows, dout))
    for r in range(rows):
        for o in range(dout):
            out[r, o] = b[o] + sum(x[r, k] * w[k, o] for k in range(din))
    return out


def bn_state(channels, gamma=None, beta=None):
    return BatchNormState(
        gamma=Tensor(np.ones(channels) if gamma is None else gamma, requires_grad=True),
        beta=Tensor(np.zeros(channels) if beta is None else beta, requires_grad=True),
        running_mean=np.zeros(channels),
        running_var=np.ones(channels),
    )


class TestConv2d:
    def test_sum_of_ones(self, float64):
        out = conv2d(Tensor(np.ones((1, 1, 3, 3))), Tensor(np.ones((1, 1, 3, 3))))
        np.testing.assert_array_equal(out.data, [[[[9.0]]]])

    def test_identity_kernel(self, float64, rng):
        x = rng.standard_normal((2, 1, 5, 5))
        kernel = np.zeros((1, 1, 3, 3))
        kernel[0, 0, 1, 1] = 1.0
        out = conv2d(Tensor(x), Tensor(kernel), padding=1)
        np.testing.assert_array_equal(out.data, x)

    def test_matches_naive_oracle(self, float64):
        rng = np.random.default_rng(0)
        for _ in range(20):
            n, cin, cout = rng.integers(1, 4), rng.integers(1, 5), rng.integers(1, 5)
            side = int(rng.integers(5, 10))
            k = int(rng.choice([1, 3, 5]))
            stride, padding = int(rng.integers(1, 3)), int(rng.integers(0, 3))
            x = rng.standard_normal((n, cin, side, side))
            w = rng.standard_normal((cout, cin, k, k))
            b = rng.standard_normal(cout)
            out = conv2d(Tensor(x), Tensor(w), Tensor(b), stride=stride, padding=padding).data
            assert np.max(np.abs(out - naive_conv2d(x, w, b, stride, padding))) < 1e-12

    def test_reference_shape(self, float64, rng):
        x = rng.standard_normal((2, 4, 8, 8))
        w = rng.standard_normal((3, 4, 3, 3))
        out = conv2d(Tensor(x), Tensor(w), padding=1).data
        assert out.shape == (2, 3, 8, 8)
        assert np.max(np.abs(out - naive_conv2d(x, w, None, 1, 1))) < 1e-12

    def test_channel_mismatch_names_axes(self):
        with pytest.raises(DimensionError, match="axis 1"):
            conv2d(Tensor(np.zeros((1, 2, 4, 4))), Tensor(np.zeros((1, 3, 3, 3))))

    def test_kernel_larger_than_padded_input(self):
        with pytest.raises(DimensionError):
            conv2d(Tensor(np.zeros((1, 1, 2, 2))), Tensor(np.zeros((1, 1, 5, 5))))


class TestMaxpool2d:
    def test_window_max(self, float64):
        out = maxpool2d(Tensor([[[[1.0, 2.0], [3.0, 4.0]]]]), k=2, stride=2, padding=0)
        np.testing.assert_array_equal(out.data, [[[[4.0]]]])

    def test_constant_input(self, float64):
        out = maxpool2d(Tensor(np.full((1, 2, 6, 6), 0.7)))
        np.testing.assert_array_equal(out.data, np.full((1, 2, 3, 3), 0.7))

    def test_halves_even_extent(self, float64):
        assert maxpool2d(Tensor(np.zeros((1, 1, 32, 32)))).shape == (1, 1, 16, 16)

    def test_ties_route_gradient_to_first_maximum(self, float64):
        x = Tensor(np.ones((1, 1, 2, 2)), requires_grad=True)
        backward(maxpool2d(x, k=2, stride=2, padding=0).sum())
        np.testing.assert_array_equal(x.grad, [[[[1.0, 0.0], [0.0, 0.0]]]])

    def test_degenerate_output(self):
        with pytest.raises(DimensionError):
            maxpool2d(Tensor(np.zeros((1, 1, 1, 1))), k=3, stride=2, padding=0)


class TestBatchnorm2d:
    def test_training_standardizes(self, float64, rng):
        x = Tensor(rng.standard_normal((4, 3, 5, 5)) * 3.0 + 2.0)
        out = batchnorm2d(x, bn_state(3), training=True).data
        assert np.all(np.abs(out.mean(axis=(0, 2, 3))) < 1e-6)
        assert np.all(np.abs(out.var(axis=(0, 2, 3)) - 1.0) < 1e-4)

    def test_constant_channels_map_to_zero(self, float64):
        x = Tensor(np.full((2, 2, 3, 3), 5.0))
        out = batchnorm2d(x, bn_state(2), training=True).data
        np.testing.assert_allclose(out, 0.0, atol=1e-12)

    def test_inference_with_identity_statistics(self, float64, rng):
        x = rng.standard_normal((2, 3, 4, 4))
        state = bn_state(3)
        out = batchnorm2d(Tensor(x), state, training=False).data
        np.testing.assert_allclose(out, x / math.sqrt(1.0 + state.eps), rtol=1e-14)

    def test_running_statistics_update(self, float64, rng):
        x = rng.standard_normal((2, 1, 4, 4)) + 1.0
        state = bn_state(1)
        batchnorm2d(Tensor(x), state, training=True)
        count = x.size
        np.testing.assert_allclose(state.running_mean, 0.1 * x.mean())
        np.testing.assert_allclose(state.running_var, 0.9 + 0.1 * x.var() * count / (count - 1))

    def test_single_element_batch_is_rejected(self):
        with pytest.raises(StatisticsError):
            batchnorm2d(Tensor(np.zeros((1, 2, 1, 1))), bn_state(2), training=True)

    def test_state_lengths_must_agree(self):
        with pytest.raises(DimensionError):
            BatchNormState(
                gamma=Tensor(np.ones(2)), beta=Tensor(np.zeros(3)),
                running_mean=np.zeros(2), running_var=np.ones(2),
            )


class TestLayernorm:
    def state(self, width):
        return LayerNormState(gamma=Tensor(np.ones(width)), beta=Tensor(np.zeros(width)))

    def test_closed_form(self, float64):
        out = layernorm(Tensor([[[1.0, 2.0, 3.0]]]), self.state(3)).data
        np.testing.assert_allclose(out[0, 0], [-1.224744, 0.0, 1.224744], atol=1e-5)

    def test_constant_token(self, float64):
        out = layernorm(Tensor(np.full((1, 2, 4), 3.0)), self.state(4)).data
        np.testing.assert_allclose(out, 0.0, atol=1e-12)

    def test_shift_invariance(self, float64, rng):
        x = rng.standard_normal((2, 3, 8))
        a = layernorm(Tensor(x), self.state(8)).data
        b = layernorm(Tensor(x + 4.5), self.state(8)).data
        np.testing.assert_allclose(a, b, atol=1e-10)

    def test_width_mismatch(self):
        with pytest.raises(DimensionError):
            layernorm(Tensor(np.zeros((1, 2, 5))), self.state(4))


class TestLinear:
    def test_identity_weight(self, float64, rng):
        x = rng.standard_normal((3, 4))
        out = linear(Tensor(x), Tensor(np.eye(4)), Tensor(np.zeros(4))).data
        np.testing.assert_array_equal(out, x)

    def test_row_sum(self, float64):
        out = linear(Tensor([[1.0, 2.0]]), Tensor([[1.0], [1.0]]), Tensor([0.0])).data
        np.testing.assert_array_equal(out, [[3.0]])

    def test_matches_naive_oracle(self, float64):
        rng = np.random.default_rng(1)
        for _ in range(20):
            rows, din, dout = (int(v) for v in rng.integers(1, 9, size=3))
            x = rng.standard_normal((rows, din))
            w = rng.standard_normal((din, dout))
            b = rng.standard_normal(dout)
            out = linear(Tensor(x), Tensor(w), Tensor(b)).data
            assert np.max(np.abs(out - naive_linear(x, w, b))) < 1e-12

    def test_applies_to_last_axis(self, float64, rng):
        x = rng.standard_normal((2, 5, 4))
        w = rng.standard_normal((4, 3))
        out = linear(Tensor(x), Tensor(w)).data
        assert out.shape == (2, 5, 3)
        np.testing.assert_allclose(out[1, 2], x[1, 2] @ w)

    def test_trailing_axis_mismatch(self):
        with pytest.raises(DimensionError):
            linear(Tensor(np.zeros((2, 3))), Tensor(np.zeros((4, 1))))


class TestSoftmax:
    def test_symmetric(self, float64):
        np.testing.assert_array_equal(softmax(Tensor([0.0, 0.0])).data, [0.5, 0.5])

    def test_large_inputs_do_not_overflow(self, float64):
        out = softmax(Tensor([1000.0, 0.0])).data
        assert abs(out[0] - 1.0) < 1e-12
        assert abs(out[1]) < 1e-12

    def test_rows_sum_to_one_and_shift_invariance(self, float64, rng):
        x = rng.standard_normal((3, 4, 6)) * 5
        out = softmax(Tensor(x), axis=1).data
        np.testing.assert_allclose(out.sum(axis=1), 1.0, atol=1e-6)
        np.testing.assert_allclose(softmax(Tensor(x + 7.0), axis=1).data, out, atol=1e-12)


class TestElementwiseAndConcat:
    def test_relu(self, float64):
        np.testing.assert_array_equal(elementwise("relu", Tensor([-1.0, 0.0, 2.0])).data, [0.0, 0.0, 2.0])

    def test_scale_needs_constant(self):
        with pytest.raises(ArgumentError):
            elementwise("scale", Tensor([1.0]))

    def test_unknown_op(self):
        with pytest.raises(ArgumentError):
            elementwise("divide", Tensor([1.0]), Tensor([1.0]))

    def test_channel_concat_and_gradient_split(self, float64, rng):
        a = Tensor(rng.standard_normal((1, 6, 2, 2)), requires_grad=True)
        b = Tensor(rng.standard_normal((1, 6, 2, 2)), requires_grad=True)
        out = concat([a, b], axis=1)
        assert out.shape == (1, 12, 2, 2)
        weights = np.arange(out.size, dtype=np.float64).reshape(out.shape)
        backward((out * Tensor(weights)).sum())
        np.testing.assert_array_equal(a.grad, weights[:, :6])
        np.testing.assert_array_equal(b.grad, weights[:, 6:])

    def test_single_tensor_concat(self, float64, rng):
        x = rng.standard_normal((2, 3))
        np.testing.assert_array_equal(concat([Tensor(x)], axis=0).data, x)

    def test_mismatched_off_axis(self):
        with pytest.raises(DimensionError):
            concat([Tensor(np.zeros((1, 2, 3))), Tensor(np.zeros((1, 2, 4)))], axis=1)


class TestPoolingAndTokens:
    def test_global_average(self, float64):
        out = global_avg_pool(Tensor([[[[1.0, 3.0], [5.0, 7.0]]]]))
        np.testing.assert_array_equal(out.data, [[4.0]])

    def test_global_average_gradient(self, float64):
        x = Tensor(np.zeros((1, 2, 3, 3)), requires_grad=True)
        backward(global_avg_pool(x).sum())
        np.testing.assert_allclose(x.grad, np.full((1, 2, 3, 3), 1.0 / 9.0))

    def test_token_round_trip_is_exact(self, float64, rng):
        maps = rng.standard_normal((2, 256, 4, 4))
        tokens = tokens_from_maps(Tensor(maps), 256)
        assert tokens.shape == (2, 16, 256)
        np.testing.assert_array_equal(tokens.data[1, 5], maps[1, :, 1, 1])
        np.testing.assert_array_equal(maps_from_tokens(tokens, 4).data, maps)

    def test_full_resolution_token_count(self, float64):
        assert tokens_from_maps(Tensor(np.zeros((1, 256, 32, 32)))).shape == (1, 1024, 256)

    def test_non_square_token_count(self):
        with pytest.raises(DimensionError):
            maps_from_tokens(Tensor(np.zeros((1, 15, 8))))

    def test_wrong_channel_count(self):
        with pytest.raises(DimensionError):
            tokens_from_maps(Tensor(np.zeros((1, 8, 2, 2))), 16)


class TestBceLoss:
    def test_half_probability(self, float64):
        loss = bce_loss(Tensor([0.5]), np.array([1.0]))
        assert abs(loss.item() - math.log(2.0)) < 1e-6

    def test_confident_correct_is_near_zero(self, float64):
        assert bce_loss(Tensor([1.0]), np.array([1.0])).item() < 1e-6

    def test_batch_mean(self, float64):
        loss = bce_loss(Tensor([0.9, 0.2]), np.array([1.0, 0.0]))
        assert abs(loss.item() - (-0.5 * (math.log(0.9) + math.log(0.8)))) < 1e-12
        assert abs(loss.item() - 0.164252) < 1e-6

    def test_gradient_through_sigmoid(self, float64):
        logits = Tensor([0.3, -1.2], requires_grad=True)
        labels = np.array([1.0, 0.0])
        backward(bce_loss(sigmoid(logits), labels))
        p = 1.0 / (1.0 + np.exp(-logits.data))
        np.testing.assert_allclose(logits.grad, (p - labels) / 2, atol=1e-12)

    def test_empty_batch(self):
        with pytest.raises(ArgumentError):
            bce_loss(Tensor(np.zeros(0)), np.zeros(0))
