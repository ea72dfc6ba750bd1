"""Pyramid attention: downsampling, maps, fusion identity, re-weighting."""

import numpy as np
import pytest

from dsfnet.tensor import Tensor, finite_diff_check
from dsfnet.attention import (FeatureWeighting, PyramidAttention, attention_fuse,
                              attention_map, attention_weighted_sum, channel_weight,
                              multiscale_downsample, spatial_weight)


class TestMultiscaleDownsample:
    def test_constant_preserved_at_every_level(self):
        levels = multiscale_downsample(Tensor(np.full((1, 2, 16, 16), 0.4)), 3)
        for lvl in levels:
            assert np.allclose(lvl.data, 0.4)

    def test_checkerboard_averages_to_half(self):
        board = np.indices((4, 4)).sum(axis=0) % 2
        out = multiscale_downsample(Tensor(board[None, None].astype(float)), 1)[0]
        assert np.allclose(out.data, 0.5)

    def test_extent_halving(self):
        levels = multiscale_downsample(Tensor(np.zeros((1, 1, 32, 32))), 3)
        assert [lvl.shape[2] for lvl in levels] == [16, 8, 4]

    def test_odd_extents_use_ceil(self):
        levels = multiscale_downsample(Tensor(np.zeros((1, 1, 5, 7))), 2)
        assert levels[0].shape[2:] == (3, 4)
        assert levels[1].shape[2:] == (2, 2)

    def test_channels_unchanged(self):
        levels = multiscale_downsample(Tensor(np.zeros((2, 5, 8, 8))), 2)
        assert all(lvl.shape[1] == 5 for lvl in levels)


class TestAttentionMap:
    def test_constant_input_uniform_map(self):
        x = Tensor(np.full((1, 3, 4, 5), 1.7))
        w = Tensor(np.random.default_rng(0).standard_normal((1, 3, 1, 1)))
        out = attention_map(x, w)
        assert np.allclose(out.data, 1.0 / 20.0)

    def test_two_position_closed_form(self):
        # one position scores ln 3 above the other -> [0.75, 0.25]
        x = Tensor(np.array([[[[np.log(3.0), 0.0]]]]))
        w = Tensor(np.ones((1, 1, 1, 1)))
        assert np.allclose(attention_map(x, w).data.reshape(-1), [0.75, 0.25])

    def test_unit_mass(self):
        rng = np.random.default_rng(1)
        w = Tensor(rng.standard_normal((1, 4, 1, 1)))
        for seed in range(20):
            x = Tensor(np.random.default_rng(seed).standard_normal((2, 4, 6, 6)) * 3)
            sums = attention_map(x, w).data.sum(axis=(2, 3))
            assert np.abs(sums - 1.0).max() < 1e-6

    def test_projection_shape_checked(self):
        with pytest.raises(ValueError):
            attention_map(Tensor(np.ones((1, 3, 4, 4))), Tensor(np.ones((1, 2, 1, 1))))


class TestAttentionFuse:
    def test_uniform_full_resolution_maps_on_constant(self):
        c, h, w = 0.8, 4, 6
        x = Tensor(np.full((1, 3, h, w), c))
        uniform = Tensor(np.full((1, 1, h, w), 1.0 / (h * w)))
        out = attention_fuse(x, [uniform, uniform])
        assert np.allclose(out.data, c * (1.0 + 1.0 / (h * w)), atol=1e-12)

    def test_zero_map_single_level_is_identity(self):
        x = Tensor(np.random.default_rng(2).random((1, 2, 4, 4)))
        out = attention_fuse(x, [Tensor(np.zeros((1, 1, 4, 4)))])
        assert np.allclose(out.data, x.data, atol=1e-15)

    def test_residual_identity_against_weighted_sum(self):
        # fused output minus input equals the plain attention-weighted sum
        rng = np.random.default_rng(3)
        x = Tensor(rng.standard_normal((2, 3, 8, 8)))
        maps = [Tensor(np.abs(rng.standard_normal((2, 1, 8 >> n, 8 >> n))))
                for n in range(1, 3)]
        fused = attention_fuse(x, maps)
        weighted = attention_weighted_sum(x, maps)
        assert np.abs((fused.data - x.data) - weighted.data).max() < 1e-12

    def test_pyramid_on_constant_input_oracle(self):
        # uniform per-level maps keep their own-level mass 1/(H_n W_n); after
        # upsampling the fused constant is c * (1 + mean_n 4^n / (H W))
        c, h = 0.6, 8
        levels = 2
        expected = c * (1.0 + np.mean([4.0 ** n for n in (1, 2)]) / (h * h))
        block = PyramidAttention(2, levels=levels, rng=np.random.default_rng(0))
        block.eval()
        x = Tensor(np.full((1, 2, h, h), c))
        fused = attention_fuse(x, block.attention_maps(x))
        assert np.allclose(fused.data, expected, atol=1e-10)


class TestWeighting:
    def test_channel_weight_zero_weights_halve(self):
        f = Tensor(np.random.default_rng(4).standard_normal((1, 4, 3, 3)))
        w2 = Tensor(np.zeros((2, 4, 1, 1)))
        w1 = Tensor(np.zeros((4, 2, 1, 1)))
        out = channel_weight(f, w2, w1)
        assert np.allclose(out.data, 0.5 * f.data)

    def test_channel_response_of_constant_channel(self):
        from dsfnet.layers import global_avg_pool
        f = Tensor(np.full((1, 3, 5, 5), 2.5))
        assert np.allclose(global_avg_pool(f).data.reshape(-1), 2.5)

    def test_spatial_weight_zero_weights_halve(self):
        f = Tensor(np.random.default_rng(5).standard_normal((1, 4, 3, 3)))
        out = spatial_weight(f, Tensor(np.zeros((1, 4, 1, 1))))
        assert np.allclose(out.data, 0.5 * f.data)

    def test_spatial_weight_single_channel_closed_form(self):
        f = np.random.default_rng(6).standard_normal((1, 1, 4, 4))
        out = spatial_weight(Tensor(f), Tensor(np.ones((1, 1, 1, 1))))
        assert np.allclose(out.data, f / (1.0 + np.exp(-f)))

    def test_weighted_maps_bounded_by_input(self):
        rng = np.random.default_rng(7)
        f = Tensor(rng.standard_normal((1, 4, 5, 5)))
        block = FeatureWeighting(4, rng=rng)
        assert (np.abs(block.channel(f).data) <= np.abs(f.data) + 1e-15).all()
        assert (np.abs(block.spatial_map(f).data) <= np.abs(f.data) + 1e-15).all()
        assert (np.abs(block.enhance(f).data) <= 2 * np.abs(f.data) + 1e-15).all()

    def test_enhance_zero_weights_identity(self):
        f = Tensor(np.random.default_rng(8).standard_normal((1, 4, 3, 3)))
        block = FeatureWeighting(4, rng=np.random.default_rng(0))
        for conv in (block.reduce, block.expand, block.spatial):
            conv.weight.data[...] = 0.0
        assert np.allclose(block.enhance(f).data, f.data, atol=1e-15)

    def test_enhance_of_zero_is_zero(self):
        block = FeatureWeighting(4, rng=np.random.default_rng(1))
        out = block.enhance(Tensor(np.zeros((1, 4, 3, 3))))
        assert np.array_equal(out.data, np.zeros_like(out.data))

    def test_enhance_gradient(self):
        block = FeatureWeighting(4, rng=np.random.default_rng(2))
        worst = 0.0
        for seed in range(3):
            x = Tensor(np.random.default_rng((41, seed)).standard_normal((1, 4, 8, 8)))
            worst = max(worst, finite_diff_check(lambda t: block.enhance(t).sum(), x))
        assert worst < 1e-4


class TestPyramidAttention:
    def test_maps_are_distributions(self):
        block = PyramidAttention(3, levels=3, rng=np.random.default_rng(0))
        block.eval()
        for seed in range(10):
            x = Tensor(np.random.default_rng(seed).standard_normal((2, 3, 16, 16)))
            for amap in block.attention_maps(x):
                assert (amap.data >= 0).all()
                assert np.abs(amap.data.sum(axis=(2, 3)) - 1.0).max() < 1e-6

    def test_full_chain_gradient(self):
        block = PyramidAttention(4, levels=2, rng=np.random.default_rng(1))
        block.eval()
        worst = 0.0
        for seed in range(3):
            x = Tensor(np.random.default_rng((43, seed)).standard_normal((1, 4, 8, 8)))
            worst = max(worst, finite_diff_check(lambda t: block(t).sum(), x))
        assert worst < 1e-4
