"""Channel calibration, multi-scale aggregation, weighted non-local block,
spatial calibration, and the assembled decoder stage."""

import math

import numpy as np
import numpy.testing as npt
import pytest

from cenet import tensor as T
from cenet.cfam import (ChannelCalibration, ContextAttentionStage, MultiScaleAggregator,
                        SpatialCalibration, WeightedNonLocalBlock, split_channels)
from cenet.gradcheck import finite_diff_check
from cenet.params import ParamSet, SplitMix64

from reference import (ref_channel_stats, ref_conv2d, ref_gelu_scalar, ref_nonlocal,
                       ref_sigmoid_scalar, ref_silu_scalar, ref_spatial_stats)

RNG = np.random.default_rng(99)


def zero_all(ps: ParamSet):
    for t in ps.tensors():
        t.data[...] = 0.0


def assert_gradients_pass(fn, ps, seed=0):
    reports = finite_diff_check(fn, ps, seed=seed)
    failing = [r.row() for r in reports if not r.passed]
    assert not failing, "\n".join(failing)


class TestSplitChannels:
    @pytest.mark.parametrize("channels,expected", [
        (64, (20, 20, 20, 4)),
        (320, (96, 96, 96, 32)),
        (13, (4, 4, 4, 1)),
        (16, (5, 5, 5, 1)),
    ])
    def test_stated_splits(self, channels, expected):
        assert split_channels(channels) == expected

    def test_parts_sum_and_cap(self):
        for c in range(13, 1025):
            try:
                parts = split_channels(c)
            except ValueError:
                continue
            assert sum(parts) == c
            assert parts[0] == parts[1] == parts[2]
            assert 1 <= parts[3] <= c // 10

    def test_invalid_rejected_with_guidance(self):
        with pytest.raises(ValueError, match="try C="):
            split_channels(14)
        with pytest.raises(ValueError, match="13"):
            split_channels(12)


class TestChannelCalibration:
    def make(self, channels, seed=0):
        ps = ParamSet()
        block = ChannelCalibration(ps, "ccu", channels, SplitMix64(seed))
        return ps, block

    def test_saturated_gate_passes_input_through(self):
        ps, block = self.make(4)
        zero_all(ps)
        block.b2.data[...] = 50.0          # sigmoid(50) saturates to 1.0 in float64
        x = T.Tensor(RNG.uniform(-2, 2, (1, 4, 3, 3)))
        npt.assert_array_equal(block.forward(x).data, x.data)

    def test_zero_weights_halve_input(self):
        ps, block = self.make(4)
        zero_all(ps)
        x = T.Tensor(RNG.uniform(-2, 2, (1, 4, 3, 3)))
        npt.assert_allclose(block.forward(x).data, 0.5 * x.data, rtol=0, atol=1e-15)

    def test_matches_scalar_oracle(self):
        ps, block = self.make(4, seed=3)
        block.b1.data[...] = RNG.uniform(-0.2, 0.2, block.b1.size)
        block.b2.data[...] = RNG.uniform(-0.2, 0.2, 4)
        x = RNG.uniform(-2, 2, (1, 4, 3, 3))
        stats = ref_spatial_stats(x)[0]
        hidden = np.array([ref_gelu_scalar(v) for v in
                           block.w1.data @ stats + block.b1.data])
        gate = np.array([ref_sigmoid_scalar(v) for v in
                         block.w2.data @ hidden + block.b2.data])
        expected = x * gate[None, :, None, None]
        npt.assert_allclose(block.forward(T.Tensor(x)).data, expected, rtol=0, atol=1e-12)

    def test_gate_range_and_contraction(self):
        ps, block = self.make(8, seed=4)
        x = T.Tensor(RNG.uniform(-3, 3, (2, 8, 4, 4)))
        gate = block.gate(x).data
        assert np.all(gate > 0) and np.all(gate < 1)
        out = block.forward(x).data
        assert np.all(np.abs(out) <= np.abs(x.data))

    def test_gradients(self):
        ps, block = self.make(13, seed=5)
        x = T.Tensor(RNG.uniform(-1, 1, (1, 13, 3, 3)))
        assert_gradients_pass(lambda: T.tsum(block.forward(x)), ps)


class TestMultiScaleAggregator:
    def make(self, channels, seed=0, dilations=(3, 5, 8)):
        ps = ParamSet()
        block = MultiScaleAggregator(ps, "mca", channels, SplitMix64(seed), dilations)
        return ps, block

    def test_zero_weights_return_residual_exactly(self):
        ps, block = self.make(13)
        zero_all(ps)
        x = T.Tensor(RNG.uniform(-2, 2, (1, 13, 5, 5)))
        res = T.Tensor(RNG.uniform(-2, 2, (1, 13, 5, 5)))
        npt.assert_array_equal(block.forward(x, res).data, res.data)

    @pytest.mark.parametrize("extent", [8, 16])
    def test_extent_preserved(self, extent):
        ps, block = self.make(16, seed=1)
        x = T.Tensor(RNG.uniform(-1, 1, (1, 16, extent, extent)))
        assert block.forward(x, x).shape == (1, 16, extent, extent)

    def test_matches_nested_loop_oracle(self):
        ps, block = self.make(13, seed=2)
        for b in (block.dw_b + [block.gate_a_b, block.gate_b_b]):
            b.data[...] = RNG.uniform(-0.2, 0.2, b.size)
        x = RNG.uniform(-1, 1, (1, 13, 9, 9))
        res = RNG.uniform(-1, 1, (1, 13, 9, 9))
        c1, c2, c3, c4 = block.split
        parts = np.split(x, np.cumsum([c1, c2, c3])[:3], axis=1)
        branches = []
        for i, d in enumerate((3, 5, 8)):
            branches.append(ref_conv2d(parts[i], block.dw_w[i].data, block.dw_b[i].data,
                                       dilation=d, padding=d, groups=parts[i].shape[1]))
        branches.append(parts[3].mean(axis=1, keepdims=True))
        cat = np.concatenate(branches, axis=1)
        silu = np.vectorize(ref_silu_scalar)
        gate_a = silu(ref_conv2d(cat, block.gate_a_w.data, block.gate_a_b.data))
        gate_b = silu(ref_conv2d(x, block.gate_b_w.data, block.gate_b_b.data))
        expected = gate_a * gate_b + res
        out = block.forward(T.Tensor(x), T.Tensor(res))
        npt.assert_allclose(out.data, expected, rtol=0, atol=1e-12)

    def test_shape_mismatch_rejected(self):
        ps, block = self.make(13)
        with pytest.raises(ValueError, match="differ"):
            block.forward(T.Tensor(np.zeros((1, 13, 4, 4))),
                          T.Tensor(np.zeros((1, 13, 5, 5))))

    def test_gradients(self):
        ps, block = self.make(13, seed=3)
        x = T.Tensor(RNG.uniform(-1, 1, (1, 13, 5, 5)))
        res = T.Tensor(RNG.uniform(-1, 1, (1, 13, 5, 5)))
        assert_gradients_pass(lambda: T.tsum(block.forward(x, res)), ps)


class TestWeightedNonLocal:
    def make(self, channels, seed=0):
        ps = ParamSet()
        block = WeightedNonLocalBlock(ps, "wnlb", channels, SplitMix64(seed))
        return ps, block

    def test_zero_gamma_is_bitwise_identity(self):
        ps, block = self.make(4, seed=1)
        x = T.Tensor(RNG.uniform(0.1, 2, (1, 4, 3, 3)))
        npt.assert_array_equal(block.forward(x).data, x.data)

    def test_single_position_closed_form(self):
        ps, block = self.make(6, seed=2)
        block.gamma.data[...] = 0.7
        x = RNG.uniform(-1, 1, (1, 6, 1, 1))
        token = x.reshape(6)
        y = block.z_w.data @ (block.g_w.data @ token + block.g_b.data) + block.z_b.data
        expected = token + 0.7 * y
        out = block.forward(T.Tensor(x))
        npt.assert_allclose(out.data.reshape(6), expected, rtol=0, atol=1e-12)

    def test_matches_scalar_oracle(self):
        ps, block = self.make(4, seed=3)
        block.gamma.data[...] = 1.0
        x = RNG.uniform(-1, 1, (1, 4, 3, 3))
        tokens = x.reshape(4, 9).T
        expected = ref_nonlocal(tokens, block.theta_w.data, block.theta_b.data,
                                block.phi_w.data, block.phi_b.data,
                                block.g_w.data, block.g_b.data,
                                block.z_w.data, block.z_b.data, 1.0)
        out = block.forward(T.Tensor(x))
        npt.assert_allclose(out.data.reshape(4, 9).T, expected, rtol=0, atol=1e-12)

    def test_attention_rows_sum_to_one(self):
        ps, block = self.make(8, seed=4)
        att = block.attention(T.Tensor(RNG.uniform(-2, 2, (2, 8, 3, 3)))).data
        npt.assert_allclose(att.sum(axis=-1), 1.0, rtol=0, atol=1e-10)

    def test_odd_channels_accepted(self):
        # floor half-width projection lets odd counts through (13 channels is
        # the smallest splittable stage, so this must work)
        ps, block = self.make(13, seed=5)
        out = block.forward(T.Tensor(RNG.uniform(-1, 1, (1, 13, 2, 2))))
        assert out.shape == (1, 13, 2, 2)
        assert block.inner == 6

    def test_too_few_channels_rejected(self):
        with pytest.raises(ValueError, match=">= 2"):
            self.make(1)

    def test_gradients(self):
        ps, block = self.make(4, seed=6)
        block.gamma.data[...] = 0.5
        x = T.Tensor(RNG.uniform(-1, 1, (1, 4, 3, 3)))
        assert_gradients_pass(lambda: T.tsum(block.forward(x)), ps)


class TestSpatialCalibration:
    def make(self, seed=0):
        ps = ParamSet()
        block = SpatialCalibration(ps, "srm", SplitMix64(seed))
        return ps, block

    def test_zero_weights_halve_input(self):
        ps, block = self.make()
        zero_all(ps)
        x = T.Tensor(np.full((1, 4, 5, 5), 1.7))
        npt.assert_allclose(block.forward(x).data, 0.5 * x.data, rtol=0, atol=1e-15)

    def test_gate_strictly_inside_unit_interval(self):
        ps, block = self.make(seed=1)
        x = RNG.uniform(-3, 3, (1, 4, 5, 5))
        out = block.forward(T.Tensor(x)).data
        gate = out / np.where(x == 0, 1.0, x)
        finite = x != 0
        assert np.all(gate[finite] > 0) and np.all(gate[finite] < 1)

    def test_matches_oracle_pipeline(self):
        ps, block = self.make(seed=2)
        block.pw_b.data[...] = 0.1
        block.kw_b.data[...] = -0.05
        x = RNG.uniform(-1, 1, (1, 4, 5, 5))
        desc = ref_channel_stats(x)
        logit = (ref_conv2d(desc, block.pw_w.data, block.pw_b.data)
                 + ref_conv2d(desc, block.kw_w.data, block.kw_b.data, padding=3))
        gate = np.vectorize(ref_sigmoid_scalar)(logit)
        expected = x * gate
        npt.assert_allclose(block.forward(T.Tensor(x)).data, expected, rtol=0, atol=1e-12)

    def test_gradients(self):
        ps, block = self.make(seed=3)
        x = T.Tensor(RNG.uniform(-1, 1, (1, 3, 7, 7)))
        assert_gradients_pass(lambda: T.tsum(block.forward(x)), ps)


class TestContextAttentionStage:
    def make(self, channels, seed=0, **kwargs):
        ps = ParamSet()
        stage = ContextAttentionStage(ps, "ctx", channels, SplitMix64(seed), **kwargs)
        return ps, stage

    def test_all_off_all_zero_is_identity(self):
        ps, stage = self.make(13, enable_ccu=False, enable_wnlb=False)
        zero_all(ps)
        x = T.Tensor(RNG.uniform(0.1, 2, (1, 13, 5, 5)))
        npt.assert_array_equal(stage.forward(x).data, x.data)

    def test_shape_preserved(self):
        ps, stage = self.make(16, seed=1)
        x = T.Tensor(RNG.uniform(-1, 1, (1, 16, 8, 8)))
        assert stage.forward(x).shape == (1, 16, 8, 8)

    def test_toggles_change_values_not_shape(self):
        x = T.Tensor(RNG.uniform(-1, 1, (1, 13, 4, 4)))
        outs = []
        for ccu in (True, False):
            for wnlb in (True, False):
                ps, stage = self.make(13, seed=2, enable_ccu=ccu, enable_wnlb=wnlb)
                stage.wnlb.gamma.data[...] = 0.3
                out = stage.forward(x)
                assert out.shape == x.shape
                outs.append(out.data)
        assert not np.allclose(outs[0], outs[3])

    def test_full_gradient_audit_c13(self):
        ps, stage = self.make(13, seed=3)
        # excite the zero-initialized fade-in gates so every branch carries signal
        stage.wnlb.gamma.data[...] = 0.4
        stage.norm2_g.data[...] = RNG.uniform(0.5, 1.5, stage.norm2_g.size)
        x = T.Tensor(RNG.uniform(-1, 1, (1, 13, 6, 6)))
        assert_gradients_pass(lambda: T.tsum(stage.forward(x)), ps)
