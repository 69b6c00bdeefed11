"""Decoder refinement stage: channel calibration, multi-scale aggregation,
weighted non-local denoising, and a spatially recalibrated MLP."""

from __future__ import annotations

import math

import numpy as np

from . import tensor as T
from .dseb import from_tokens, to_tokens
from .ops import conv2d, pool_stats_channel, pool_stats_spatial
from .params import ParamSet, SplitMix64, conv_weight, linear_weight


def split_channels(channels: int) -> tuple[int, int, int, int]:
    """Four-way channel split: three equal conv branches plus a small pooled
    branch holding at most 10 percent of the channels.

    The pooled share is the largest c4 in [1, channels//10] with
    (channels - c4) divisible by 3.
    """
    cap = channels // 10
    for c4 in range(cap, 0, -1):
        if (channels - c4) % 3 == 0:
            c_eq = (channels - c4) // 3
            return (c_eq, c_eq, c_eq, c4)
    raise ValueError(
        f"no valid channel split for C={channels}; need some c4 in [1, {cap}] with "
        f"(C - c4) % 3 == 0 (smallest workable C is 13; try C={max(channels + 1, 13)})")


class ChannelCalibration:
    """Channel gate driven by global avg/max/std pooling.

    The pooled 3C descriptor passes through a bottleneck (reduction 4, GELU)
    and a sigmoid, producing one gate per channel in (0,1).
    """

    def __init__(self, params: ParamSet, prefix: str, channels: int, rng: SplitMix64,
                 reduction: int = 4):
        hidden = max(1, channels // reduction)
        self.channels = channels
        self.w1 = params.add(f"{prefix}.w1", linear_weight(rng, hidden, 3 * channels))
        self.b1 = params.add(f"{prefix}.b1", np.zeros(hidden))
        self.w2 = params.add(f"{prefix}.w2", linear_weight(rng, channels, hidden))
        self.b2 = params.add(f"{prefix}.b2", np.zeros(channels))

    def gate(self, x: T.Tensor) -> T.Tensor:
        g = pool_stats_spatial(x)                               # [N,3C]
        return T.sigmoid(T.linear(T.gelu(T.linear(g, self.w1, self.b1)), self.w2, self.b2))

    def forward(self, x: T.Tensor) -> T.Tensor:
        n, c, _, _ = x.shape
        s = T.reshape(self.gate(x), (n, c, 1, 1))
        return T.mul(x, s)


class MultiScaleAggregator:
    """Parallel dilated depthwise convolutions over a channel split, gated and
    fused with a residual.

    Splits 1-3 run 3x3 depthwise convolutions at the configured dilations
    (padding = dilation, so extents are preserved); split 4 collapses to a
    single channel-mean map. The concatenated branches and the full input each
    pass a SiLU-gated pointwise convolution, and their product is added to the
    residual input (the stage input from before channel calibration).
    """

    def __init__(self, params: ParamSet, prefix: str, channels: int, rng: SplitMix64,
                 dilations: tuple[int, int, int] = (3, 5, 8)):
        if len(dilations) != 3:
            raise ValueError(f"expected exactly 3 dilations, got {dilations}")
        self.channels = channels
        self.split = split_channels(channels)
        self.dilations = tuple(dilations)
        self.dw_w = []
        self.dw_b = []
        for i, d in enumerate(self.dilations):
            c_i = self.split[i]
            self.dw_w.append(params.add(f"{prefix}.dw{d}.w", conv_weight(rng, c_i, 1, 3)))
            self.dw_b.append(params.add(f"{prefix}.dw{d}.b", np.zeros(c_i)))
        cat_channels = sum(self.split[:3]) + 1
        self.gate_a_w = params.add(f"{prefix}.gate_a.w", conv_weight(rng, channels, cat_channels, 1))
        self.gate_a_b = params.add(f"{prefix}.gate_a.b", np.zeros(channels))
        self.gate_b_w = params.add(f"{prefix}.gate_b.w", conv_weight(rng, channels, channels, 1))
        self.gate_b_b = params.add(f"{prefix}.gate_b.b", np.zeros(channels))

    def forward(self, x: T.Tensor, residual: T.Tensor) -> T.Tensor:
        if x.shape != residual.shape:
            raise ValueError(f"input/residual shapes differ: {x.shape} vs {residual.shape}")
        parts = T.split(x, self.split, axis=1)
        branches = []
        for i, d in enumerate(self.dilations):
            branches.append(conv2d(parts[i], self.dw_w[i], self.dw_b[i],
                                   dilation=d, padding=d, groups=self.split[i]))
        branches.append(T.tmean(parts[3], axis=1, keepdims=True))
        cat = T.concat(branches, axis=1)
        gated = T.mul(T.silu(conv2d(cat, self.gate_a_w, self.gate_a_b)),
                      T.silu(conv2d(x, self.gate_b_w, self.gate_b_b)))
        return T.add(gated, residual)


class WeightedNonLocalBlock:
    """Embedded-Gaussian non-local attention added through a learnable scalar.

    out = x + gamma * project(attend(x)); gamma starts at 0, so the block is
    initially the identity and learns how much long-range smoothing to apply.
    """

    def __init__(self, params: ParamSet, prefix: str, channels: int, rng: SplitMix64):
        if channels < 2:
            raise ValueError(f"non-local block needs >= 2 channels, got {channels}")
        inner = channels // 2
        self.channels = channels
        self.inner = inner
        self.theta_w = params.add(f"{prefix}.theta.w", linear_weight(rng, inner, channels))
        self.theta_b = params.add(f"{prefix}.theta.b", np.zeros(inner))
        self.phi_w = params.add(f"{prefix}.phi.w", linear_weight(rng, inner, channels))
        self.phi_b = params.add(f"{prefix}.phi.b", np.zeros(inner))
        self.g_w = params.add(f"{prefix}.g.w", linear_weight(rng, inner, channels))
        self.g_b = params.add(f"{prefix}.g.b", np.zeros(inner))
        self.z_w = params.add(f"{prefix}.z.w", linear_weight(rng, channels, inner))
        self.z_b = params.add(f"{prefix}.z.b", np.zeros(channels))
        self.gamma = params.add(f"{prefix}.gamma", np.float64(0.0))

    def attention(self, x: T.Tensor) -> T.Tensor:
        tokens = to_tokens(x)
        t = T.linear(tokens, self.theta_w, self.theta_b)
        p = T.linear(tokens, self.phi_w, self.phi_b)
        scale = 1.0 / math.sqrt(self.inner)
        return T.softmax_lastdim(T.mul(T.matmul(t, T.swap_last2(p)), scale))

    def forward(self, x: T.Tensor) -> T.Tensor:
        n, c, h, w = x.shape
        att = self.attention(x)
        g = T.linear(to_tokens(x), self.g_w, self.g_b)
        y = T.linear(T.matmul(att, g), self.z_w, self.z_b)
        return T.add(x, T.mul(self.gamma, from_tokens(y, h, w)))


class SpatialCalibration:
    """Single-channel spatial gate from cross-channel avg/max/std pooling.

    The 3-plane descriptor feeds a pointwise and a 7x7 convolution (both 3->1);
    the sigmoid of their sum rescales every channel of the input.
    """

    def __init__(self, params: ParamSet, prefix: str, rng: SplitMix64, kernel: int = 7):
        self.kernel = kernel
        self.pw_w = params.add(f"{prefix}.pw.w", conv_weight(rng, 1, 3, 1))
        self.pw_b = params.add(f"{prefix}.pw.b", np.zeros(1))
        self.kw_w = params.add(f"{prefix}.kw.w", conv_weight(rng, 1, 3, kernel))
        self.kw_b = params.add(f"{prefix}.kw.b", np.zeros(1))

    def forward(self, x: T.Tensor) -> T.Tensor:
        desc = pool_stats_channel(x)                            # [N,3,H,W]
        gate = T.sigmoid(T.add(conv2d(desc, self.pw_w, self.pw_b),
                               conv2d(desc, self.kw_w, self.kw_b,
                                      padding=self.kernel // 2)))
        return T.mul(x, gate)


class ContextAttentionStage:
    """Full decoder stage: calibrate channels, aggregate multi-scale context,
    denoise non-locally, then refine through a spatially recalibrated MLP.

    The MLP normalizes tokens, expands 4x with GELU, applies the spatial gate
    on the expanded map, normalizes again, contracts, and adds the result back.
    Disabled sub-blocks act as the identity. The second norm's gain starts at
    zero (same fade-in idea as the non-local gamma), so the stage initially
    passes its aggregated signal through unchanged instead of injecting
    normalization-amplified noise.
    """

    LN_EPS = 1e-5

    def __init__(self, params: ParamSet, prefix: str, channels: int, rng: SplitMix64,
                 dilations: tuple[int, int, int] = (3, 5, 8),
                 enable_ccu: bool = True, enable_wnlb: bool = True, mlp_ratio: int = 4):
        self.channels = channels
        self.enable_ccu = enable_ccu
        self.enable_wnlb = enable_wnlb
        hidden = mlp_ratio * channels
        self.ccu = ChannelCalibration(params, f"{prefix}.ccu", channels, rng)
        self.mca = MultiScaleAggregator(params, f"{prefix}.mca", channels, rng, dilations)
        self.wnlb = WeightedNonLocalBlock(params, f"{prefix}.wnlb", channels, rng)
        self.norm1_g = params.add(f"{prefix}.norm1.g", np.ones(channels))
        self.norm1_b = params.add(f"{prefix}.norm1.b", np.zeros(channels))
        self.mlp_in_w = params.add(f"{prefix}.mlp_in.w", linear_weight(rng, hidden, channels))
        self.mlp_in_b = params.add(f"{prefix}.mlp_in.b", np.zeros(hidden))
        self.srm = SpatialCalibration(params, f"{prefix}.srm", rng)
        self.norm2_g = params.add(f"{prefix}.norm2.g", np.zeros(hidden))
        self.norm2_b = params.add(f"{prefix}.norm2.b", np.zeros(hidden))
        self.mlp_out_w = params.add(f"{prefix}.mlp_out.w", linear_weight(rng, channels, hidden))
        self.mlp_out_b = params.add(f"{prefix}.mlp_out.b", np.zeros(channels))

    def forward(self, x: T.Tensor) -> T.Tensor:
        n, c, h, w = x.shape
        calibrated = self.ccu.forward(x) if self.enable_ccu else x
        aggregated = self.mca.forward(calibrated, x)
        refined = self.wnlb.forward(aggregated) if self.enable_wnlb else aggregated
        tokens = T.layer_norm(to_tokens(refined), self.norm1_g, self.norm1_b, self.LN_EPS)
        expanded = T.gelu(T.linear(tokens, self.mlp_in_w, self.mlp_in_b))
        recal = self.srm.forward(from_tokens(expanded, h, w))
        recal_tokens = T.layer_norm(to_tokens(recal), self.norm2_g, self.norm2_b, self.LN_EPS)
        delta = T.linear(recal_tokens, self.mlp_out_w, self.mlp_out_b)
        return T.add(refined, from_tokens(delta, h, w))
