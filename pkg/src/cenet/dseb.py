"""Skip-connection enhancement: edge amplification and differential attention
running (by default) as parallel branches over the fused encoder/decoder signal."""

from __future__ import annotations

import math

import numpy as np

from . import tensor as T
from .ops import conv2d, resize_bilinear
from .params import ParamSet, SplitMix64, conv_weight, linear_weight

SCALE_FINE = 0.75
SCALE_COARSE = 0.5


def to_tokens(x: T.Tensor) -> T.Tensor:
    """[N,C,H,W] -> [N, H*W, C]."""
    n, c, h, w = x.shape
    return T.moveaxis(T.reshape(x, (n, c, h * w)), 1, 2)


def from_tokens(x: T.Tensor, h: int, w: int) -> T.Tensor:
    """[N, H*W, C] -> [N,C,H,W]."""
    n, _, c = x.shape
    return T.reshape(T.moveaxis(x, 2, 1), (n, c, h, w))


class EdgeAmplifier:
    """Adds back per-channel weighted edge residuals.

    Two degraded reconstructions are formed by resizing down to 0.75x and 0.5x
    and back up to the original extents; their absolute difference isolates
    detail lost between the two scales, which is re-injected weighted by a
    learnable per-channel coefficient (zero-initialized, so the block starts
    as the identity).
    """

    def __init__(self, params: ParamSet, prefix: str, channels: int):
        self.channels = channels
        self.weight = params.add(f"{prefix}.edge_weight", np.zeros(channels))

    def forward(self, x: T.Tensor) -> T.Tensor:
        n, c, h, w = x.shape
        if h < 2 or w < 2:
            raise ValueError(f"edge amplifier needs spatial extents >= 2, got {h}x{w}")
        # Restore explicitly to (h, w): rounding of h*scale must not leak into shapes.
        u1 = resize_bilinear(resize_bilinear(x, scale=SCALE_FINE), out_hw=(h, w))
        u2 = resize_bilinear(resize_bilinear(x, scale=SCALE_COARSE), out_hw=(h, w))
        edge = T.absolute(T.sub(u1, u2))
        lam = T.reshape(self.weight, (1, c, 1, 1))
        return T.add(x, T.mul(lam, edge))


class DifferentialAttention:
    """Attention as the difference of two softmax maps over split query/key groups.

    Per head the query and key projections are halved into two groups; each
    group yields its own softmax map and the second is subtracted with a
    learnable scalar weight, cancelling attention mass common to both groups.
    """

    def __init__(self, params: ParamSet, prefix: str, channels: int, heads: int,
                 rng: SplitMix64, mix_init: float = 0.8):
        if heads < 1 or channels % (2 * heads) != 0:
            raise ValueError(
                f"channels={channels} must be divisible by 2*heads={2 * heads}")
        self.channels = channels
        self.heads = heads
        self.group_width = channels // (2 * heads)
        self.wq = params.add(f"{prefix}.wq", linear_weight(rng, channels, channels))
        self.wk = params.add(f"{prefix}.wk", linear_weight(rng, channels, channels))
        self.wv = params.add(f"{prefix}.wv", linear_weight(rng, channels, channels))
        self.wo = params.add(f"{prefix}.wo", linear_weight(rng, channels, channels))
        self.mix = params.add(f"{prefix}.mix", np.float64(mix_init))

    def _heads(self, x: T.Tensor, tokens: int) -> T.Tensor:
        # [N,L,C] -> [N,heads,L,C/heads]
        n = x.shape[0]
        per_head = self.channels // self.heads
        return T.moveaxis(T.reshape(x, (n, tokens, self.heads, per_head)), 1, 2)

    def maps(self, x: T.Tensor) -> tuple[T.Tensor, T.Tensor]:
        """The two per-head softmax maps, each [N,heads,L,L] with rows summing to 1."""
        n, c, h, w = x.shape
        tokens = to_tokens(x)
        q = self._heads(T.linear(tokens, self.wq), h * w)
        k = self._heads(T.linear(tokens, self.wk), h * w)
        d = self.group_width
        scale = 1.0 / math.sqrt(d)
        q1, q2 = T.split(q, (d, d), axis=3)
        k1, k2 = T.split(k, (d, d), axis=3)
        a1 = T.softmax_lastdim(T.mul(T.matmul(q1, T.swap_last2(k1)), scale))
        a2 = T.softmax_lastdim(T.mul(T.matmul(q2, T.swap_last2(k2)), scale))
        return a1, a2

    def forward(self, x: T.Tensor) -> T.Tensor:
        n, c, h, w = x.shape
        a1, a2 = self.maps(x)
        amap = T.sub(a1, T.mul(self.mix, a2))
        v = self._heads(T.linear(to_tokens(x), self.wv), h * w)
        mixed = T.matmul(amap, v)                            # [N,heads,L,C/heads]
        merged = T.reshape(T.moveaxis(mixed, 1, 2), (n, h * w, c))
        return from_tokens(T.linear(merged, self.wo), h, w)


class DualEnhancementBlock:
    """Fuses an encoder skip with the upsampled decoder signal, then enhances it.

    concat -> 1x1 reduce -> {edge branch, attention branch} -> 1x1 project.
    A disabled branch contributes the fused input unchanged. `sequential=True`
    chains the branches instead of summing them.
    """

    def __init__(self, params: ParamSet, prefix: str, channels: int, heads: int,
                 rng: SplitMix64, enable_edge: bool = True, enable_attention: bool = True,
                 sequential: bool = False):
        self.channels = channels
        self.enable_edge = enable_edge
        self.enable_attention = enable_attention
        self.sequential = sequential
        self.fuse_in_w = params.add(f"{prefix}.fuse_in.w", conv_weight(rng, channels, 2 * channels, 1))
        self.fuse_in_b = params.add(f"{prefix}.fuse_in.b", np.zeros(channels))
        self.edge = EdgeAmplifier(params, f"{prefix}.edge", channels)
        self.attention = DifferentialAttention(params, f"{prefix}.attn", channels, heads, rng)
        self.fuse_out_w = params.add(f"{prefix}.fuse_out.w", conv_weight(rng, channels, channels, 1))
        self.fuse_out_b = params.add(f"{prefix}.fuse_out.b", np.zeros(channels))

    def forward(self, enc: T.Tensor, dec_up: T.Tensor) -> T.Tensor:
        if enc.shape != dec_up.shape:
            raise ValueError(f"skip/decoder shapes differ: {enc.shape} vs {dec_up.shape}")
        x = conv2d(T.concat([enc, dec_up], axis=1), self.fuse_in_w, self.fuse_in_b)
        if self.sequential:
            y = x
            if self.enable_edge:
                y = self.edge.forward(y)
            if self.enable_attention:
                y = self.attention.forward(y)
            merged = y
        else:
            b_edge = self.edge.forward(x) if self.enable_edge else x
            b_attn = self.attention.forward(x) if self.enable_attention else x
            merged = T.add(b_edge, b_attn)
        return conv2d(merged, self.fuse_out_w, self.fuse_out_b)
