"""Full segmentation network: strided-conv pyramid encoder, dual-enhancement
skip connections, context-attention decoder stages, and the class head."""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .cfam import ContextAttentionStage
from .config import ModelConfig
from .dseb import DualEnhancementBlock
from .ops import conv2d, resize_bilinear
from .params import ParamSet, SplitMix64, conv_weight


class PyramidEncoder:
    """Four feature stages at 1/4, 1/8, 1/16 and 1/32 of the input extent.

    Stage 1 stacks two stride-2 3x3 convolutions; later stages use one each.
    Every convolution is followed by GELU.
    """

    def __init__(self, params: ParamSet, prefix: str, in_channels: int,
                 stage_channels: tuple, rng: SplitMix64):
        c1, c2, c3, c4 = stage_channels
        self.convs = []
        plan = [("s1a", in_channels, c1), ("s1b", c1, c1),
                ("s2", c1, c2), ("s3", c2, c3), ("s4", c3, c4)]
        for name, cin, cout in plan:
            w = params.add(f"{prefix}.{name}.w", conv_weight(rng, cout, cin, 3))
            b = params.add(f"{prefix}.{name}.b", np.zeros(cout))
            self.convs.append((w, b))

    def forward(self, img: T.Tensor) -> list[T.Tensor]:
        _, _, h, w = img.shape
        if h % 32 != 0 or w % 32 != 0:
            raise ValueError(f"encoder input extents must be divisible by 32, got {h}x{w}")
        x = img
        features = []
        for i, (wt, bt) in enumerate(self.convs):
            x = T.gelu(conv2d(x, wt, bt, stride=2, padding=1))
            if i != 0:  # the first stage needs both of its convolutions
                features.append(x)
        return features


class CENet:
    """Context enhancement segmentation network over N,Cin,H,W inputs.

    The deepest encoder feature passes straight into a decoder stage; each
    shallower level upsamples the running decoder map 2x, projects it to the
    skip's channel count, fuses it with the skip through a dual enhancement
    block, and refines the result with another decoder stage. A pointwise head
    plus 4x bilinear upsampling produces per-class logits at input resolution.
    """

    def __init__(self, cfg: ModelConfig):
        cfg.validate()
        self.cfg = cfg
        self.params = ParamSet()
        rng = SplitMix64(cfg.seed)
        c = cfg.stage_channels
        self.encoder = PyramidEncoder(self.params, "enc", cfg.in_channels, c, rng)
        self.stages = {}
        self.skips = {}
        self.up_proj = {}
        self.stages[4] = ContextAttentionStage(
            self.params, "dec4.ctx", c[3], rng, cfg.dilations,
            enable_ccu=cfg.enable_ccu, enable_wnlb=cfg.enable_wnlb)
        for level in (3, 2, 1):
            ch = c[level - 1]
            up_w = self.params.add(f"dec{level}.up.w", conv_weight(rng, ch, c[level], 1))
            up_b = self.params.add(f"dec{level}.up.b", np.zeros(ch))
            self.up_proj[level] = (up_w, up_b)
            self.skips[level] = DualEnhancementBlock(
                self.params, f"dec{level}.skip", ch, cfg.heads, rng,
                enable_edge=cfg.enable_fea, enable_attention=cfg.enable_diffatt,
                sequential=cfg.dseb_sequential)
            self.stages[level] = ContextAttentionStage(
                self.params, f"dec{level}.ctx", ch, rng, cfg.dilations,
                enable_ccu=cfg.enable_ccu, enable_wnlb=cfg.enable_wnlb)
        self.head_w = self.params.add("head.w", conv_weight(rng, cfg.num_classes, c[0], 1))
        self.head_b = self.params.add("head.b", np.zeros(cfg.num_classes))

    def forward(self, img: T.Tensor) -> T.Tensor:
        img = T.as_tensor(img)
        n, cin, h, w = img.shape
        if cin != self.cfg.in_channels:
            raise ValueError(f"expected {self.cfg.in_channels} input channels, got {cin}")
        feats = self.encoder.forward(img)
        current = self.stages[4].forward(feats[3])
        for level in (3, 2, 1):
            _, _, fh, fw = feats[level - 1].shape
            up = resize_bilinear(current, out_hw=(fh, fw))
            up = conv2d(up, *self.up_proj[level])
            fused = self.skips[level].forward(feats[level - 1], up)
            current = self.stages[level].forward(fused)
        logits = conv2d(current, self.head_w, self.head_b)
        return resize_bilinear(logits, out_hw=(h, w))

    def predict_logits(self, img: np.ndarray) -> np.ndarray:
        with T.no_grad():
            return self.forward(T.Tensor(img)).data

    def param_count(self) -> int:
        return self.params.count_elements()

    def stage_shapes(self) -> list[tuple[int, int, int]]:
        h, w = self.cfg.input_hw
        return [(c, h // s, w // s)
                for c, s in zip(self.cfg.stage_channels, (4, 8, 16, 32))]


def init_params(cfg: ModelConfig) -> ParamSet:
    """Freshly initialized parameters for `cfg` (same draws as CENet(cfg))."""
    return CENet(cfg).params


def param_count(params: ParamSet) -> int:
    return params.count_elements()
