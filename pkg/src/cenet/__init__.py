"""Desk-scale context enhancement segmentation network built on a from-scratch
float64 autodiff engine: dual-enhancement skip blocks, context-attention
decoder stages, gradient audits, metrics, and a CLI."""

from .cfam import (ChannelCalibration, ContextAttentionStage, MultiScaleAggregator,
                   SpatialCalibration, WeightedNonLocalBlock, split_channels)
from .config import ModelConfig, load_config, parse_config_text, save_config
from .dseb import DifferentialAttention, DualEnhancementBlock, EdgeAmplifier
from .estimator import CENetSegmenter
from .gradcheck import GradReport, finite_diff_check
from .metrics import dice_score, hd95, pixel_accuracy
from .model import CENet, init_params, param_count
from .params import ParamSet, SplitMix64
from .tensor import Tensor, no_grad
from .train import (Adam, SGD, SegSample, dice_ce_loss, make_optimizer,
                    synth_dataset, train_loop)

__version__ = "0.1.0"

__all__ = [
    "Adam", "CENet", "CENetSegmenter", "ChannelCalibration", "ContextAttentionStage",
    "DifferentialAttention", "DualEnhancementBlock", "EdgeAmplifier", "GradReport",
    "ModelConfig", "MultiScaleAggregator", "ParamSet", "SGD", "SegSample",
    "SpatialCalibration", "SplitMix64", "Tensor", "WeightedNonLocalBlock",
    "dice_ce_loss", "dice_score", "finite_diff_check", "hd95", "init_params",
    "load_config", "make_optimizer", "no_grad", "param_count", "parse_config_text",
    "pixel_accuracy", "save_config", "split_channels", "synth_dataset", "train_loop",
]
