"""scikit-learn style wrapper so the network composes with the wider
ecosystem: fit/predict/score plus get_params/set_params via BaseEstimator."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .config import ModelConfig
from .metrics import dice_score
from .model import CENet
from .train import SegSample, fit_samples, make_optimizer


def check_image_batch(X) -> np.ndarray:
    """Validate and canonicalize images to [n, C, H, W] float64 in finite range.

    Accepts [n, H, W] (single channel) or [n, C, H, W]; extents must be
    divisible by 32 so the encoder pyramid closes.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 3:
        X = X[:, None, :, :]
    if X.ndim != 4:
        raise ValueError(f"images must be [n,H,W] or [n,C,H,W], got shape {X.shape}")
    if X.shape[0] == 0:
        raise ValueError("need at least one image")
    h, w = X.shape[2], X.shape[3]
    if h % 32 != 0 or w % 32 != 0:
        raise ValueError(f"image extents must be divisible by 32, got {h}x{w}")
    if not np.isfinite(X).all():
        raise ValueError("images contain non-finite values")
    return X


def check_mask_batch(y, n: int, hw: tuple[int, int]) -> np.ndarray:
    """Validate integer masks to [n, H, W] matching the image batch."""
    y = np.asarray(y)
    if y.ndim == 2 and n == 1:
        y = y[None]
    if y.shape != (n, *hw):
        raise ValueError(f"masks must have shape {(n, *hw)}, got {y.shape}")
    if not np.issubdtype(y.dtype, np.integer):
        rounded = np.rint(y)
        if not np.array_equal(rounded, y):
            raise ValueError("masks must be integer class maps")
        y = rounded
    y = y.astype(np.int64)
    if y.min() < 0:
        raise ValueError(f"mask labels must be non-negative, got min {y.min()}")
    return y


class CENetSegmenter(BaseEstimator):
    """Trainable segmentation estimator with the sklearn fit/predict contract.

    Parameters mirror the architecture toggles plus the training budget. The
    class count is inferred from the labels seen in fit. Deterministic for a
    fixed seed: refitting with identical inputs reproduces identical
    parameters and predictions.
    """

    def __init__(self, stage_channels=(16, 32, 64, 128), heads=2, dilations=(3, 5, 8),
                 enable_fea=True, enable_diffatt=True, enable_wnlb=True, enable_ccu=True,
                 dseb_sequential=False, steps=200, lr=3e-3, optimizer="adam", seed=0):
        self.stage_channels = stage_channels
        self.heads = heads
        self.dilations = dilations
        self.enable_fea = enable_fea
        self.enable_diffatt = enable_diffatt
        self.enable_wnlb = enable_wnlb
        self.enable_ccu = enable_ccu
        self.dseb_sequential = dseb_sequential
        self.steps = steps
        self.lr = lr
        self.optimizer = optimizer
        self.seed = seed

    def _config(self, X: np.ndarray, num_classes: int) -> ModelConfig:
        return ModelConfig(
            input_hw=(X.shape[2], X.shape[3]),
            in_channels=X.shape[1],
            num_classes=num_classes,
            stage_channels=tuple(self.stage_channels),
            enable_fea=self.enable_fea,
            enable_diffatt=self.enable_diffatt,
            enable_wnlb=self.enable_wnlb,
            enable_ccu=self.enable_ccu,
            dilations=tuple(self.dilations),
            heads=self.heads,
            seed=self.seed,
            dseb_sequential=self.dseb_sequential,
        ).validate()

    def fit(self, X, y):
        X = check_image_batch(X)
        y = check_mask_batch(y, X.shape[0], (X.shape[2], X.shape[3]))
        num_classes = max(2, int(y.max()) + 1)
        cfg = self._config(X, num_classes)
        model = CENet(cfg)
        samples = [SegSample(X[i: i + 1], y[i]) for i in range(X.shape[0])]
        opt = make_optimizer(self.optimizer, model.params, self.lr)
        self.loss_trace_ = fit_samples(model, samples, self.steps, opt)
        self.model_ = model
        self.config_ = cfg
        self.n_classes_ = num_classes
        return self

    def _require_fitted(self) -> CENet:
        if not hasattr(self, "model_"):
            raise NotFittedError("this CENetSegmenter is not fitted; call fit first")
        return self.model_

    def predict_proba(self, X) -> np.ndarray:
        """Per-class probabilities [n, K, H, W]."""
        model = self._require_fitted()
        X = check_image_batch(X)
        if X.shape[1] != self.config_.in_channels:
            raise ValueError(
                f"expected {self.config_.in_channels} channels, got {X.shape[1]}")
        out = []
        for i in range(X.shape[0]):
            logits = model.predict_logits(X[i: i + 1])
            shifted = logits - logits.max(axis=1, keepdims=True)
            e = np.exp(shifted)
            out.append(e / e.sum(axis=1, keepdims=True))
        return np.concatenate(out, axis=0)

    def predict(self, X) -> np.ndarray:
        """Label masks [n, H, W]."""
        return np.argmax(self.predict_proba(X), axis=1)

    def score(self, X, y) -> float:
        """Mean Dice over foreground classes and samples."""
        pred = self.predict(X)
        y = check_mask_batch(np.asarray(y), pred.shape[0], pred.shape[1:])
        scores = [dice_score(pred[i], y[i], cls)
                  for i in range(pred.shape[0])
                  for cls in range(1, self.n_classes_)]
        return float(np.mean(scores))
