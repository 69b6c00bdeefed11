"""Desk-scale supervised training: Dice + cross-entropy loss, SGD/Adam,
a synthetic shape dataset, and the training loop."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .config import ModelConfig
from .model import CENet
from .params import ParamSet, SplitMix64


@dataclass
class SegSample:
    image: np.ndarray   # [1, Cin, H, W] floats in [0, 1]
    mask: np.ndarray    # [H, W] int64 class indices


class TrainingDiverged(RuntimeError):
    pass


def one_hot(mask: np.ndarray, num_classes: int) -> np.ndarray:
    """[N,H,W] integer mask -> [N,K,H,W] one-hot floats."""
    n, h, w = mask.shape
    out = np.zeros((n, num_classes, h, w), dtype=np.float64)
    np.put_along_axis(out, mask[:, None, :, :], 1.0, axis=1)
    return out


def _class_probs(logits: T.Tensor) -> tuple[T.Tensor, T.Tensor]:
    # softmax and log-softmax over the class axis, sharing the shift constant
    moved = T.moveaxis(logits, 1, 3)                       # [N,H,W,K]
    shift = T.Tensor(moved.data.max(axis=-1, keepdims=True))
    shifted = T.sub(moved, shift)
    e = T.exp(shifted)
    total = T.tsum(e, axis=-1, keepdims=True)
    probs = T.moveaxis(T.div(e, total), 3, 1)
    logp = T.moveaxis(T.sub(shifted, T.log(total)), 3, 1)
    return probs, logp


def dice_ce_loss(logits: T.Tensor, mask: np.ndarray) -> T.Tensor:
    """0.5 * soft-Dice loss + 0.5 * mean pixel cross-entropy.

    Soft Dice per class uses additive smoothing of 1 in numerator and
    denominator; `mask` is an integer map [H,W] or [N,H,W].
    """
    mask = np.asarray(mask)
    if mask.ndim == 2:
        mask = mask[None]
    n, k, h, w = logits.shape
    if mask.shape != (n, h, w):
        raise ValueError(f"mask shape {mask.shape} does not match logits {logits.shape}")
    if mask.min() < 0 or mask.max() >= k:
        raise ValueError(f"mask values must lie in [0, {k}), got [{mask.min()}, {mask.max()}]")
    target = one_hot(mask.astype(np.int64), k)
    probs, logp = _class_probs(logits)

    dice_sum = None
    for cls in range(k):
        p = T.narrow(probs, 1, cls, 1)
        g = target[:, cls: cls + 1]
        inter = T.tsum(T.mul(p, g))
        denom = T.add(T.tsum(p), float(g.sum()))
        term = T.div(T.add(T.mul(inter, 2.0), 1.0), T.add(denom, 1.0))
        dice_sum = term if dice_sum is None else T.add(dice_sum, term)
    dice_loss = T.sub(1.0, T.mul(dice_sum, 1.0 / k))

    ce = T.mul(T.tsum(T.mul(logp, target)), -1.0 / (n * h * w))
    return T.add(T.mul(dice_loss, 0.5), T.mul(ce, 0.5))


class SGD:
    """SGD with classical momentum: v = mu*v + (g + wd*p); p -= lr*v."""

    kind = "sgd"

    def __init__(self, params: ParamSet, lr: float, momentum: float = 0.9,
                 weight_decay: float = 0.0):
        self.params = params
        self.lr = lr
        self.momentum = momentum
        self.weight_decay = weight_decay
        self._velocity = {name: np.zeros_like(t.data) for name, t in params.items()}
        self.step_count = 0

    def step(self) -> None:
        self.step_count += 1
        for name, t in self.params.items():
            if t.grad is None:
                raise ValueError(f"parameter {name!r} has no gradient; run backward first")
            g = t.grad
            if self.weight_decay:
                g = g + self.weight_decay * t.data
            v = self._velocity[name]
            v *= self.momentum
            v += g
            t.data -= self.lr * v
        self.params.zero_grad()


class Adam:
    """Bias-corrected Adam."""

    kind = "adam"

    def __init__(self, params: ParamSet, lr: float, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8, weight_decay: float = 0.0):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.weight_decay = weight_decay
        self._m = {name: np.zeros_like(t.data) for name, t in params.items()}
        self._v = {name: np.zeros_like(t.data) for name, t in params.items()}
        self.step_count = 0

    def step(self) -> None:
        self.step_count += 1
        b1t = 1.0 - self.beta1 ** self.step_count
        b2t = 1.0 - self.beta2 ** self.step_count
        for name, t in self.params.items():
            if t.grad is None:
                raise ValueError(f"parameter {name!r} has no gradient; run backward first")
            g = t.grad
            if self.weight_decay:
                g = g + self.weight_decay * t.data
            m = self._m[name]
            v = self._v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            t.data -= self.lr * (m / b1t) / (np.sqrt(v / b2t) + self.eps)
        self.params.zero_grad()


def make_optimizer(kind: str, params: ParamSet, lr: float, **kwargs):
    if kind == "sgd":
        return SGD(params, lr, **kwargs)
    if kind == "adam":
        return Adam(params, lr, **kwargs)
    raise ValueError(f"unknown optimizer {kind!r}; expected 'sgd' or 'adam'")


def synth_dataset(n: int, hw: tuple[int, int], num_classes: int, seed: int) -> list[SegSample]:
    """Random bright shapes (ellipse or box, one per foreground class) on a dark
    noisy background. Every mask contains foreground and background pixels.
    """
    if num_classes not in (2, 3):
        raise ValueError(f"synthetic data supports 2 or 3 classes, got {num_classes}")
    h, w = hw
    rng = SplitMix64(seed)
    ys = np.arange(h, dtype=np.float64)[:, None]
    xs = np.arange(w, dtype=np.float64)[None, :]
    samples = []
    for _ in range(n):
        image = 0.08 + 0.10 * rng.uniform(h * w).reshape(h, w)
        mask = np.zeros((h, w), dtype=np.int64)
        for cls in range(1, num_classes):
            draws = rng.uniform(6)
            # centers and half-extents keep row/column 0 background and the
            # shape interior non-empty for any draw
            cy = (0.38 + 0.24 * draws[0]) * h
            cx = (0.38 + 0.24 * draws[1]) * w
            ry = (0.24 + 0.12 * draws[2]) * h
            rx = (0.24 + 0.12 * draws[3]) * w
            if draws[4] < 0.5:
                inside = ((ys - cy) / ry) ** 2 + ((xs - cx) / rx) ** 2 <= 1.0
            else:
                inside = (np.abs(ys - cy) <= ry) & (np.abs(xs - cx) <= rx)
            level = 0.85 if num_classes == 2 else (0.55 if cls == 1 else 0.90)
            texture = draws[5] * 0.06
            mask[inside] = cls
            image[inside] = level + texture * (rng.uniform(h * w).reshape(h, w)[inside] - 0.5)
        samples.append(SegSample(np.clip(image, 0.0, 1.0)[None, None], mask))
    return samples


def fit_samples(model: CENet, samples: list[SegSample], steps: int, optimizer) -> list[float]:
    """Cycle through `samples` for `steps` optimizer updates; returns the loss trace."""
    if steps < 1:
        raise ValueError(f"steps must be >= 1, got {steps}")
    losses = []
    for step in range(steps):
        sample = samples[step % len(samples)]
        logits = model.forward(T.Tensor(sample.image))
        loss = dice_ce_loss(logits, sample.mask)
        value = loss.item()
        if not np.isfinite(value):
            raise TrainingDiverged(f"loss became {value} at step {step}")
        model.params.zero_grad()
        loss.backward()
        model.params.ensure_grads()   # toggled-off blocks have exactly-zero grads
        optimizer.step()
        losses.append(value)
    return losses


def train_loop(cfg: ModelConfig, steps: int, lr: float = 3e-3, opt: str = "adam",
               train_size: int = 24, data_seed: int | None = None) -> tuple[CENet, list[float]]:
    """Train a fresh model on synthetic data; deterministic given cfg.seed.

    The dataset seed defaults to cfg.seed + 1000003 so model init and data
    derive from one configuration value.
    """
    cfg.validate()
    if data_seed is None:
        data_seed = cfg.seed + 1000003
    model = CENet(cfg)
    samples = synth_dataset(train_size, cfg.input_hw, cfg.num_classes, data_seed)
    optimizer = make_optimizer(opt, model.params, lr)
    losses = fit_samples(model, samples, steps, optimizer)
    return model, losses
