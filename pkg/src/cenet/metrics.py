"""Segmentation metrics: Dice overlap, 95th-percentile Hausdorff distance,
and pixel accuracy, all on integer label maps."""

from __future__ import annotations

import numpy as np


def _check_pair(pred: np.ndarray, gt: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    if pred.shape != gt.shape:
        raise ValueError(f"mask shapes differ: {pred.shape} vs {gt.shape}")
    return pred, gt


def dice_score(pred: np.ndarray, gt: np.ndarray, cls: int) -> float:
    """2|P∩G| / (|P|+|G|) for class `cls`; 1.0 when both sets are empty."""
    pred, gt = _check_pair(pred, gt)
    p = pred == cls
    g = gt == cls
    total = int(p.sum()) + int(g.sum())
    if total == 0:
        return 1.0
    return 2.0 * int(np.logical_and(p, g).sum()) / total


def pixel_accuracy(pred: np.ndarray, gt: np.ndarray) -> float:
    pred, gt = _check_pair(pred, gt)
    return float(np.mean(pred == gt))


def _percentile_linear(sorted_vals: np.ndarray, q: float) -> float:
    """Percentile with linear interpolation between order statistics."""
    n = len(sorted_vals)
    if n == 1:
        return float(sorted_vals[0])
    rank = (q / 100.0) * (n - 1)
    lo = int(np.floor(rank))
    if lo + 1 >= n:
        return float(sorted_vals[-1])
    frac = rank - lo
    return float(sorted_vals[lo] + frac * (sorted_vals[lo + 1] - sorted_vals[lo]))


def _directed_min_sqdist(src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    # exact brute force over full point sets; chunked to bound memory
    out = np.empty(len(src), dtype=np.float64)
    for start in range(0, len(src), 512):
        block = src[start: start + 512]
        d = block[:, None, :] - dst[None, :, :]
        out[start: start + 512] = (d * d).sum(axis=2).min(axis=1)
    return out


def hd95(pred: np.ndarray, gt: np.ndarray, cls: int) -> float | None:
    """95th percentile of symmetric nearest-neighbor distances in pixels.

    Uses the full point sets of class `cls` (not extracted boundaries), exact
    brute force. Returns None when either set is empty: the distance is
    undefined, never a number.
    """
    pred, gt = _check_pair(pred, gt)
    p_pts = np.argwhere(pred == cls).astype(np.float64)
    g_pts = np.argwhere(gt == cls).astype(np.float64)
    if len(p_pts) == 0 or len(g_pts) == 0:
        return None
    forward = _directed_min_sqdist(p_pts, g_pts)
    backward = _directed_min_sqdist(g_pts, p_pts)
    dists = np.sort(np.sqrt(np.concatenate([forward, backward])), kind="stable")
    return _percentile_linear(dists, 95.0)
