"""Central finite-difference audit of analytic gradients."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .params import ParamSet, SplitMix64
from .tensor import Tensor, no_grad


@dataclass
class GradReport:
    """Per-parameter comparison of analytic vs. numeric gradients.

    Entries whose absolute error is within `abs_floor` count as exact and do
    not contribute to `max_rel_err`, so near-zero derivatives cannot fail on
    relative error alone.
    """

    param_name: str
    max_rel_err: float
    max_abs_err: float
    num_checked: int
    passed: bool

    def row(self) -> str:
        flag = "pass" if self.passed else "FAIL"
        return (f"{self.param_name:<40s} rel={self.max_rel_err:10.3e} "
                f"abs={self.max_abs_err:10.3e} n={self.num_checked:<4d} {flag}")


def finite_diff_check(fn: Callable[[], Tensor], params: ParamSet, h: float = 1e-5,
                      tol_rel: float = 1e-4, abs_floor: float = 1e-8,
                      max_entries: int = 16, seed: int = 0) -> list[GradReport]:
    """Compare analytic gradients of the scalar `fn()` against (f(x+h)-f(x-h))/2h.

    Checks min(max_entries, size) entries per parameter, sampled by a seeded
    permutation, so the audit cost stays bounded for large tensors.
    """
    if not (1e-6 <= h <= 1e-3):
        raise ValueError(f"step size h={h} outside [1e-6, 1e-3]")
    params.zero_grad()
    out = fn()
    if out.size != 1:
        raise ValueError(f"finite_diff_check needs a scalar objective, got shape {out.shape}")
    out.backward()
    analytic = {name: (np.zeros_like(t.data) if t.grad is None else t.grad.copy())
                for name, t in params.items()}
    params.zero_grad()

    rng = SplitMix64(seed)
    reports = []
    with no_grad():
        for name, t in params.items():
            n = t.size
            if n <= max_entries:
                idxs = np.arange(n)
            else:
                keys = rng.uniform(n)
                idxs = np.argsort(keys, kind="stable")[:max_entries]
            ana_flat = analytic[name].reshape(-1)
            max_rel = 0.0
            max_abs = 0.0
            for i in idxs:
                orig = t.data.flat[i]
                t.data.flat[i] = orig + h
                f_plus = fn().item()
                t.data.flat[i] = orig - h
                f_minus = fn().item()
                t.data.flat[i] = orig
                numeric = (f_plus - f_minus) / (2.0 * h)
                abs_err = abs(ana_flat[i] - numeric)
                max_abs = max(max_abs, abs_err)
                if abs_err > abs_floor:
                    denom = max(abs(ana_flat[i]), abs(numeric))
                    max_rel = max(max_rel, abs_err / denom)
            passed = max_rel <= tol_rel or max_abs <= abs_floor
            reports.append(GradReport(name, max_rel, max_abs, len(idxs), passed))
    return reports


def all_passed(reports: list[GradReport]) -> bool:
    return all(r.passed for r in reports)
