"""Named parameter storage, deterministic initialization, and the PRNG.

The generator is splitmix64: the 64-bit state advances by the golden-gamma
constant 0x9E3779B97F4A7C15 per draw and each output is

    z = state; z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EB; return z ^ (z >> 31)

all modulo 2**64. Uniform doubles take the top 53 bits: (z >> 11) * 2**-53.
Identical seeds therefore reproduce identical parameter bytes on any platform.
"""

from __future__ import annotations

import math

import numpy as np

from .tensor import Tensor

_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_U53 = 2.0 ** -53


class SplitMix64:
    """Counter-based splitmix64 stream; vectorized draws share one sequence."""

    _MASK = 0xFFFFFFFFFFFFFFFF

    def __init__(self, seed: int):
        self._state = seed & self._MASK

    def _raw(self, count: int) -> np.ndarray:
        start = self._state
        self._state = (start + count * int(_GAMMA)) & self._MASK
        # array arithmetic wraps mod 2**64 without the scalar overflow warning
        steps = np.arange(1, count + 1, dtype=np.uint64) * _GAMMA
        z = np.uint64(start) + steps
        z = (z ^ (z >> np.uint64(30))) * _MIX1
        z = (z ^ (z >> np.uint64(27))) * _MIX2
        return z ^ (z >> np.uint64(31))

    def next_u64(self) -> int:
        return int(self._raw(1)[0])

    def uniform(self, count: int, low: float = 0.0, high: float = 1.0) -> np.ndarray:
        """`count` doubles uniform in [low, high)."""
        u = (self._raw(count) >> np.uint64(11)).astype(np.float64) * _U53
        return low + u * (high - low)


class ParamSet:
    """Ordered name -> Tensor map; iteration follows insertion order."""

    def __init__(self):
        self._tensors: dict[str, Tensor] = {}

    def add(self, name: str, values: np.ndarray) -> Tensor:
        if name in self._tensors:
            raise ValueError(f"duplicate parameter name {name!r}")
        t = Tensor(np.array(values, dtype=np.float64), requires_grad=True)
        self._tensors[name] = t
        return t

    def __contains__(self, name: str) -> bool:
        return name in self._tensors

    def __getitem__(self, name: str) -> Tensor:
        return self._tensors[name]

    def __len__(self) -> int:
        return len(self._tensors)

    def names(self) -> list[str]:
        return list(self._tensors)

    def items(self):
        return self._tensors.items()

    def tensors(self):
        return self._tensors.values()

    def count_elements(self) -> int:
        return sum(t.size for t in self._tensors.values())

    def subset(self, names) -> "ParamSet":
        """A view sharing the underlying tensors, restricted to `names`."""
        out = ParamSet()
        for name in names:
            out._tensors[name] = self._tensors[name]
        return out

    def zero_grad(self) -> None:
        for t in self._tensors.values():
            t.grad = None

    def ensure_grads(self) -> None:
        """Materialize zero gradients for parameters the last backward never
        touched (e.g. blocks disabled by an ablation toggle)."""
        for t in self._tensors.values():
            if t.grad is None:
                t.grad = np.zeros_like(t.data)

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {name: t.data.copy() for name, t in self._tensors.items()}

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        """Copy values in by name; the name sets must match exactly."""
        missing = [n for n in self._tensors if n not in state]
        extra = [n for n in state if n not in self._tensors]
        if missing or extra:
            raise ValueError(
                f"parameter name mismatch: missing {missing[:3]}, unexpected {extra[:3]}")
        for name, t in self._tensors.items():
            values = np.asarray(state[name], dtype=np.float64)
            if values.shape != t.data.shape:
                raise ValueError(
                    f"shape mismatch for {name!r}: have {t.data.shape}, loading {values.shape}")
            t.data[...] = values


def glorot_uniform(rng: SplitMix64, shape: tuple, fan_in: int, fan_out: int) -> np.ndarray:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(int(np.prod(shape)), -limit, limit).reshape(shape)


def conv_weight(rng: SplitMix64, c_out: int, c_in_per_group: int, k: int) -> np.ndarray:
    # fan counts use the receptive field: fan_in = Cin/groups * k*k, fan_out = Cout * k*k
    return glorot_uniform(rng, (c_out, c_in_per_group, k, k),
                          c_in_per_group * k * k, c_out * k * k)


def linear_weight(rng: SplitMix64, out_dim: int, in_dim: int) -> np.ndarray:
    return glorot_uniform(rng, (out_dim, in_dim), in_dim, out_dim)
