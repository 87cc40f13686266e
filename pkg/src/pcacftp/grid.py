"""Counter-based keyed uniform variates.

Every variate is a pure function of ``(seed, stream, level, x, t, replica)``:
there is no generator state, so the same space-time cell always receives the
same uniform no matter in which order (or on which worker) it is evaluated.
The mixing function is the SplitMix64 finalizer applied to a fold of the key
components.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_MASK64 = (1 << 64) - 1
_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)
_INV53 = 1.0 / float(1 << 53)

# Salts keep the components in separate key spaces.
_SALT_STREAM = np.uint64(0x243F6A8885A308D3)
_SALT_LEVEL = np.uint64(0x13198A2E03707344)
_SALT_REPLICA = np.uint64(0xA4093822299F31D0)
_SALT_X = np.uint64(0x082EFA98EC4E6C89)
_SALT_T = np.uint64(0x452821E638D01377)

# Named streams used across the package.
STREAM_BASIC = 0
STREAM_STRUCTURED = 1
STREAM_INTERIOR = 2
STREAM_FORWARD = 3
STREAM_TV = 4
STREAM_COLOR = 5


def _mix(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> _S30)) * _M1
    z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


def _as_u64(a) -> np.ndarray:
    arr = np.asarray(a)
    if arr.dtype == np.uint64:
        return arr
    # negative coordinates wrap two's-complement, which is injective on int64
    return arr.astype(np.int64).astype(np.uint64)


def _fold(h: np.ndarray, component, salt: np.uint64) -> np.ndarray:
    return _mix(h ^ _mix(_as_u64(component) + salt))


@dataclass(frozen=True)
class RandomGrid:
    """Keyed source of i.i.d. uniforms on [0, 1)."""

    seed: int

    def __post_init__(self):
        if not 0 <= int(self.seed) <= _MASK64:
            raise ValueError(f"seed must fit in 64 bits, got {self.seed}")

    def _root(self) -> np.ndarray:
        return _mix(np.asarray(int(self.seed) & _MASK64, dtype=np.uint64) + _GOLDEN)

    def bits(self, level, x, t, replica=0, stream: int = STREAM_BASIC) -> np.ndarray:
        """Raw 64-bit hash for each broadcast key."""
        with np.errstate(over="ignore"):
            h = _fold(self._root(), stream, _SALT_STREAM)
            h = _fold(h, level, _SALT_LEVEL)
            h = _fold(h, replica, _SALT_REPLICA)
            cell = _fold(_mix(_as_u64(x) + _SALT_X), t, _SALT_T)
            return _mix(_mix(h ^ cell) + _GOLDEN)

    def uniform(self, level, x, t, replica=0, stream: int = STREAM_BASIC) -> np.ndarray:
        """Uniform variates in [0, 1) with 53-bit resolution, broadcast over keys."""
        b = self.bits(level, x, t, replica, stream)
        return (b >> _S11).astype(np.float64) * _INV53

    def child_seed(self, *labels: int) -> int:
        """Deterministic derived seed, e.g. one per repetition of an experiment."""
        with np.errstate(over="ignore"):
            h = self._root()
            for i, lab in enumerate(labels):
                h = _fold(h, lab, np.uint64((i + 1) * 0x9E3779B97F4A7C15 & _MASK64))
        return int(h)
