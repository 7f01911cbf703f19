"""Keyed random streams: every (seed, key...) tuple maps to its own generator."""

from __future__ import annotations

import zlib

import numpy as np


def _key_word(k) -> int:
    if isinstance(k, str):
        return zlib.crc32(k.encode())
    if isinstance(k, float):
        # SNR values and the like; stable across runs
        return zlib.crc32(repr(k).encode())
    return int(k) & 0xFFFFFFFFFFFFFFFF


def stream(seed: int, *keys) -> np.random.Generator:
    """Independent generator for ``keys`` under ``seed``; order of creation is irrelevant."""
    words = [int(seed) & 0xFFFFFFFFFFFFFFFF] + [_key_word(k) for k in keys]
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(words)))


def complex_normal(rng: np.random.Generator, shape, var: float = 1.0) -> np.ndarray:
    """CN(0, var) samples: independent N(0, var/2) real and imaginary parts."""
    scale = np.sqrt(var / 2)
    re = rng.standard_normal(shape)
    im = rng.standard_normal(shape)
    return scale * (re + 1j * im)
