from __future__ import annotations

import numpy as np

from ..patching import complex_to_planes, planes_to_complex
from .layers import ShapeError
from .net import DenoiserNet


def infer_batch(net: DenoiserNet, samples: np.ndarray, batch_size: int = 64) -> np.ndarray:
    """Denoise a (B, M, N) complex stack in one full-resolution pass per batch."""
    samples = np.asarray(samples)
    out = np.empty(samples.shape, dtype=complex)
    for s in range(0, len(samples), batch_size):
        planes = complex_to_planes(samples[s:s + batch_size])
        out[s:s + batch_size] = planes_to_complex(net.forward(planes, train=False).astype(np.float64))
    return out


def tile(samples: np.ndarray, p_y: int, p_x: int) -> np.ndarray:
    """(B, M, N) -> (B * tiles, p_y, p_x), tiles in row-major order per sample."""
    B, M, N = samples.shape
    if M % p_y or N % p_x:
        raise ShapeError(
            f"tile {p_y}x{p_x} does not divide {M}x{N}; pad to "
            f"{-(-M // p_y) * p_y}x{-(-N // p_x) * p_x}"
        )
    t = samples.reshape(B, M // p_y, p_y, N // p_x, p_x).transpose(0, 1, 3, 2, 4)
    return t.reshape(-1, p_y, p_x)


def untile(tiles: np.ndarray, M: int, N: int) -> np.ndarray:
    p_y, p_x = tiles.shape[1:]
    t = tiles.reshape(-1, M // p_y, N // p_x, p_y, p_x).transpose(0, 1, 3, 2, 4)
    return t.reshape(-1, M, N)


def infer(net: DenoiserNet, sample: np.ndarray, mode: str = "full", tile_shape: tuple[int, int] | None = None,
          batch_size: int = 64, tile_batch: int = 1) -> np.ndarray:
    """Denoise one (M, N) LS estimate or a (B, M, N) stack.

    ``mode="full"`` runs ``batch_size`` whole samples per forward pass.
    ``mode="tiled"`` cuts non-overlapping ``tile_shape`` tiles and predicts
    them ``tile_batch`` at a time (default one tile per pass, the per-patch
    deployment), then stitches them back in place.  A tile covering the whole
    sample is the full mode.
    """
    sample = np.asarray(sample)
    single = sample.ndim == 2
    stack = sample[None] if single else sample
    M, N = stack.shape[1:]
    if mode == "full":
        net.cfg.check_input(M, N)
        out = infer_batch(net, stack, batch_size)
    elif mode == "tiled":
        if tile_shape is None:
            raise ValueError("tiled mode needs tile_shape")
        p_y, p_x = tile_shape
        if tile_batch < 1:
            raise ValueError("tile_batch must be >= 1")
        if (p_y, p_x) == (M, N):
            return infer(net, sample, "full", batch_size=batch_size)
        net.cfg.check_input(p_y, p_x)
        tiles = tile(stack, p_y, p_x)
        out = untile(infer_batch(net, tiles, tile_batch), M, N)
    else:
        raise ValueError(f"unknown inference mode {mode!r}")
    return out[0] if single else out
