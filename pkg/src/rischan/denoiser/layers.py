"""NCHW layer primitives with explicit backward passes.

Each layer caches what its backward pass needs during ``forward`` and
accumulates parameter gradients into ``self.grads`` during ``backward``.
"""

from __future__ import annotations

import math

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class ShapeError(ValueError):
    pass


class Layer:
    params: dict
    grads: dict
    buffers: dict = {}

    def zero_grad(self):
        for k, v in self.grads.items():
            v[...] = 0


PADDING_MODES = ("zeros", "replicate")
INIT_MODES = ("glorot", "kaiming")


def pad_index(n: int, p: int) -> np.ndarray:
    """Source row for every padded row under edge replication."""
    return np.clip(np.arange(n + 2 * p) - p, 0, n - 1)


class Conv2d(Layer):
    """Same-padded cross-correlation with an odd square kernel.

    ``padding="replicate"`` extends the border by edge replication instead of
    zeros, so a border carries no artificial step.
    """

    def __init__(self, c_in: int, c_out: int, k: int, rng: np.random.Generator | None = None,
                 dtype=np.float32, zero: bool = False, bias: bool = True, padding: str = "zeros",
                 init: str = "glorot"):
        if k % 2 == 0:
            raise ShapeError(f"kernel size must be odd, got {k}")
        if padding not in PADDING_MODES:
            raise ValueError(f"padding must be one of {PADDING_MODES}")
        if init not in INIT_MODES:
            raise ValueError(f"init must be one of {INIT_MODES}")
        self.c_in, self.c_out, self.k = c_in, c_out, k
        self.padding = padding
        if zero or rng is None:
            w = np.zeros((c_out, c_in, k, k))
        else:
            # glorot keeps the variance of long linear chains near one;
            # kaiming (fan-in, ReLU gain) doubles it at every linear layer
            fan_in, fan_out = c_in * k * k, c_out * k * k
            bound = math.sqrt(6.0 / (fan_in + fan_out)) if init == "glorot" else math.sqrt(6.0 / fan_in)
            w = rng.uniform(-bound, bound, (c_out, c_in, k, k))
        self.params = {"weight": w.astype(dtype)}
        if bias:
            self.params["bias"] = np.zeros(c_out, dtype=dtype)
        self.grads = {n: np.zeros_like(p) for n, p in self.params.items()}
        self.buffers = {}

    def forward(self, x: np.ndarray, train: bool = True) -> np.ndarray:
        if x.ndim != 4 or x.shape[1] != self.c_in:
            raise ShapeError(f"conv expects {self.c_in} input channels, got shape {x.shape}")
        B, C, H, W = x.shape
        w = self.params["weight"]
        if self.k == 1:
            cols = x.transpose(0, 2, 3, 1).reshape(B * H * W, C)
        else:
            p = self.k // 2
            if self.padding == "zeros":
                xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
            else:
                xp = x[:, :, pad_index(H, p)][:, :, :, pad_index(W, p)]
            win = sliding_window_view(xp, (self.k, self.k), axis=(2, 3))  # B,C,H,W,k,k
            cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(B * H * W, C * self.k * self.k)
        self._cache = (x.shape, cols)
        out = cols @ w.reshape(self.c_out, -1).T
        if "bias" in self.params:
            out += self.params["bias"]
        return np.ascontiguousarray(out.reshape(B, H, W, self.c_out).transpose(0, 3, 1, 2))

    def backward(self, dy: np.ndarray) -> np.ndarray:
        shape, cols = self._cache
        B, C, H, W = shape
        w = self.params["weight"]
        dym = dy.transpose(0, 2, 3, 1).reshape(B * H * W, self.c_out)
        self.grads["weight"] += (dym.T @ cols).reshape(w.shape)
        if "bias" in self.grads:
            self.grads["bias"] += dym.sum(axis=0)
        dcols = dym @ w.reshape(self.c_out, -1)
        if self.k == 1:
            return np.ascontiguousarray(dcols.reshape(B, H, W, C).transpose(0, 3, 1, 2))
        k, p = self.k, self.k // 2
        dcols = dcols.reshape(B, H, W, C, k, k)
        dxp = np.zeros((B, C, H + 2 * p, W + 2 * p), dtype=dy.dtype)
        for i in range(k):
            for j in range(k):
                dxp[:, :, i:i + H, j:j + W] += dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
        if self.padding == "zeros":
            return dxp[:, :, p:p + H, p:p + W]
        dx_rows = np.zeros((B, C, H, W + 2 * p), dtype=dy.dtype)
        np.add.at(dx_rows, (slice(None), slice(None), pad_index(H, p)), dxp)
        dx = np.zeros((B, C, H, W), dtype=dy.dtype)
        np.add.at(dx, (slice(None), slice(None), slice(None), pad_index(W, p)), dx_rows)
        return dx


class ReLU(Layer):
    def __init__(self):
        self.params, self.grads, self.buffers = {}, {}, {}

    def forward(self, x, train=True):
        self._mask = x > 0
        return x * self._mask

    def backward(self, dy):
        return dy * self._mask


class BatchNorm2d(Layer):
    def __init__(self, c: int, eps: float = 1e-5, momentum: float = 0.1, dtype=np.float32):
        self.eps, self.momentum = eps, momentum
        self.params = {"gamma": np.ones(c, dtype=dtype), "beta": np.zeros(c, dtype=dtype)}
        self.grads = {n: np.zeros_like(p) for n, p in self.params.items()}
        self.buffers = {"running_mean": np.zeros(c, dtype=dtype), "running_var": np.ones(c, dtype=dtype)}

    def forward(self, x, train=True):
        g = self.params["gamma"][None, :, None, None]
        b = self.params["beta"][None, :, None, None]
        if not train:
            mean = self.buffers["running_mean"][None, :, None, None]
            var = self.buffers["running_var"][None, :, None, None]
            inv = 1.0 / np.sqrt(var + self.eps)
            xhat = (x - mean) * inv
            self._cache = (xhat, inv, False)
            return xhat * g + b
        mean = x.mean(axis=(0, 2, 3), keepdims=True)
        var = x.var(axis=(0, 2, 3), keepdims=True)
        inv = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - mean) * inv
        self._cache = (xhat, inv, True)
        n = x.shape[0] * x.shape[2] * x.shape[3]
        unbiased = var.ravel() * (n / max(n - 1, 1))
        m = self.momentum
        self.buffers["running_mean"] = ((1 - m) * self.buffers["running_mean"] + m * mean.ravel()).astype(x.dtype)
        self.buffers["running_var"] = ((1 - m) * self.buffers["running_var"] + m * unbiased).astype(x.dtype)
        return xhat * g + b

    def backward(self, dy):
        xhat, inv, batch_stats = self._cache
        self.grads["gamma"] += (dy * xhat).sum(axis=(0, 2, 3))
        self.grads["beta"] += dy.sum(axis=(0, 2, 3))
        g = self.params["gamma"][None, :, None, None]
        dxhat = dy * g
        if not batch_stats:
            return dxhat * inv
        return inv * (dxhat - dxhat.mean(axis=(0, 2, 3), keepdims=True)
                      - xhat * (dxhat * xhat).mean(axis=(0, 2, 3), keepdims=True))


class MaxPool2(Layer):
    def __init__(self):
        self.params, self.grads, self.buffers = {}, {}, {}

    def forward(self, x, train=True):
        B, C, H, W = x.shape
        if H % 2 or W % 2:
            raise ShapeError(f"max-pool needs even spatial dims, got {H}x{W}")
        blocks = x.reshape(B, C, H // 2, 2, W // 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(B, C, H // 2, W // 2, 4)
        idx = blocks.argmax(axis=-1)
        self._cache = (x.shape, idx)
        return np.take_along_axis(blocks, idx[..., None], axis=-1)[..., 0]

    def backward(self, dy):
        (B, C, H, W), idx = self._cache
        blocks = np.zeros((B, C, H // 2, W // 2, 4), dtype=dy.dtype)
        np.put_along_axis(blocks, idx[..., None], dy[..., None], axis=-1)
        return blocks.reshape(B, C, H // 2, W // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(B, C, H, W)


def bilinear_matrix(n_in: int, factor: int) -> np.ndarray:
    """Interpolation operator (n_in*factor, n_in), half-pixel centres, edge clamped."""
    n_out = n_in * factor
    src = (np.arange(n_out) + 0.5) / factor - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    i0 = np.floor(src).astype(int)
    i1 = np.minimum(i0 + 1, n_in - 1)
    w = src - i0
    U = np.zeros((n_out, n_in))
    U[np.arange(n_out), i0] += 1 - w
    U[np.arange(n_out), i1] += w
    return U


class BilinearUp(Layer):
    def __init__(self, factor: int):
        self.factor = factor
        self.params, self.grads, self.buffers = {}, {}, {}

    def forward(self, x, train=True):
        H, W = x.shape[2:]
        uh = bilinear_matrix(H, self.factor).astype(x.dtype)
        uw = bilinear_matrix(W, self.factor).astype(x.dtype)
        self._cache = (uh, uw)
        return np.matmul(np.matmul(uh, x), uw.T)

    def backward(self, dy):
        uh, uw = self._cache
        return np.matmul(np.matmul(uh.T, dy), uw)


def concat(xs: list[np.ndarray]) -> np.ndarray:
    shapes = {(x.shape[0],) + x.shape[2:] for x in xs}
    if len(shapes) != 1:
        raise ShapeError(f"cannot concatenate shapes {[x.shape for x in xs]}")
    return np.concatenate(xs, axis=1)


def split_channels(dy: np.ndarray, widths: list[int]) -> list[np.ndarray]:
    return np.split(dy, np.cumsum(widths)[:-1], axis=1)


def maxpool2(x):
    return MaxPool2().forward(x)


def bilinear_up(x, factor: int):
    return BilinearUp(factor).forward(x)


def relu(x):
    return np.maximum(x, 0)
