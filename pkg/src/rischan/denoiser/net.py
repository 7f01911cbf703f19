"""UNet3+ style denoiser with subtraction blocks in the encoder."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..rng import stream
from .layers import INIT_MODES, PADDING_MODES, BatchNorm2d, BilinearUp, Conv2d, MaxPool2, ReLU, ShapeError, concat, split_channels


@dataclass(frozen=True)
class NetConfig:
    levels: int = 2
    base_filters: int = 8
    convs_per_block: int = 2
    kernel: int = 3
    use_batchnorm: bool = True
    padding: str = "replicate"
    init: str = "glorot"
    identity_init: bool = True
    in_channels: int = 2
    out_channels: int = 2
    seed: int = 0

    def __post_init__(self):
        if self.levels < 2:
            raise ValueError("need at least 2 levels")
        if self.convs_per_block < 1 or self.kernel % 2 == 0:
            raise ValueError("convs_per_block >= 1 and an odd kernel are required")
        if self.padding not in PADDING_MODES or self.init not in INIT_MODES:
            raise ValueError(f"padding must be one of {PADDING_MODES} and init one of {INIT_MODES}")

    def width(self, level: int) -> int:
        return self.base_filters * 2 ** level

    @property
    def multiple(self) -> int:
        return 2 ** (self.levels - 1)

    def check_input(self, h: int, w: int):
        m = self.multiple
        if h % m or w % m:
            ph, pw = (-h) % m, (-w) % m
            raise ShapeError(
                f"input {h}x{w} not divisible by {m}; pad by {ph} rows and {pw} columns"
            )


class DenoiseBlock:
    """aligned = 1x1(I); r = convs(aligned); returns aligned - r."""

    def __init__(self, c_in: int, c_out: int, cfg: NetConfig, rng, dtype):
        self.align = Conv2d(c_in, c_out, 1, rng, dtype, init=cfg.init)
        self.body = []
        for t in range(cfg.convs_per_block):
            last = t == cfg.convs_per_block - 1
            # a bias directly before batch-norm is cancelled by the mean subtraction
            has_bn = cfg.use_batchnorm and not last
            self.body.append(Conv2d(c_out, c_out, cfg.kernel, rng, dtype, zero=last, bias=not has_bn,
                                   padding=cfg.padding, init=cfg.init))
            if not last:
                if cfg.use_batchnorm:
                    self.body.append(BatchNorm2d(c_out, dtype=dtype))
                self.body.append(ReLU())

    def layers(self):
        return [self.align, *self.body]

    def forward(self, x, train=True):
        a = self.align.forward(x, train)
        r = a
        for layer in self.body:
            r = layer.forward(r, train)
        return a - r

    def backward(self, dz):
        dr = -dz
        for layer in reversed(self.body):
            dr = layer.backward(dr)
        return self.align.backward(dz + dr)


class FusionStage:
    """concat(full-scale skips) -> conv -> relu -> conv."""

    def __init__(self, c_in: int, c_out: int, cfg: NetConfig, rng, dtype):
        self.conv1 = Conv2d(c_in, c_out, cfg.kernel, rng, dtype, padding=cfg.padding, init=cfg.init)
        self.act = ReLU()
        self.conv2 = Conv2d(c_out, c_out, cfg.kernel, rng, dtype, padding=cfg.padding, init=cfg.init)

    def layers(self):
        return [self.conv1, self.conv2]

    def forward(self, x, train=True):
        return self.conv2.forward(self.act.forward(self.conv1.forward(x, train)), train)

    def backward(self, dy):
        return self.conv1.backward(self.act.backward(self.conv2.backward(dy)))


class DenoiserNet:
    """Encoder of denoise blocks, a bottleneck block, full-scale-skip decoder, 1x1 head.

    Encoder level l has width base*2^l at resolution /2^l.  The bottleneck
    sits at the deepest level and plays the role of decoder level L-1.
    Decoder level l concatenates its own encoder output, max-pooled shallower
    encoder outputs and bilinearly upsampled deeper decoder outputs.
    """

    def __init__(self, cfg: NetConfig, dtype=np.float32):
        self.cfg = cfg
        self.dtype = dtype
        rng = stream(cfg.seed, "init")
        L = cfg.levels
        self.encoder = []
        c_prev = cfg.in_channels
        for l in range(L):
            self.encoder.append(DenoiseBlock(c_prev, cfg.width(l), cfg, rng, dtype))
            c_prev = cfg.width(l)
        self.bottleneck = DenoiseBlock(c_prev, cfg.width(L - 1), cfg, rng, dtype)
        concat_width = sum(cfg.width(j) for j in range(L))
        self.decoder = {l: FusionStage(concat_width, cfg.width(l), cfg, rng, dtype) for l in range(L - 2, -1, -1)}
        self.head = Conv2d(cfg.width(0), cfg.out_channels, 1, rng, dtype, init=cfg.init)
        if cfg.identity_init:
            self._carve_identity_path()

    def _carve_identity_path(self):
        """Wire a few channels so the untrained net returns its input exactly.

        The level-0 align copies the input planes, the level-0 fusion stage
        carries them through its ReLU as a (+x, -x) pair and recombines them,
        and the head reads them back out.  Every other weight keeps its random
        draw.  Needs 2*in_channels <= base_filters and out_channels ==
        in_channels; otherwise nothing is changed.
        """
        cfg = self.cfg
        c, w0 = cfg.in_channels, cfg.base_filters
        if 2 * c > w0 or cfg.out_channels != c:
            return
        k = cfg.kernel // 2
        eye = np.eye(c)
        align = self.encoder[0].align.params
        align["weight"][:c] = 0
        align["weight"][:c, :, 0, 0] = eye
        align["bias"][:c] = 0
        # the level-0 encoder output sits first in the level-0 concatenation
        stage = self.decoder[0]
        w1, w2 = stage.conv1.params["weight"], stage.conv2.params["weight"]
        w1[:2 * c] = 0
        w1[:c, :c, k, k] = eye
        w1[c:2 * c, :c, k, k] = -eye
        stage.conv1.params["bias"][:2 * c] = 0
        w2[:c] = 0
        w2[:c, :c, k, k] = eye
        w2[:c, c:2 * c, k, k] = -eye
        stage.conv2.params["bias"][:c] = 0
        hw = self.head.params["weight"]
        hw[:] = 0
        hw[:, :c, 0, 0] = eye
        self.head.params["bias"][:] = 0

    # ------------------------------------------------------------ parameters

    def layers(self):
        out = []
        for blk in self.encoder:
            out += blk.layers()
        out += self.bottleneck.layers()
        for l in sorted(self.decoder, reverse=True):
            out += self.decoder[l].layers()
        out.append(self.head)
        return out

    def named_tensors(self, include_buffers: bool = True):
        """(name, array) in declaration order: params, then buffers per layer."""
        items = []
        for i, layer in enumerate(self.layers()):
            for k, v in layer.params.items():
                items.append((f"{i}.{type(layer).__name__}.{k}", layer, "params", k))
            if include_buffers:
                for k, v in layer.buffers.items():
                    items.append((f"{i}.{type(layer).__name__}.{k}", layer, "buffers", k))
        return items

    def parameters(self):
        """(param array, grad array) pairs in declaration order."""
        return [(layer.params[k], layer.grads[k]) for layer in self.layers() for k in layer.params]

    def n_parameters(self) -> int:
        return sum(p.size for p, _ in self.parameters())

    def zero_grad(self):
        for layer in self.layers():
            layer.zero_grad()

    def conv_layers(self):
        return [l for l in self.layers() if isinstance(l, Conv2d)]

    # ------------------------------------------------------------ passes

    def forward(self, x: np.ndarray, train: bool = True) -> np.ndarray:
        cfg = self.cfg
        L = cfg.levels
        if x.ndim != 4 or x.shape[1] != cfg.in_channels:
            raise ShapeError(f"expected [B, {cfg.in_channels}, H, W], got {x.shape}")
        cfg.check_input(*x.shape[2:])
        x = x.astype(self.dtype, copy=False)
        enc = []
        pools = []
        h = x
        for l, blk in enumerate(self.encoder):
            if l:
                p = MaxPool2()
                h = p.forward(h)
                pools.append(p)
            h = blk.forward(h, train)
            enc.append(h)
        dec = {L - 1: self.bottleneck.forward(h, train)}
        routes = {}
        for l in range(L - 2, -1, -1):
            parts, ops = [], []
            for j in range(L):
                if j < l:
                    chain = [MaxPool2() for _ in range(l - j)]
                    t = enc[j]
                    for op in chain:
                        t = op.forward(t)
                    parts.append(t)
                    ops.append(("enc", j, chain))
                elif j == l:
                    parts.append(enc[l])
                    ops.append(("enc", l, []))
                else:
                    up = BilinearUp(2 ** (j - l))
                    parts.append(up.forward(dec[j]))
                    ops.append(("dec", j, [up]))
            routes[l] = (ops, [p.shape[1] for p in parts])
            dec[l] = self.decoder[l].forward(concat(parts), train)
        self._state = (pools, routes)
        return self.head.forward(dec[0], train)

    def backward(self, dout: np.ndarray) -> np.ndarray:
        cfg = self.cfg
        L = cfg.levels
        pools, routes = self._state
        d_dec = {l: None for l in range(L)}
        d_enc = [None] * L

        def add(store, key, g):
            store[key] = g if store[key] is None else store[key] + g

        add(d_dec, 0, self.head.backward(dout))
        for l in range(0, L - 1):
            dcat = self.decoder[l].backward(d_dec[l])
            ops, widths = routes[l]
            for (kind, j, chain), g in zip(ops, split_channels(dcat, widths)):
                for op in reversed(chain):
                    g = op.backward(g)
                add(d_enc if kind == "enc" else d_dec, j, g)
        add(d_enc, L - 1, self.bottleneck.backward(d_dec[L - 1]))
        for l in range(L - 1, -1, -1):
            g = self.encoder[l].backward(d_enc[l])
            if l:
                add(d_enc, l - 1, pools[l - 1].backward(g))
            else:
                return g

    def __call__(self, x, train=False):
        return self.forward(x, train)


def build_net(cfg: NetConfig, dtype=np.float32) -> DenoiserNet:
    return DenoiserNet(cfg, dtype)


def count_parameters_by_formula(cfg: NetConfig) -> int:
    """Independent tally from the wiring rules, without building layers."""
    K, L = cfg.kernel, cfg.levels

    def conv(ci, co, k, bias=True):
        return ci * co * k * k + (co if bias else 0)

    def block(ci, co):
        n = conv(ci, co, 1) + conv(co, co, K)
        n += (cfg.convs_per_block - 1) * conv(co, co, K, bias=not cfg.use_batchnorm)
        if cfg.use_batchnorm:
            n += 2 * co * (cfg.convs_per_block - 1)
        return n

    total = 0
    ci = cfg.in_channels
    for l in range(L):
        total += block(ci, cfg.width(l))
        ci = cfg.width(l)
    total += block(ci, cfg.width(L - 1))
    cat = sum(cfg.width(j) for j in range(L))
    for l in range(L - 1):
        total += conv(cat, cfg.width(l), K) + conv(cfg.width(l), cfg.width(l), K)
    total += conv(cfg.width(0), cfg.out_channels, 1)
    return total
