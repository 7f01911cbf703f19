"""Multiply-accumulate (MAC) cost model of the denoiser.

Counts are per sample (no batch factor) and in MACs, not FLOPs.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .denoiser.layers import Conv2d
from .denoiser.net import DenoiserNet


@dataclass
class CostBreakdown:
    encoder: int
    bottleneck: int
    decoder: int
    per_level: list = field(default_factory=list)  # (part, level, H, W, c_in, c_out, k, macs)
    alignment_term: int = 0

    @property
    def total(self) -> int:
        return self.encoder + self.bottleneck + self.decoder

    def csv(self) -> str:
        rows = ["# unit=multiply-accumulate per sample", "part,level,height,width,c_in,c_out,kernel,macs"]
        rows += [",".join(map(str, r)) for r in self.per_level]
        rows += [f"encoder,,,,,,,{self.encoder}", f"bottleneck,,,,,,,{self.bottleneck}",
                 f"decoder,,,,,,,{self.decoder}", f"total,,,,,,,{self.total}",
                 f"alignment_term,,,,,,,{self.alignment_term}"]
        return "\n".join(rows) + "\n"

    def table(self) -> str:
        lines = [f"{'part':<12}{'lvl':>4}{'HxW':>10}{'cin':>6}{'cout':>6}{'k':>3}{'MACs':>16}"]
        for part, lvl, h, w, ci, co, k, macs in self.per_level:
            lines.append(f"{part:<12}{lvl:>4}{f'{h}x{w}':>10}{ci:>6}{co:>6}{k:>3}{macs:>16,}")
        lines.append("-" * 57)
        for name, v in (("encoder", self.encoder), ("bottleneck", self.bottleneck),
                        ("decoder", self.decoder), ("total", self.total)):
            lines.append(f"{name:<41}{v:>16,}")
        lines.append("(counts are multiply-accumulates per sample)")
        return "\n".join(lines)


def closed_form_cost(H0: int, W0: int, C0: int, K: int, L: int) -> CostBreakdown:
    """Dominant-term estimate: encoder ~ L, bottleneck ~ 1, decoder ~ L^2 units of H0 W0 C0^2 K^2."""
    if min(H0, W0, C0, K, L) < 1:
        raise ValueError("all arguments must be positive")
    unit = H0 * W0 * C0 * C0 * K * K
    per_level = [("encoder", l, H0 >> l, W0 >> l, C0 << l, C0 << l, K, unit) for l in range(L)]
    per_level.append(("bottleneck", L, H0 >> L, W0 >> L, C0 << L, C0 << L, K, unit))
    per_level += [("decoder", l, H0 >> l, W0 >> l, L * (C0 << l), C0 << l, K, unit * L) for l in range(L)]
    return CostBreakdown(unit * L, unit, unit * L * L, per_level,
                         sum(2 * (H0 >> l) * (W0 >> l) * (C0 << l) for l in range(L)))


def conv_macs(h: int, w: int, c_in: int, c_out: int, k: int) -> int:
    return h * w * c_in * c_out * k * k


def exact_layer_cost(net: DenoiserNet | Conv2d, shape: tuple[int, int]) -> CostBreakdown:
    """Exact MAC tally over every convolution of the built network at input H x W.

    A bare Conv2d is accepted too and counted as a one-layer encoder.
    """
    H, W = shape
    if isinstance(net, Conv2d):
        return single_conv_cost(H, W, net.c_in, net.c_out, net.k)
    net.cfg.check_input(H, W)
    L = net.cfg.levels
    rows = []
    align = 0

    def block(part, level, blk):
        nonlocal align
        h, w = H >> level, W >> level
        for conv in blk.layers():
            if not hasattr(conv, "k"):
                continue
            macs = conv_macs(h, w, conv.c_in, conv.c_out, conv.k)
            rows.append((part, level, h, w, conv.c_in, conv.c_out, conv.k, macs))
        align += 2 * h * w * blk.align.c_out

    for l, blk in enumerate(net.encoder):
        block("encoder", l, blk)
    block("bottleneck", L - 1, net.bottleneck)
    for l in sorted(net.decoder, reverse=True):
        h, w = H >> l, W >> l
        for conv in net.decoder[l].layers():
            rows.append(("decoder", l, h, w, conv.c_in, conv.c_out, conv.k,
                         conv_macs(h, w, conv.c_in, conv.c_out, conv.k)))
    head = net.head
    rows.append(("decoder", 0, H, W, head.c_in, head.c_out, head.k, conv_macs(H, W, head.c_in, head.c_out, head.k)))

    def tally(part):
        return sum(r[-1] for r in rows if r[0] == part)

    return CostBreakdown(tally("encoder"), tally("bottleneck"), tally("decoder"), rows, align)


def single_conv_cost(h: int, w: int, c_in: int, c_out: int, k: int) -> CostBreakdown:
    macs = conv_macs(h, w, c_in, c_out, k)
    return CostBreakdown(macs, 0, 0, [("encoder", 0, h, w, c_in, c_out, k, macs)])
