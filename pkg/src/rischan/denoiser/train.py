"""Adam training loop with per-epoch exponential learning-rate decay."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from ..patching import PatchDataset
from ..rng import stream
from .net import DenoiserNet

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 0.004
    decay: float = 0.95
    batch_size: int = 32
    epochs: int = 40
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        if self.lr <= 0 or not 0 < self.decay <= 1:
            raise ValueError("need lr > 0 and 0 < decay <= 1")
        if self.batch_size < 1 or self.epochs < 0:
            raise ValueError("batch_size >= 1 and epochs >= 0 required")

    def lr_at(self, epoch: int) -> float:
        return self.lr * self.decay ** epoch


@dataclass
class AdamState:
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    @classmethod
    def for_net(cls, net: DenoiserNet):
        ps = net.parameters()
        return cls(0, [np.zeros_like(p) for p, _ in ps], [np.zeros_like(p) for p, _ in ps])


@dataclass
class TrainResult:
    net: DenoiserNet
    history: list  # (epoch, train_loss, val_loss)
    adam: AdamState
    epochs_done: int


def mse(pred: np.ndarray, target: np.ndarray) -> float:
    return float(np.mean((pred - target) ** 2))


def adam_step(net: DenoiserNet, state: AdamState, lr: float, tc: TrainConfig):
    state.step += 1
    b1, b2 = tc.beta1, tc.beta2
    c1 = 1 - b1 ** state.step
    c2 = 1 - b2 ** state.step
    for (p, g), m, v in zip(net.parameters(), state.m, state.v):
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        p -= (lr * (m / c1) / (np.sqrt(v / c2) + tc.eps)).astype(p.dtype)


def evaluate_loss(net: DenoiserNet, ds: PatchDataset, batch_size: int = 256) -> float:
    total = 0.0
    for s in range(0, len(ds), batch_size):
        pred = net.forward(ds.data[s:s + batch_size], train=False)
        total += float(np.sum((pred - ds.labels[s:s + batch_size]) ** 2))
    return total / ds.data.size


def train(
    net: DenoiserNet,
    ds: PatchDataset,
    tc: TrainConfig,
    val: PatchDataset | None = None,
    adam: AdamState | None = None,
    start_epoch: int = 0,
    on_epoch=None,
) -> TrainResult:
    """Minimize MSE(net(LS patch), true patch); shuffles are keyed by (seed, epoch)."""
    net.cfg.check_input(*ds.data.shape[2:])
    adam = AdamState.for_net(net) if adam is None else adam
    history = []
    n = len(ds)
    data = ds.data.astype(net.dtype, copy=False)
    labels = ds.labels.astype(net.dtype, copy=False)
    for epoch in range(start_epoch, tc.epochs):
        lr = tc.lr_at(epoch)
        order = stream(tc.seed, "shuffle", epoch).permutation(n)
        running = 0.0
        for s in range(0, n, tc.batch_size):
            idx = order[s:s + tc.batch_size]
            x, y = data[idx], labels[idx]
            net.zero_grad()
            pred = net.forward(x, train=True)
            diff = pred - y
            loss = float(np.mean(diff * diff))
            if not math.isfinite(loss):
                raise TrainingDiverged(
                    f"non-finite loss at epoch {epoch}, batch {s // tc.batch_size}, lr={lr:g}; "
                    "lower the learning rate or check the input scaling"
                )
            running += loss * len(idx)
            net.backward((2.0 / diff.size) * diff)
            adam_step(net, adam, lr, tc)
        train_loss = running / n
        val_loss = evaluate_loss(net, val) if val is not None and len(val) else float("nan")
        history.append((epoch, train_loss, val_loss))
        log.info("epoch %d lr %.5f train %.6f val %.6f", epoch, lr, train_loss, val_loss)
        if on_epoch is not None:
            on_epoch(epoch, net, adam)
    return TrainResult(net, history, adam, tc.epochs)


def loss_trace_csv(history) -> str:
    lines = ["epoch,train_loss,val_loss"]
    lines += [f"{e},{t:.9g},{v:.9g}" for e, t, v in history]
    return "\n".join(lines) + "\n"
