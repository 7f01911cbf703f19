"""Finite-difference verification of the analytic backward passes (float64 only)."""

from __future__ import annotations

import numpy as np


def _loss(forward, x, proj):
    return float(np.sum(forward(x) * proj))


def gradient_check(model, x: np.ndarray, n_probes: int = 100, step: float = 1e-5, seed: int = 0,
                   train: bool = True) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``model`` is a layer or a DenoiserNet built with dtype float64.  Probes are
    drawn from both parameters and inputs.  A probe whose central difference
    at ``step`` and ``step/2`` disagree sits on a kink (ReLU at 0, max-pool
    tie) and is replaced by another probe.
    """
    x = np.array(x, dtype=np.float64)
    rng = np.random.default_rng(seed)
    layers = model.layers() if hasattr(model, "layers") else [model]
    for layer in layers:
        for p in layer.params.values():
            if p.dtype != np.float64:
                raise TypeError("gradient_check needs a float64 model")

    buffers = [(layer, {k: v.copy() for k, v in layer.buffers.items()}) for layer in layers]

    def restore():
        for layer, saved in buffers:
            for k, v in saved.items():
                layer.buffers[k] = v.copy()

    def forward(inp):
        restore()
        return model.forward(inp, train)

    out = forward(x)
    proj = rng.standard_normal(out.shape)
    if hasattr(model, "zero_grad"):
        model.zero_grad()
    dx = model.backward(proj)

    targets = [("input", None, x, dx)]
    for layer in layers:
        for name, p in layer.params.items():
            targets.append((name, layer, p, layer.grads[name]))
    sizes = np.array([t[2].size for t in targets], dtype=float)

    worst = 0.0
    accepted = 0
    attempts = 0
    while accepted < n_probes and attempts < 20 * n_probes:
        attempts += 1
        # half the probes on the input, the rest spread over parameters by size
        if len(targets) == 1 or rng.random() < 0.3:
            t = 0
        else:
            t = 1 + rng.choice(len(targets) - 1, p=sizes[1:] / sizes[1:].sum())
        _, _, arr, grad = targets[t]
        i = np.unravel_index(rng.integers(arr.size), arr.shape)
        orig = arr[i]

        def fd(h):
            arr[i] = orig + h
            up = _loss(forward, x, proj)
            arr[i] = orig - h
            dn = _loss(forward, x, proj)
            arr[i] = orig
            return (up - dn) / (2 * h)

        num = fd(step)
        num_half = fd(step / 2)
        if abs(num - num_half) > 1e-6 * max(abs(num), 1.0):
            continue
        ana = float(grad[i])
        err = abs(ana - num) / max(abs(ana), abs(num), 1e-8)
        worst = max(worst, err)
        accepted += 1
    restore()
    if accepted < n_probes:
        raise RuntimeError(f"only {accepted} smooth probes found in {attempts} attempts")
    return worst


def randomize(net, seed: int = 0, scale: float = 0.05):
    """Give zero-initialized kernels and batch-norm affine terms random values."""
    rng = np.random.default_rng(seed)
    for layer in net.layers():
        for name, p in layer.params.items():
            p += scale * rng.standard_normal(p.shape)
