"""Experiment commands: data generation, training, evaluation and sweeps.

Every stochastic draw goes through a keyed stream, so a run is a pure
function of its configuration.  Files written per output directory:

    train.rcds, val.rcds          patch containers (70/30 split by sample)
    test_common.npz               truths G, direct channels b, sample R_G
    test_snr_<v>.npz              LS input and binary-schedule observation
    checkpoint.rcnn, loss.csv     training products
    eval.csv, sweep_<axis>.csv    NMSE tables (deterministic)
    timing.csv                    wall-clock figures (not deterministic)
    config.resolved.txt           echo of the configuration used
"""

from __future__ import annotations

import csv
import dataclasses
import io
import logging
import math
import os
import time
from dataclasses import dataclass

import numpy as np

from ..channel import ChannelRealization, model_for
from ..complexity import closed_form_cost, exact_layer_cost
from ..denoiser import build_net, gradient_check, infer, load_checkpoint, save_checkpoint, train
from ..denoiser.gradcheck import randomize
from ..denoiser.net import NetConfig
from ..denoiser.train import loss_trace_csv
from ..estimators import (
    PhaseSchedule, PilotConfig, batch_nmse, binary_schedule, dft_schedule, estimate_direct,
    lmmse_matrix, ls_estimate, noise_variance, sample_R_G, simulate_pilots, to_db,
)
from ..patching import (
    PatchDataset, PatchSpec, complex_to_planes, deserialize_dataset, extract_patches,
    planes_to_complex, reshape_direct, serialize_dataset,
)
from ..rng import stream
from .config import ConfigError, ExperimentConfig

log = logging.getLogger(__name__)

CSV_HEADER = ("axis", "method", "nmse_linear", "nmse_db", "n_samples", "seed")
METHODS = ("LS", "LMMSE", "B-LMMSE", "net-full", "net-tiled")
# the LMMSE regularizer variant that the configuration did not select
ALT_LMMSE = {False: "LMMSE-noM", True: "LMMSE-M"}
SWEEP_AXES = ("snr", "pilot_L", "antennas_M", "elements_N", "correlation")
UNAVAILABLE = "NA"


# ---------------------------------------------------------------- helpers


def _path(cfg: ExperimentConfig, name: str) -> str:
    return os.path.join(cfg.out_dir, name)


def _snr_tag(snr: float) -> str:
    return f"{snr:g}".replace("-", "m")


def _atomic_write(path: str, data: bytes) -> None:
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


def _save_npz(path: str, **arrays) -> None:
    buf = io.BytesIO()
    np.savez(buf, **arrays)
    _atomic_write(path, buf.getvalue())


def echo_config(cfg: ExperimentConfig) -> str:
    os.makedirs(cfg.out_dir, exist_ok=True)
    path = _path(cfg, "config.resolved.txt")
    _atomic_write(path, cfg.to_text().encode())
    return path


@dataclass
class Row:
    axis: str
    method: str
    nmse_linear: float | None
    n_samples: int
    seed: int

    def cells(self) -> list[str]:
        if self.nmse_linear is None or not math.isfinite(self.nmse_linear):
            return [self.axis, self.method, UNAVAILABLE, UNAVAILABLE, str(self.n_samples), str(self.seed)]
        return [self.axis, self.method, repr(float(self.nmse_linear)), repr(to_db(self.nmse_linear)),
                str(self.n_samples), str(self.seed)]


def rows_csv(rows: list[Row]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for r in rows:
        w.writerow(r.cells())
    return buf.getvalue()


def read_csv(path: str) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


# ---------------------------------------------------------------- observations


def observe(cfg: ExperimentConfig, real: ChannelRealization, snr_db: float, sched: PhaseSchedule,
            *keys) -> np.ndarray:
    """Phase-two observation with the direct path cancelled, (M, L).

    Unless cancellation is ideal, the direct channel is first estimated from
    ``direct_subframes`` RIS-off subframes and that estimate is subtracted
    from every column, leaving its error in the observation.
    """
    rng = stream(cfg.seed, "obs", *keys)
    pilots = PilotConfig(snr_db)
    if cfg.ideal_direct_cancellation:
        return simulate_pilots(real, sched, pilots, rng).Y
    Y = simulate_pilots(real, sched, pilots, rng, include_direct=True).Y
    b_hat = estimate_direct(real.b, pilots.sigma_v2, cfg.direct_subframes, rng)
    return Y - b_hat[:, None]


def _sample_snr(cfg: ExperimentConfig, i: int) -> float:
    return cfg.snr_db[i % len(cfg.snr_db)]


def estimate_R_G(cfg: ExperimentConfig) -> np.ndarray:
    model = model_for(cfg.channel_config())
    return sample_R_G(model.cascaded_batch(range(cfg.rg_samples), "rg"))


def lmmse_from_ls(ls: np.ndarray, sched: PhaseSchedule, R_G: np.ndarray, M: int, sigma_v2: float,
                  no_m_factor: bool = False) -> np.ndarray:
    """LMMSE computed from a DFT-schedule LS estimate.

    The LMMSE filter annihilates the part of Y outside the row space of S,
    and Y projected onto that row space is exactly LS @ S, so no information
    is lost by storing the LS estimate only.
    """
    if sigma_v2 == 0:
        return np.array(ls, copy=True)
    return ls @ (sched.S @ lmmse_matrix(sched, R_G, M, sigma_v2, no_m_factor))


# ---------------------------------------------------------------- generate


def generate(cfg: ExperimentConfig) -> dict:
    """Training/validation containers plus per-SNR full-resolution test sets."""
    echo_config(cfg)
    model = model_for(cfg.channel_config())
    sched = dft_schedule(cfg.N, cfg.pilot_L)
    M, N = cfg.M, cfg.N

    X = np.empty((cfg.n_samples, M, N), dtype=complex)
    Y = np.empty_like(X)
    for i in range(cfg.n_samples):
        real = model.realization(i, "gen")
        X[i] = ls_estimate(observe(cfg, real, _sample_snr(cfg, i), sched, "gen", i), sched)
        Y[i] = real.G
    spec = PatchSpec(cfg.patch_x, cfg.patch_y, cfg.n_samples * cfg.patches_per_sample, cfg.seed)
    ds = extract_patches(X, Y, spec)
    ds.header.update(
        seed=cfg.seed, M=M, N=N, pilot_L=cfg.pilot_L,
        snr_db=",".join(f"{s:g}" for s in cfg.snr_db),
        snr_assignment="round-robin by sample index",
    )
    tr, va = ds.split(cfg.split_sizes[0])
    tr.header["split"], va.header["split"] = "train", "validation"
    serialize_dataset(tr, _path(cfg, "train.rcds"))
    serialize_dataset(va, _path(cfg, "val.rcds"))

    G = np.empty((cfg.test_samples, M, N), dtype=complex)
    b = np.empty((cfg.test_samples, M), dtype=complex)
    reals = []
    for i in range(cfg.test_samples):
        real = model.realization(i, "test")
        reals.append(real)
        G[i], b[i] = real.G, real.b
    R_G = estimate_R_G(cfg)
    _save_npz(_path(cfg, "test_common.npz"), G=G, b=b, R_G=R_G)

    binary = binary_schedule(N)
    for snr in cfg.snr_db:
        ls = np.empty_like(G)
        yb = np.empty((cfg.test_samples, M, N), dtype=np.complex64)
        for i, real in enumerate(reals):
            ls[i] = ls_estimate(observe(cfg, real, snr, sched, "test", snr, i), sched)
            yb[i] = observe(cfg, real, snr, binary, "test-binary", snr, i)
        _save_npz(_path(cfg, f"test_snr_{_snr_tag(snr)}.npz"), ls=ls, binary=yb, snr_db=np.float64(snr))
    return {"train": len(tr), "val": len(va), "test_samples": cfg.test_samples}


# ---------------------------------------------------------------- train


def train_model(cfg: ExperimentConfig, resume: str | None = None, epochs: int | None = None) -> dict:
    """Train from the containers in ``out_dir``; checkpoints after every epoch."""
    echo_config(cfg)
    tr = deserialize_dataset(_path(cfg, "train.rcds"))
    va = deserialize_dataset(_path(cfg, "val.rcds"))
    tc = cfg.train_config(epochs)
    ckpt = _path(cfg, "checkpoint.rcnn")
    if resume:
        net, header, adam = load_checkpoint(resume)
        start = int(header["epoch"])
        if net.cfg != cfg.net_config():
            raise ConfigError(f"checkpoint network {net.cfg} differs from configuration {cfg.net_config()}")
    else:
        net, adam, start = build_net(cfg.net_config()), None, 0

    def on_epoch(epoch, net, adam):
        save_checkpoint(ckpt, net, epoch + 1, tc.lr_at(epoch), cfg.seed, adam)

    res = train(net, tr, tc, val=va, adam=adam, start_epoch=start, on_epoch=on_epoch)
    if start >= tc.epochs:
        save_checkpoint(ckpt, net, start, tc.lr_at(max(start - 1, 0)), cfg.seed, res.adam)
    _atomic_write(_path(cfg, "loss.csv"), loss_trace_csv(res.history).encode())
    val_nmse = patch_nmse(net, va)
    return {"history": res.history, "val_nmse": val_nmse, "val_nmse_db": to_db(val_nmse),
            "checkpoint": ckpt, "net": net}


def patch_nmse(net, ds: PatchDataset) -> float:
    if not len(ds):
        return float("nan")
    pred = np.concatenate([net.forward(ds.data[s:s + 256], train=False) for s in range(0, len(ds), 256)])
    return batch_nmse(planes_to_complex(pred.astype(np.float64)), planes_to_complex(ds.labels.astype(np.float64)))


# ---------------------------------------------------------------- evaluate


def _timed(fn):
    t = time.perf_counter()
    out = fn()
    return out, time.perf_counter() - t


def _net_rows(net, ls, G, axis, cfg, n, timings=None) -> list[Row]:
    rows = []
    full, t_full = _timed(lambda: infer(net, ls, "full"))
    rows.append(Row(axis, "net-full", batch_nmse(full, G), n, cfg.seed))
    M, N = ls.shape[1:]
    if M % cfg.tile_y == 0 and N % cfg.tile_x == 0:
        tile_shape = (cfg.tile_y, cfg.tile_x)
        tiled, t_tiled = _timed(lambda: infer(net, ls, "tiled", tile_shape, tile_batch=cfg.tile_batch))
        rows.append(Row(axis, "net-tiled", batch_nmse(tiled, G), n, cfg.seed))
    else:
        t_tiled = float("nan")
        rows.append(Row(axis, "net-tiled", None, n, cfg.seed))
    if timings is not None:
        timings.append((axis, t_full, t_tiled))
    return rows


def _timing_csv(timings) -> str:
    lines = ["axis,full_seconds,tiled_seconds"]
    lines += [f"{a},{f:.6f},{t:.6f}" for a, f, t in timings]
    return "\n".join(lines) + "\n"


def evaluate(cfg: ExperimentConfig, checkpoint: str | None = None) -> list[Row]:
    """NMSE of every method on the stored per-SNR test sets; writes eval.csv."""
    echo_config(cfg)
    net, _, _ = load_checkpoint(checkpoint or _path(cfg, "checkpoint.rcnn"))
    common = np.load(_path(cfg, "test_common.npz"))
    G, R_G = common["G"], common["R_G"]
    n = len(G)
    sched = dft_schedule(cfg.N, cfg.pilot_L)
    binary = binary_schedule(cfg.N)
    rows, timings = [], []
    for snr in cfg.snr_db:
        data = np.load(_path(cfg, f"test_snr_{_snr_tag(snr)}.npz"))
        ls, yb = data["ls"], data["binary"].astype(complex)
        s2 = noise_variance(snr)
        axis = f"snr_db={snr:g}"
        rows.append(Row(axis, "LS", batch_nmse(ls, G), n, cfg.seed))
        variants = ((cfg.lmmse_no_m_factor, "LMMSE"), (not cfg.lmmse_no_m_factor, ALT_LMMSE[cfg.lmmse_no_m_factor]))
        for flag, name in variants:
            rows.append(Row(axis, name, batch_nmse(lmmse_from_ls(ls, sched, R_G, cfg.M, s2, flag), G), n, cfg.seed))
        if s2 == 0:
            bl = yb
        else:
            bl = yb @ lmmse_matrix(binary, R_G, cfg.M, s2, cfg.lmmse_no_m_factor)
        rows.append(Row(axis, "B-LMMSE", batch_nmse(bl, G), n, cfg.seed))
        rows += _net_rows(net, ls, G, axis, cfg, n, timings)
    _atomic_write(_path(cfg, "eval.csv"), rows_csv(rows).encode())
    _atomic_write(_path(cfg, "timing.csv"), _timing_csv(timings).encode())
    return rows


# ---------------------------------------------------------------- sweeps


def _sweep_points(cfg: ExperimentConfig, axis: str):
    """(label, config variant, snr list) for every point on an axis."""
    if axis == "snr":
        yield "", cfg, cfg.snr_db
    elif axis == "pilot_L":
        for L in cfg.sweep_pilot_L:
            yield f"pilot_L={L}", dataclasses.replace(cfg, pilot_L=L), cfg.sweep_snr_db
    elif axis == "antennas_M":
        for h, v in cfg.sweep_antennas:
            yield f"antennas_M={h * v}({h}x{v})", dataclasses.replace(cfg, bs_h=h, bs_v=v), cfg.sweep_snr_db
    elif axis == "elements_N":
        for h, v in cfg.sweep_elements:
            c = dataclasses.replace(cfg, ris_h=h, ris_v=v, pilot_L=max(cfg.pilot_L, h * v))
            yield f"elements_N={h * v}({h}x{v})", c, cfg.sweep_snr_db
    elif axis == "correlation":
        for name, unc in (("correlated-nlos", False), ("uncorrelated-nlos", True)):
            c = dataclasses.replace(cfg, eta_r=0.0, eta_b=0.0, uncorrelated=unc)
            yield f"correlation={name}", c, cfg.sweep_snr_db
    else:
        raise ConfigError(f"unknown sweep axis {axis!r}; choose from {SWEEP_AXES}")


def sweep_point(cfg: ExperimentConfig, net, snr: float, label: str, n: int, timings=None) -> list[Row]:
    """All methods at one configuration and SNR on freshly drawn test channels.

    The pilot count may be below N here; LS and the network (which takes LS
    as input) are then reported unavailable while LMMSE still applies.
    """
    model = model_for(cfg.channel_config())
    sched = PhaseSchedule(dft_schedule(cfg.N, max(cfg.pilot_L, cfg.N)).S[:, :cfg.pilot_L], "dft") \
        if cfg.pilot_L < cfg.N else dft_schedule(cfg.N, cfg.pilot_L)
    binary = binary_schedule(cfg.N)
    s2 = noise_variance(snr)
    R_G = estimate_R_G(cfg)
    G = np.empty((n, cfg.M, cfg.N), dtype=complex)
    Yd = np.empty((n, cfg.M, cfg.pilot_L), dtype=complex)
    Yb = np.empty((n, cfg.M, cfg.N), dtype=complex)
    for i in range(n):
        real = model.realization(i, "sweep")
        G[i] = real.G
        Yd[i] = observe(cfg, real, snr, sched, "sweep", snr, i)
        Yb[i] = observe(cfg, real, snr, binary, "sweep-binary", snr, i)
    axis = f"{label};snr_db={snr:g}" if label else f"snr_db={snr:g}"
    rows = []
    ls = ls_estimate(Yd, sched) if cfg.pilot_L >= cfg.N else None
    rows.append(Row(axis, "LS", None if ls is None else batch_nmse(ls, G), n, cfg.seed))
    alt = not cfg.lmmse_no_m_factor
    if s2 == 0:
        lm = lm_alt = ls
        bl = Yb
    else:
        lm = Yd @ lmmse_matrix(sched, R_G, cfg.M, s2, cfg.lmmse_no_m_factor)
        lm_alt = Yd @ lmmse_matrix(sched, R_G, cfg.M, s2, alt)
        bl = Yb @ lmmse_matrix(binary, R_G, cfg.M, s2, cfg.lmmse_no_m_factor)
    rows.append(Row(axis, "LMMSE", None if lm is None else batch_nmse(lm, G), n, cfg.seed))
    rows.append(Row(axis, ALT_LMMSE[cfg.lmmse_no_m_factor], None if lm_alt is None else batch_nmse(lm_alt, G),
                    n, cfg.seed))
    rows.append(Row(axis, "B-LMMSE", batch_nmse(bl, G), n, cfg.seed))
    m = net.cfg.multiple
    if ls is None or cfg.M % m or cfg.N % m:
        rows += [Row(axis, "net-full", None, n, cfg.seed), Row(axis, "net-tiled", None, n, cfg.seed)]
    else:
        rows += _net_rows(net, ls, G, axis, cfg, n, timings)
    return rows


def sweep(cfg: ExperimentConfig, axis: str, checkpoint: str | None = None) -> list[Row]:
    """Evaluate the fixed trained network along one axis; writes sweep_<axis>.csv."""
    echo_config(cfg)
    net, _, _ = load_checkpoint(checkpoint or _path(cfg, "checkpoint.rcnn"))
    rows, timings = [], []
    for label, variant, snrs in _sweep_points(cfg, axis):
        for snr in snrs:
            rows += sweep_point(variant, net, snr, label, cfg.sweep_samples, timings)
    _atomic_write(_path(cfg, f"sweep_{axis}.csv"), rows_csv(rows).encode())
    _atomic_write(_path(cfg, f"timing_sweep_{axis}.csv"), _timing_csv(timings).encode())
    return rows


# ---------------------------------------------------------------- direct channel


def direct_images(cfg: ExperimentConfig, n: int, snrs, key: str) -> tuple[np.ndarray, np.ndarray]:
    """(LS estimate, truth) of the direct channel folded onto the BS grid."""
    model = model_for(cfg.channel_config())
    truth = np.empty((n, cfg.M), dtype=complex)
    est = np.empty_like(truth)
    for i in range(n):
        snr = snrs[i % len(snrs)]
        b = model.direct(stream(cfg.seed, "direct", key, i))
        truth[i] = b
        est[i] = estimate_direct(b, noise_variance(snr), cfg.direct_subframes,
                                 stream(cfg.seed, "direct-noise", key, snr, i))
    return reshape_direct(est, cfg.bs_h, cfg.bs_v), reshape_direct(truth, cfg.bs_h, cfg.bs_v)


def direct_experiment(cfg: ExperimentConfig) -> list[Row]:
    """Train a denoiser on whole direct-channel images and compare with LS."""
    echo_config(cfg)
    X, Y = direct_images(cfg, cfg.n_samples, cfg.snr_db, "train")
    net_cfg = dataclasses.replace(cfg.net_config())
    net_cfg.check_input(cfg.bs_v, cfg.bs_h)
    ds = PatchDataset(complex_to_planes(X).astype(np.float32), complex_to_planes(Y).astype(np.float32),
                      {"kind": "direct"})
    tr, va = ds.split(cfg.n_train)
    net = build_net(net_cfg)
    train(net, tr, cfg.train_config(cfg.direct_epochs), val=va)
    save_checkpoint(_path(cfg, "direct_checkpoint.rcnn"), net, cfg.direct_epochs, cfg.lr, cfg.seed)
    rows = []
    for snr in cfg.snr_db:
        Xt, Yt = direct_images(cfg, cfg.test_samples, (snr,), f"test{snr:g}")
        axis = f"snr_db={snr:g}"
        rows.append(Row(axis, "LS", batch_nmse(Xt, Yt), cfg.test_samples, cfg.seed))
        rows.append(Row(axis, "net-full", batch_nmse(infer(net, Xt), Yt), cfg.test_samples, cfg.seed))
    _atomic_write(_path(cfg, "direct.csv"), rows_csv(rows).encode())
    return rows


# ---------------------------------------------------------------- complexity and selftest


def complexity_report(cfg: ExperimentConfig) -> str:
    echo_config(cfg)
    net = build_net(cfg.net_config())
    exact = exact_layer_cost(net, (cfg.M, cfg.N))
    approx = closed_form_cost(cfg.M, cfg.N, cfg.base_filters, cfg.kernel, cfg.levels)
    _atomic_write(_path(cfg, "complexity.csv"), exact.csv().encode())
    return (f"exact cost of the built network at {cfg.M}x{cfg.N}\n{exact.table()}\n\n"
            f"closed-form estimate: encoder {approx.encoder:,} bottleneck {approx.bottleneck:,} "
            f"decoder {approx.decoder:,} total {approx.total:,} MACs")


def selftest(seed: int = 0) -> list[tuple[str, bool, str]]:
    """Fast internal consistency checks; returns (name, passed, detail)."""
    out = []
    worst = 0.0
    for N, L in ((4, 4), (16, 16), (16, 32)):
        S = dft_schedule(N, L).S
        worst = max(worst, np.linalg.norm(S @ S.conj().T - L * np.eye(N)) / (L * math.sqrt(N)))
    out.append(("dft-orthogonality", worst < 1e-12, f"max residual {worst:.2e}"))

    cfg = ExperimentConfig(seed=seed)
    model = model_for(cfg.channel_config())
    sched = dft_schedule(cfg.N, cfg.pilot_L)
    errs = []
    for i in range(20):
        real = model.realization(i, "selftest")
        Y = simulate_pilots(real, sched, PilotConfig(0.0), stream(seed, "selftest", i), sigma_v2=0.0)
        errs.append(batch_nmse(ls_estimate(Y, sched)[None], real.G[None]))
    out.append(("noiseless-ls", max(errs) < 1e-20, f"max NMSE {max(errs):.2e}"))

    net = build_net(NetConfig(levels=2, base_filters=2, seed=seed), dtype=np.float64)
    randomize(net, seed)
    x = stream(seed, "selftest-x").standard_normal((2, 2, 8, 8))
    err = gradient_check(net, x, n_probes=40, seed=seed)
    out.append(("gradient-check", err < 1e-4, f"max relative error {err:.2e}"))
    return out
