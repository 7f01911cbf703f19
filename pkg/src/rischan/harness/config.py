"""Experiment configuration: a flat key=value file, named profiles, env overrides."""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, fields

from ..channel import ChannelConfig
from ..denoiser.net import NetConfig
from ..denoiser.train import TrainConfig
from ..geometry import ArrayGeometry, wavelength_for

ENV_PREFIX = "RISCHAN_"


class ConfigError(ValueError):
    pass


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(t) for t in text.split(",") if t.strip())


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(t) for t in text.split(",") if t.strip())


def _grids(text: str) -> tuple[tuple[int, int], ...]:
    out = []
    for t in text.split(","):
        if t.strip():
            h, v = t.lower().split("x")
            out.append((int(h), int(v)))
    return tuple(out)


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 0
    out_dir: str = "runs/desk"
    # geometry
    ris_h: int = 4
    ris_v: int = 4
    bs_h: int = 8
    bs_v: int = 8
    carrier_hz: float = 7.8e9
    ris_spacing_wl: float = 0.25
    bs_spacing_wl: float = 0.5
    paper_literal_response: bool = False
    # channel
    eta_r: float = 10.0
    eta_b: float = 10.0
    rho: float = 0.8
    uncorrelated: bool = False
    unit_power_los: bool = True
    # pilots and estimators
    pilot_L: int = 16
    direct_subframes: int = 16
    ideal_direct_cancellation: bool = False
    lmmse_no_m_factor: bool = False
    rg_samples: int = 1000
    # data
    snr_db: tuple = (-5.0, 0.0, 5.0, 10.0, 15.0)
    n_samples: int = 2000
    train_fraction: float = 0.7
    test_samples: int = 2000
    patch_x: int = 8
    patch_y: int = 8
    patches_per_sample: int = 8
    # network
    levels: int = 2
    base_filters: int = 8
    convs_per_block: int = 2
    kernel: int = 3
    batchnorm: bool = True
    padding: str = "replicate"
    init: str = "glorot"
    identity_init: bool = True
    # training
    lr: float = 0.004
    decay: float = 0.9
    batch_size: int = 32
    epochs: int = 20
    # evaluation
    tile_x: int = 8
    tile_y: int = 8
    tile_batch: int = 1
    sweep_snr_db: tuple = (10.0,)
    sweep_pilot_L: tuple = (16, 24, 32)
    sweep_antennas: tuple = ((8, 8), (16, 16))
    sweep_elements: tuple = ((4, 4), (8, 4))
    sweep_samples: int = 2000
    direct_epochs: int = 60
    deterministic: bool = True

    # ------------------------------------------------------------ derived

    @property
    def N(self) -> int:
        return self.ris_h * self.ris_v

    @property
    def M(self) -> int:
        return self.bs_h * self.bs_v

    @property
    def wavelength(self) -> float:
        return wavelength_for(self.carrier_hz)

    def channel_config(self, **over) -> ChannelConfig:
        c = dataclasses.replace(self, **over) if over else self
        lam = c.wavelength
        return ChannelConfig(
            ris=ArrayGeometry.ris(c.ris_h, c.ris_v, lam, c.ris_spacing_wl * lam),
            bs=ArrayGeometry.bs(c.bs_h, c.bs_v, lam, c.bs_spacing_wl * lam),
            eta_r=c.eta_r, eta_b=c.eta_b, rho=c.rho, seed=c.seed,
            unit_power_los=c.unit_power_los,
            paper_literal_response=c.paper_literal_response,
            uncorrelated=c.uncorrelated,
        )

    def net_config(self) -> NetConfig:
        return NetConfig(self.levels, self.base_filters, self.convs_per_block, self.kernel,
                         self.batchnorm, self.padding, self.init, self.identity_init, seed=self.seed)

    def train_config(self, epochs: int | None = None) -> TrainConfig:
        return TrainConfig(self.lr, self.decay, self.batch_size, self.epochs if epochs is None else epochs,
                           seed=self.seed)

    @property
    def n_train(self) -> int:
        return int(round(self.n_samples * self.train_fraction))

    @property
    def split_sizes(self) -> tuple[int, int]:
        """(training, validation) patch counts written by ``generate``."""
        per = self.patches_per_sample
        return self.n_train * per, (self.n_samples - self.n_train) * per

    def validate(self) -> "ExperimentConfig":
        problems = []
        if not self.snr_db:
            problems.append("snr_db is empty")
        if self.pilot_L < self.N:
            problems.append(f"pilot_L={self.pilot_L} < N={self.N}")
        if not (1 <= self.patch_x <= self.N and 1 <= self.patch_y <= self.M):
            problems.append(f"patch {self.patch_y}x{self.patch_x} exceeds {self.M}x{self.N}")
        m = 2 ** (self.levels - 1)
        if self.patch_x % m or self.patch_y % m:
            problems.append(f"patch dims must be divisible by {m}")
        if self.M % self.tile_y or self.N % self.tile_x:
            problems.append(f"tile {self.tile_y}x{self.tile_x} does not divide {self.M}x{self.N}")
        if not 0 < self.train_fraction < 1:
            problems.append("train_fraction must lie in (0, 1)")
        if self.n_samples < 2 or self.test_samples < 1:
            problems.append("need n_samples >= 2 and test_samples >= 1")
        if self.tile_batch < 1:
            problems.append("tile_batch must be >= 1")
        if self.patches_per_sample < 1:
            problems.append("patches_per_sample must be >= 1")
        try:
            self.channel_config()
            self.net_config()
            self.train_config()
        except ValueError as exc:
            problems.append(str(exc))
        if problems:
            raise ConfigError("; ".join(problems))
        return self

    # ------------------------------------------------------------ text form

    def to_text(self) -> str:
        return "".join(f"{f.name}={_fmt(getattr(self, f.name))}\n" for f in fields(self))

    @classmethod
    def from_items(cls, items: dict, base: "ExperimentConfig | None" = None) -> "ExperimentConfig":
        base = base or cls()
        kinds = {f.name: type(getattr(base, f.name)) for f in fields(cls)}
        over = {}
        for key, raw in items.items():
            if key not in kinds:
                raise ConfigError(f"unknown config key {key!r}")
            over[key] = _parse(key, raw, getattr(base, key))
        return dataclasses.replace(base, **over)


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return ",".join(f"{x[0]}x{x[1]}" if isinstance(x, tuple) else _fmt(x) for x in v)
    return str(v)


def _parse(key: str, raw: str, like):
    raw = raw.strip()
    try:
        if isinstance(like, bool):
            if raw.lower() in ("1", "true", "yes", "on"):
                return True
            if raw.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if isinstance(like, int):
            return int(raw)
        if isinstance(like, float):
            return float(raw)
        if isinstance(like, tuple):
            if key in ("sweep_antennas", "sweep_elements"):
                return _grids(raw)
            if key == "sweep_pilot_L":
                return _ints(raw)
            return _floats(raw)
        return raw
    except ValueError as exc:
        raise ConfigError(f"cannot parse {key}={raw!r}") from exc


def parse_text(text: str) -> dict:
    items = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {n}: expected key=value, got {line!r}")
        k, v = line.split("=", 1)
        items[k.strip()] = v.strip()
    return items


PROFILES = {
    "desk": {},
    "paper": {
        "out_dir": "runs/paper",
        "ris_h": "16", "ris_v": "8", "bs_h": "32", "bs_v": "32",
        "pilot_L": "128", "direct_subframes": "128",
        "n_samples": "10000", "test_samples": "2000",
        "patch_x": "32", "patch_y": "32", "tile_x": "32", "tile_y": "32",
        "levels": "3", "base_filters": "32", "epochs": "40", "decay": "0.95",
        "sweep_antennas": "32x32,64x32", "sweep_elements": "16x8,32x8",
        "sweep_pilot_L": "128,192,256",
    },
}


def load_config(path: str | None = None, profile: str = "desk", overrides: dict | None = None,
                env: dict | None = None) -> ExperimentConfig:
    """Resolve profile -> file -> environment -> explicit overrides, then validate."""
    if profile not in PROFILES:
        raise ConfigError(f"unknown profile {profile!r}; choose from {sorted(PROFILES)}")
    cfg = ExperimentConfig.from_items(PROFILES[profile])
    if path:
        try:
            with open(path, encoding="utf-8") as fh:
                cfg = ExperimentConfig.from_items(parse_text(fh.read()), cfg)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
    env = os.environ if env is None else env
    env_items = {k[len(ENV_PREFIX):].lower(): v for k, v in env.items() if k.startswith(ENV_PREFIX)}
    if env_items:
        cfg = ExperimentConfig.from_items(env_items, cfg)
    if overrides:
        cfg = ExperimentConfig.from_items({k: str(v) for k, v in overrides.items()}, cfg)
    return cfg.validate()
