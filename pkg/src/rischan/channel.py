"""Channel realizations for the RIS-assisted uplink.

user -> RIS : Rician vector f (N,)
RIS -> BS   : Rician matrix H (M, N)
user -> BS  : correlated Rayleigh vector b (M,)
cascaded    : G = H diag(f)
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property, lru_cache

import numpy as np

from .correlation import CorrelationConfig, bs_correlation, psd_sqrt, ris_correlation
from .geometry import ArrayGeometry, Direction, array_response, draw_direction
from .rng import complex_normal, stream


@dataclass(frozen=True)
class ChannelConfig:
    ris: ArrayGeometry
    bs: ArrayGeometry
    eta_r: float = 10.0
    eta_b: float = 10.0
    rho: float = 0.8
    seed: int = 0
    # (user arrival at RIS, RIS departure, BS arrival); None draws them per realization
    fixed_angles: tuple[Direction, Direction, Direction] | None = None
    # scale LoS steering vectors to unit-modulus entries so eta is a true power ratio
    unit_power_los: bool = True
    paper_literal_response: bool = False
    # disable spatial correlation entirely (R_r = R_b = I)
    uncorrelated: bool = False

    def __post_init__(self):
        if self.eta_r < 0 or self.eta_b < 0:
            raise ValueError("Rician factors must be non-negative")
        CorrelationConfig(self.rho, self.ris, self.bs)

    @property
    def N(self) -> int:
        return self.ris.size

    @property
    def M(self) -> int:
        return self.bs.size

    @property
    def correlation(self) -> CorrelationConfig:
        return CorrelationConfig(self.rho, self.ris, self.bs)


@dataclass
class ChannelRealization:
    f: np.ndarray
    H: np.ndarray
    b: np.ndarray
    G: np.ndarray
    angles: tuple[Direction, Direction, Direction]
    sample_seed: tuple = field(default=())


def cascade(f: np.ndarray, H: np.ndarray) -> np.ndarray:
    f = np.asarray(f)
    H = np.asarray(H)
    if H.ndim != 2 or f.ndim != 1 or H.shape[1] != f.shape[0]:
        raise ValueError(f"cascade shape mismatch: H {H.shape}, f {f.shape}")
    return H * f[None, :]


class ChannelModel:
    """Holds the correlation square roots for one configuration."""

    def __init__(self, cfg: ChannelConfig):
        self.cfg = cfg

    @cached_property
    def R_r(self) -> np.ndarray:
        if self.cfg.uncorrelated:
            return np.eye(self.cfg.N)
        return ris_correlation(self.cfg.ris)

    @cached_property
    def R_b(self) -> np.ndarray:
        if self.cfg.uncorrelated:
            return np.eye(self.cfg.M)
        return bs_correlation(self.cfg.correlation)

    @cached_property
    def R_r_sqrt(self) -> np.ndarray:
        return psd_sqrt(self.R_r)

    @cached_property
    def R_b_sqrt(self) -> np.ndarray:
        return psd_sqrt(self.R_b)

    def _steer(self, geom: ArrayGeometry, d: Direction) -> np.ndarray:
        a = array_response(geom, d, paper_literal=self.cfg.paper_literal_response)
        return a * math.sqrt(geom.size) if self.cfg.unit_power_los else a

    def angles(self, rng: np.random.Generator) -> tuple[Direction, Direction, Direction]:
        if self.cfg.fixed_angles is not None:
            return self.cfg.fixed_angles
        return draw_direction(rng), draw_direction(rng), draw_direction(rng)

    def user_ris(self, rng: np.random.Generator, arrival: Direction, innovation=None) -> np.ndarray:
        eta = self.cfg.eta_r
        los = self._steer(self.cfg.ris, arrival).conj()
        f_t = complex_normal(rng, self.cfg.N) if innovation is None else innovation
        nlos = self.R_r_sqrt @ f_t
        return math.sqrt(eta / (eta + 1)) * los + math.sqrt(1 / (eta + 1)) * nlos

    def ris_bs(self, rng: np.random.Generator, departure: Direction, arrival: Direction, innovation=None) -> np.ndarray:
        eta = self.cfg.eta_b
        a_b = self._steer(self.cfg.bs, arrival)
        a_r = self._steer(self.cfg.ris, departure)
        los = np.outer(a_b, a_r.conj())
        H_t = complex_normal(rng, (self.cfg.M, self.cfg.N)) if innovation is None else innovation
        nlos = self.R_b_sqrt @ H_t @ self.R_r_sqrt
        return math.sqrt(eta / (eta + 1)) * los + math.sqrt(1 / (eta + 1)) * nlos

    def direct(self, rng: np.random.Generator, innovation=None) -> np.ndarray:
        b_t = complex_normal(rng, self.cfg.M) if innovation is None else innovation
        return self.R_b_sqrt @ b_t

    def realization(self, index: int, *keys) -> ChannelRealization:
        key = (self.cfg.seed, "channel", *keys, index)
        rng = stream(*key)
        user_arr, ris_dep, bs_arr = self.angles(rng)
        f = self.user_ris(rng, user_arr)
        H = self.ris_bs(rng, ris_dep, bs_arr)
        b = self.direct(rng)
        return ChannelRealization(f, H, b, cascade(f, H), (user_arr, ris_dep, bs_arr), key)

    def cascaded_batch(self, indices, *keys) -> np.ndarray:
        return np.stack([self.realization(i, *keys).G for i in indices])


@lru_cache(maxsize=16)
def model_for(cfg: ChannelConfig) -> ChannelModel:
    return ChannelModel(cfg)


def _draw_angle(cfg: ChannelConfig, rng: np.random.Generator, which: int) -> Direction:
    if cfg.fixed_angles is not None:
        return cfg.fixed_angles[which]
    return draw_direction(rng)


def sample_user_ris(cfg: ChannelConfig, rng: np.random.Generator) -> np.ndarray:
    return model_for(cfg).user_ris(rng, _draw_angle(cfg, rng, 0))


def sample_ris_bs(cfg: ChannelConfig, rng: np.random.Generator) -> np.ndarray:
    dep = _draw_angle(cfg, rng, 1)
    arr = _draw_angle(cfg, rng, 2)
    return model_for(cfg).ris_bs(rng, dep, arr)


def sample_direct(cfg: ChannelConfig, rng: np.random.Generator) -> np.ndarray:
    return model_for(cfg).direct(rng)
