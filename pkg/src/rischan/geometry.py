"""Uniform planar array layout shared by the RIS and the base station.

Elements lie in the YZ plane and are numbered row by row.  Public indices are
1-based; everything below the API boundary is 0-based.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

SPEED_OF_LIGHT = 299_792_458.0
DEFAULT_CARRIER_HZ = 7.8e9


def wavelength_for(carrier_hz: float = DEFAULT_CARRIER_HZ) -> float:
    return SPEED_OF_LIGHT / carrier_hz


@dataclass(frozen=True)
class ArrayGeometry:
    n_h: int
    n_v: int
    d_h: float
    d_v: float
    wavelength: float

    def __post_init__(self):
        if self.n_h < 1 or self.n_v < 1:
            raise ValueError(f"element counts must be >= 1, got {self.n_h}x{self.n_v}")
        if not (self.d_h > 0 and self.d_v > 0 and self.wavelength > 0):
            raise ValueError("spacings and wavelength must be positive")

    @property
    def size(self) -> int:
        return self.n_h * self.n_v

    @classmethod
    def ris(cls, n_h: int, n_v: int, wavelength: float | None = None, spacing: float | None = None):
        """RIS panel; quarter-wavelength spacing unless overridden."""
        lam = wavelength_for() if wavelength is None else wavelength
        d = lam / 4 if spacing is None else spacing
        return cls(n_h, n_v, d, d, lam)

    @classmethod
    def bs(cls, n_h: int, n_v: int, wavelength: float | None = None, spacing: float | None = None):
        """Base-station UPA; half-wavelength spacing unless overridden."""
        lam = wavelength_for() if wavelength is None else wavelength
        d = lam / 2 if spacing is None else spacing
        return cls(n_h, n_v, d, d, lam)


@dataclass(frozen=True)
class Direction:
    azimuth: float
    elevation: float

    def __post_init__(self):
        half = math.pi / 2
        for name in ("azimuth", "elevation"):
            v = getattr(self, name)
            if not (-half - 1e-12 <= v <= half + 1e-12):
                raise ValueError(f"{name}={v} outside [-pi/2, pi/2]")


def grid_indices(geom: ArrayGeometry) -> tuple[np.ndarray, np.ndarray]:
    """Horizontal and vertical grid indices (alpha, gamma) for all elements."""
    k = np.arange(geom.size)
    return k % geom.n_h, k // geom.n_h


def element_position(geom: ArrayGeometry, n: int) -> np.ndarray:
    if not 1 <= n <= geom.size:
        raise IndexError(f"element index {n} outside 1..{geom.size}")
    alpha = (n - 1) % geom.n_h
    gamma = (n - 1) // geom.n_h
    return np.array([0.0, alpha * geom.d_h, gamma * geom.d_v])


def element_positions(geom: ArrayGeometry) -> np.ndarray:
    """All positions as a (size, 3) array, row n-1 holding element n."""
    alpha, gamma = grid_indices(geom)
    pos = np.zeros((geom.size, 3))
    pos[:, 1] = alpha * geom.d_h
    pos[:, 2] = gamma * geom.d_v
    return pos


def wave_vector(direction: Direction, wavelength: float) -> np.ndarray:
    phi, psi = direction.azimuth, direction.elevation
    return (2 * math.pi / wavelength) * np.array(
        [math.cos(psi) * math.cos(phi), math.cos(psi) * math.sin(phi), math.sin(psi)]
    )


def array_response(geom: ArrayGeometry, direction: Direction, paper_literal: bool = False) -> np.ndarray:
    """Normalized steering vector, entries exp(j w.d_n) / sqrt(size).

    With ``paper_literal`` the vertical phase uses sin(azimuth) instead of
    sin(elevation), reproducing the printed RIS/BS response formula.
    """
    alpha, gamma = grid_indices(geom)
    if paper_literal:
        k = 2 * math.pi / geom.wavelength
        phi, psi = direction.azimuth, direction.elevation
        phase = k * (alpha * math.cos(psi) * math.sin(phi) * geom.d_h + gamma * math.sin(phi) * geom.d_v)
    else:
        phase = element_positions(geom) @ wave_vector(direction, geom.wavelength)
    return np.exp(1j * phase) / math.sqrt(geom.size)


def draw_direction(rng: np.random.Generator) -> Direction:
    half = math.pi / 2
    return Direction(float(rng.uniform(-half, half)), float(rng.uniform(-half, half)))
