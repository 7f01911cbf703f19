"""Spatial correlation matrices for the RIS (Bessel law) and BS (exponential Kronecker)."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geometry import ArrayGeometry, element_positions

# Series is accurate to ~2e-13 below this point, the Hankel expansion above it.
BESSEL_SPLIT = 12.0
_MAX_SERIES_TERMS = 80


class NotPSDError(ValueError):
    """Raised when a correlation matrix has a clearly negative eigenvalue."""


def _j0_series(x: float) -> float:
    q = 0.25 * x * x
    term = 1.0
    total = 1.0
    for k in range(1, _MAX_SERIES_TERMS):
        term *= -q / (k * k)
        total += term
        if abs(term) < 1e-18 and k > x:
            break
    return total


def _j0_hankel(x: float) -> float:
    # Terms a_k = prod (-(2i-1)^2) / (i * 8x); truncate at the smallest one.
    z = 8.0 * x
    p = q = 0.0
    a = 1.0
    prev = math.inf
    for k in range(60):
        if k:
            a *= -((2 * k - 1) ** 2) / (k * z)
        if abs(a) >= prev:
            break
        prev = abs(a)
        sign = -1.0 if (k // 2) % 2 else 1.0
        if k % 2 == 0:
            p += sign * a
        else:
            q += sign * a
    w = x - math.pi / 4
    return math.sqrt(2.0 / (math.pi * x)) * (p * math.cos(w) - q * math.sin(w))


def bessel_j0(x: float) -> float:
    """Zero-order Bessel function of the first kind for x >= 0."""
    x = float(x)
    if math.isnan(x):
        raise ValueError("bessel_j0 got NaN")
    x = abs(x)
    if x < BESSEL_SPLIT:
        return _j0_series(x)
    return _j0_hankel(x)


_j0_vec = np.vectorize(bessel_j0, otypes=[float])


def bessel_j0_array(x) -> np.ndarray:
    return _j0_vec(np.asarray(x, dtype=float))


@dataclass(frozen=True)
class CorrelationConfig:
    rho: float
    ris: ArrayGeometry
    bs: ArrayGeometry

    def __post_init__(self):
        if not 0.0 <= self.rho < 1.0:
            raise ValueError(f"rho must lie in [0, 1), got {self.rho}")


def ris_correlation(geom: ArrayGeometry) -> np.ndarray:
    """R[n, n'] = J0(2 pi / lambda * |d_n - d_n'|), real symmetric."""
    pos = element_positions(geom)
    dist = np.linalg.norm(pos[:, None, :] - pos[None, :, :], axis=-1)
    # many pairs share a distance; evaluate J0 once per unique value
    scaled = np.round(2 * math.pi / geom.wavelength * dist, 12)
    uniq, inv = np.unique(scaled, return_inverse=True)
    r = bessel_j0_array(uniq)[inv].reshape(dist.shape)
    r = 0.5 * (r + r.T)
    np.fill_diagonal(r, 1.0)
    return r


def exponential_correlation(n: int, rho: float) -> np.ndarray:
    idx = np.arange(n)
    return rho ** np.abs(idx[:, None] - idx[None, :]).astype(float)


def bs_correlation(cfg: CorrelationConfig) -> np.ndarray:
    """Kronecker product of horizontal and vertical exponential Toeplitz factors."""
    if not 0.0 <= cfg.rho < 1.0:
        raise ValueError(f"rho must lie in [0, 1), got {cfg.rho}")
    r_h = exponential_correlation(cfg.bs.n_h, cfg.rho)
    r_v = exponential_correlation(cfg.bs.n_v, cfg.rho)
    return np.kron(r_h, r_v)


def psd_sqrt(r: np.ndarray, tol: float = 1e-6) -> np.ndarray:
    """Hermitian square root via eigendecomposition with eigenvalues clipped at 0."""
    r = np.asarray(r)
    w, u = np.linalg.eigh(r)
    if w.min() < -tol:
        raise NotPSDError(f"minimum eigenvalue {w.min():.3e} below -{tol:g}")
    root = (u * np.sqrt(np.clip(w, 0.0, None))) @ u.conj().T
    return 0.5 * (root + root.conj().T)


def numerical_same_row_correlation(separation: float, wavelength: float, n_grid: int = 400) -> float:
    """Midpoint-rule double integral of the angular average for a horizontal offset.

    Averages exp(j k cos(psi) sin(phi) s) over (phi, psi) uniform on
    [-pi/2, pi/2]^2.  Used only as an informational cross-check of the
    closed form, which drops the cos(psi) factor.
    """
    k = 2 * math.pi / wavelength
    g = (np.arange(n_grid) + 0.5) / n_grid * math.pi - math.pi / 2
    phi, psi = np.meshgrid(g, g, indexing="ij")
    return float(np.mean(np.cos(k * np.cos(psi) * np.sin(phi) * separation)))
