"""RIS phase schedules, pilot observation model, and the classical cascaded-channel estimators."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .channel import ChannelRealization
from .rng import complex_normal

NMSE_DB_FLOOR = -300.0


class SingularScheduleError(ValueError):
    pass


@dataclass(frozen=True)
class PhaseSchedule:
    S: np.ndarray
    mode: str

    @property
    def N(self) -> int:
        return self.S.shape[0]

    @property
    def L(self) -> int:
        return self.S.shape[1]


@dataclass(frozen=True)
class PilotConfig:
    snr_db: float
    K: int = 1
    P: float = 1.0
    u: int | None = None

    def __post_init__(self):
        if self.K < 1 or self.P <= 0:
            raise ValueError("need K >= 1 and P > 0")
        if self.u is not None and self.u < self.K:
            raise ValueError(f"pilot length u={self.u} shorter than user count K={self.K}")

    @property
    def length(self) -> int:
        return self.K if self.u is None else self.u

    @property
    def sigma_v2(self) -> float:
        return noise_variance(self.snr_db)


@dataclass
class ReceivedPilots:
    Y: np.ndarray
    sigma_v2: float


def noise_variance(snr_db: float) -> float:
    """Post-despreading noise variance for unit-power channels."""
    if math.isinf(snr_db) and snr_db > 0:
        return 0.0
    return 10.0 ** (-snr_db / 10.0)


def dft_schedule(N: int, L: int) -> PhaseSchedule:
    if N < 1 or L < N:
        raise SingularScheduleError(f"DFT schedule needs L >= N >= 1, got N={N}, L={L}")
    n = np.arange(1, N + 1)[:, None]
    l = np.arange(L)[None, :]
    # reduce the exponent mod L before exponentiating to keep the phases exact
    S = np.exp(2j * np.pi * ((n * l) % L) / L)
    return PhaseSchedule(S, "dft")


def binary_schedule(N: int) -> PhaseSchedule:
    if N < 1:
        raise ValueError("N must be >= 1")
    return PhaseSchedule(np.eye(N, dtype=complex), "binary")


def simulate_pilots(
    real: ChannelRealization,
    sched: PhaseSchedule,
    pilots: PilotConfig,
    rng: np.random.Generator,
    include_direct: bool = False,
    sigma_v2: float | None = None,
) -> ReceivedPilots:
    """Despread observation Y = [b 1^T] + G S + V for one user."""
    s2 = pilots.sigma_v2 if sigma_v2 is None else sigma_v2
    G = real.G
    if G.shape[1] != sched.N:
        raise ValueError(f"channel has {G.shape[1]} RIS elements, schedule has {sched.N}")
    Y = G @ sched.S
    if include_direct:
        Y = Y + real.b[:, None]
    if s2 > 0:
        Y = Y + complex_normal(rng, Y.shape, s2)
    return ReceivedPilots(Y, s2)


def orthogonal_pilots(K: int, u: int, P: float = 1.0) -> np.ndarray:
    """K x u matrix of DFT pilot rows with x_k^H x_k = P u and x_j^H x_k = 0."""
    if u < K:
        raise ValueError("pilot length must be >= number of users")
    t = np.arange(u)
    return math.sqrt(P) * np.exp(2j * np.pi * np.outer(np.arange(K), t) / u)


def simulate_multiuser(
    reals: list[ChannelRealization],
    sched: PhaseSchedule,
    pilots: PilotConfig,
    rng: np.random.Generator,
    sigma2: float,
    include_direct: bool = True,
) -> list[ReceivedPilots]:
    """Explicit per-subframe reception and despreading for K users.

    ``sigma2`` is the per-symbol receiver noise variance; after despreading the
    effective variance is sigma2 / (P u).
    """
    K = len(reals)
    u = max(pilots.length, K)
    X = orthogonal_pilots(K, u, pilots.P)
    M = reals[0].G.shape[0]
    out = [np.empty((M, sched.L), dtype=complex) for _ in range(K)]
    for l in range(sched.L):
        theta = sched.S[:, l]
        rx = np.zeros((M, u), dtype=complex)
        for k, r in enumerate(reals):
            y = r.G @ theta
            if include_direct:
                y = y + r.b
            rx += np.outer(y, X[k].conj())
        if sigma2 > 0:
            rx += complex_normal(rng, rx.shape, sigma2)
        for k in range(K):
            out[k][:, l] = rx @ X[k] / (pilots.P * u)
    return [ReceivedPilots(Y, sigma2 / (pilots.P * u)) for Y in out]


def estimate_direct(b: np.ndarray, sigma_v2: float, J: int, rng: np.random.Generator) -> np.ndarray:
    """Average of J RIS-off observations b + v (LS for a vector channel)."""
    if J < 1:
        raise ValueError("need at least one RIS-off subframe")
    if sigma_v2 == 0:
        return b.copy()
    return b + complex_normal(rng, (J, b.shape[0]), sigma_v2).mean(axis=0)


def ls_estimate(Y: ReceivedPilots | np.ndarray, sched: PhaseSchedule) -> np.ndarray:
    Y = Y.Y if isinstance(Y, ReceivedPilots) else Y
    S = sched.S
    gram = S @ S.conj().T
    if np.linalg.matrix_rank(gram) < sched.N:
        raise SingularScheduleError("S S^H is rank deficient")
    if sched.mode == "dft":
        return Y @ S.conj().T / sched.L
    return Y @ S.conj().T @ np.linalg.inv(gram)


def sample_R_G(G_stack: np.ndarray) -> np.ndarray:
    """Sample estimate of E[G^H G] over a stack of (T, M, N) channels."""
    G_stack = np.asarray(G_stack)
    R = np.einsum("tmi,tmj->ij", G_stack.conj(), G_stack) / G_stack.shape[0]
    return 0.5 * (R + R.conj().T)


def lmmse_matrix(sched: PhaseSchedule, R_G: np.ndarray, M: int, sigma_v2: float, no_m_factor: bool = False) -> np.ndarray:
    """L x N filter W such that the estimate is Y @ W."""
    R_G = np.asarray(R_G)
    N = sched.N
    if R_G.shape != (N, N):
        raise ValueError(f"R_G must be {N}x{N}, got {R_G.shape}")
    if not np.allclose(R_G, R_G.conj().T, atol=1e-10 * max(1.0, np.abs(R_G).max())):
        raise ValueError("R_G is not Hermitian")
    S = sched.S
    reg = (1.0 if no_m_factor else M) * sigma_v2
    A = S.conj().T @ R_G @ S + reg * np.eye(sched.L)
    return np.linalg.solve(A, S.conj().T @ R_G)


def lmmse_estimate(
    Y: ReceivedPilots,
    sched: PhaseSchedule,
    R_G: np.ndarray,
    M: int,
    no_m_factor: bool = False,
) -> np.ndarray:
    return Y.Y @ lmmse_matrix(sched, R_G, M, Y.sigma_v2, no_m_factor)


def blmmse_estimate(
    real: ChannelRealization,
    pilots: PilotConfig,
    rng: np.random.Generator,
    R_G: np.ndarray,
    no_m_factor: bool = False,
) -> np.ndarray:
    """Binary on/off reflection (one element per subframe) followed by LMMSE."""
    sched = binary_schedule(real.G.shape[1])
    Y = simulate_pilots(real, sched, pilots, rng)
    return lmmse_estimate(Y, sched, R_G, real.G.shape[0], no_m_factor)


def nmse(G_hat: np.ndarray, G: np.ndarray) -> float:
    G_hat = np.asarray(G_hat)
    G = np.asarray(G)
    if G_hat.shape != G.shape:
        raise ValueError(f"shape mismatch {G_hat.shape} vs {G.shape}")
    ref = float(np.sum(np.abs(G) ** 2))
    if ref == 0:
        raise ValueError("reference channel has zero norm")
    return float(np.sum(np.abs(G - G_hat) ** 2)) / ref


def to_db(x: float, floor: float = NMSE_DB_FLOOR) -> float:
    if x <= 0:
        return floor
    return max(10.0 * math.log10(x), floor)


def nmse_db(G_hat: np.ndarray, G: np.ndarray) -> float:
    return to_db(nmse(G_hat, G))


def batch_nmse(G_hat: np.ndarray, G: np.ndarray) -> float:
    """Mean of per-sample NMSE ratios over the leading axis."""
    G_hat = np.asarray(G_hat)
    G = np.asarray(G)
    if G_hat.shape != G.shape:
        raise ValueError(f"shape mismatch {G_hat.shape} vs {G.shape}")
    axes = tuple(range(1, G.ndim))
    ref = np.sum(np.abs(G) ** 2, axis=axes)
    if np.any(ref == 0):
        raise ValueError("reference channel has zero norm")
    return float(np.mean(np.sum(np.abs(G - G_hat) ** 2, axis=axes) / ref))
