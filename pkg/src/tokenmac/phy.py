"""Transmitter and multiple-access channel.

Every active device modulates its token onto a column of a shared complex
Gaussian codebook; the receiver sees the superposition through slow Rayleigh
fading plus AWGN,

    Y_n = U H_n + Z_n,

with H_n the row-sparse equivalent channel (row q collects the channels of
all devices sending token q in slot n).
"""

from dataclasses import dataclass, field

import numpy as np

from .source import TokenBatch


def _cn(rng: np.random.Generator, shape, variance: float = 1.0) -> np.ndarray:
    """i.i.d. circularly-symmetric complex Gaussians, total variance per entry."""
    scale = np.sqrt(variance / 2.0)
    return scale * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))


@dataclass
class ModulationCodebook:
    """Shared modulation codebook U of shape L x Q; column q is the codeword
    for token q."""

    L: int
    Q: int
    entries: np.ndarray

    def __post_init__(self):
        if self.L < 1 or self.Q < 1:
            raise ValueError("codebook dimensions must be positive")
        self.entries = np.asarray(self.entries, dtype=complex)
        if self.entries.shape != (self.L, self.Q):
            raise ValueError(f"entries shape {self.entries.shape} != (L={self.L}, Q={self.Q})")
        if not np.all(np.isfinite(self.entries)):
            raise ValueError("codebook has non-finite entries")


@dataclass
class DeviceChannel:
    """One device's length-M channel vector, constant over the frame."""

    coefficients: np.ndarray

    def __post_init__(self):
        self.coefficients = np.asarray(self.coefficients, dtype=complex).reshape(-1)
        if not np.all(np.isfinite(self.coefficients)):
            raise ValueError("channel has non-finite entries")

    @property
    def M(self) -> int:
        return len(self.coefficients)


@dataclass
class EquivalentChannel:
    """Nonzero rows of H_n for one slot: token id -> summed channel vector.
    Rows not present are zero."""

    slot: int
    rows: dict

    def dense(self, Q: int, M: int) -> np.ndarray:
        H = np.zeros((Q, M), dtype=complex)
        for q, h in self.rows.items():
            H[q] = h
        return H


@dataclass
class ReceivedFrame:
    """All N received slot matrices plus the noise bookkeeping."""

    slots: list
    noise_variance: float
    snr_db: float

    @property
    def N(self) -> int:
        return len(self.slots)


@dataclass
class SimConfig:
    K_T: int
    K: int
    M: int
    L: int
    Q: int
    N: int
    snr_db: float
    seed: int = 0

    def __post_init__(self):
        if not 1 <= self.K <= self.K_T:
            raise ValueError("need 1 <= K <= K_T")
        if self.L < 1 or self.M < 1 or self.N < 1:
            raise ValueError("L, M, N must be positive")
        if self.Q <= self.K:
            raise ValueError("need Q > K (sparse regime)")

    @property
    def noise_variance(self) -> float:
        # SNR := 1/sigma^2; unit-power codebook and channels
        return 10.0 ** (-self.snr_db / 10.0)


def gen_codebook(L: int, Q: int, rng: np.random.Generator) -> ModulationCodebook:
    """Sample U with i.i.d. CN(0,1) entries (columns are not normalized)."""
    if L < 1 or Q < 1:
        raise ValueError("codebook dimensions must be positive")
    return ModulationCodebook(L=L, Q=Q, entries=_cn(rng, (L, Q)))


def modulate(cb: ModulationCodebook, token: int) -> np.ndarray:
    """Codeword for one token: column `token` of U."""
    if not 0 <= token < cb.Q:
        raise ValueError(f"token {token} outside [0, {cb.Q})")
    return cb.entries[:, token]


def gen_channels(K: int, M: int, rng: np.random.Generator) -> list:
    """K i.i.d. Rayleigh channel vectors, CN(0,1) per antenna."""
    if K < 1 or M < 1:
        raise ValueError("K and M must be positive")
    return [DeviceChannel(coefficients=_cn(rng, M)) for _ in range(K)]


def equivalent_channel(batch: TokenBatch, channels: list, n: int) -> EquivalentChannel:
    """Row-sparse H_n: row q sums the channels of all devices sending token q
    in slot n, so collisions add coherently."""
    if not 0 <= n < batch.N:
        raise ValueError(f"slot {n} outside [0, {batch.N})")
    if len(channels) != batch.K:
        raise ValueError("one channel per device required")
    rows: dict = {}
    for seq, ch in zip(batch.sequences, channels):
        q = seq[n]
        if q in rows:
            rows[q] = rows[q] + ch.coefficients
        else:
            rows[q] = ch.coefficients.copy()
    return EquivalentChannel(slot=n, rows=rows)


def transmit_frame(cb: ModulationCodebook, batch: TokenBatch, channels: list,
                   noise_variance: float, rng: np.random.Generator) -> ReceivedFrame:
    """Superpose all devices' modulated tokens through their channels and add
    AWGN: Y_n = U H_n + Z_n for every slot."""
    if cb.Q != batch.Q:
        raise ValueError("codebook and batch disagree on Q")
    if len(channels) != batch.K:
        raise ValueError("one channel per device required")
    if noise_variance < 0:
        raise ValueError("noise variance must be >= 0")
    M = channels[0].M
    if any(ch.M != M for ch in channels):
        raise ValueError("all channels must have the same antenna count")

    slots = []
    for n in range(batch.N):
        Y = np.zeros((cb.L, M), dtype=complex)
        for seq, ch in zip(batch.sequences, channels):
            Y += np.outer(cb.entries[:, seq[n]], ch.coefficients)
        if noise_variance > 0:
            Y += _cn(rng, (cb.L, M), noise_variance)
        slots.append(Y)
    snr_db = float("inf") if noise_variance == 0 else -10.0 * np.log10(noise_variance)
    return ReceivedFrame(slots=slots, noise_variance=noise_variance, snr_db=snr_db)
