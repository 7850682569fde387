"""Evaluation metrics and latency models.

NMSE is implemented with unsquared Frobenius norms, exactly as the ratio is
printed in the receiver spec; the conventional squared variant sits behind a
flag.  Device matching is for evaluation only: estimated sequences are an
unordered set, so they are aligned to true devices by minimum-cost bipartite
matching before token errors are counted.
"""

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from .source import TokenBatch


@dataclass
class DeviceMatching:
    """Bijection from estimated-sequence index to true device index."""

    permutation: dict

    def __post_init__(self):
        k = len(self.permutation)
        if set(self.permutation.keys()) != set(range(k)) or \
                set(self.permutation.values()) != set(range(k)):
            raise ValueError("permutation must be a bijection on 0..K-1")

    def __getitem__(self, est_index: int) -> int:
        return self.permutation[est_index]


@dataclass
class LatencyModel:
    bandwidth_hz: float = 1e7
    ber: float = 1e-3
    snr_linear: float = 316.22776601683796  # 25 dB

    def __post_init__(self):
        if self.bandwidth_hz <= 0:
            raise ValueError("bandwidth must be positive")
        if not 0 < self.ber < 0.2:
            raise ValueError("ber must be in (0, 0.2)")
        if self.snr_linear <= 0:
            raise ValueError("snr must be positive")


@dataclass
class MetricsRecord:
    """One trial's results; field names match the results.csv columns."""

    trial: int
    K: int
    L: int
    M: int
    Q: int
    N: int
    snr_db: float
    tder: float
    nmse_db: float
    ter_todma: float
    ter_nonorth: float
    ter_orth: float
    latency_todma_s: float
    latency_orth_s: float
    seed: int
    config: dict = field(default_factory=dict, repr=False)
    deviations: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        for name in ("tder", "ter_todma", "ter_nonorth", "ter_orth"):
            val = getattr(self, name)
            if not 0 <= val <= 1:
                raise ValueError(f"{name}={val} outside [0,1]")
        if self.latency_todma_s <= 0 or self.latency_orth_s <= 0:
            raise ValueError("latencies must be positive")


def match_devices(centroids, true_channels) -> DeviceMatching:
    """Hungarian matching of cluster centroids to true channel vectors."""
    centroids = np.asarray(centroids, dtype=complex)
    true_vecs = np.array([ch.coefficients for ch in true_channels])
    if len(centroids) != len(true_vecs):
        raise ValueError("centroid and channel counts differ")
    cost = np.linalg.norm(centroids[:, None, :] - true_vecs[None, :, :], axis=2)
    rows, cols = linear_sum_assignment(cost)
    return DeviceMatching(permutation={int(i): int(j) for i, j in zip(rows, cols)})


def match_devices_by_ter(est_sequences: list, batch: TokenBatch) -> DeviceMatching:
    """Matching that minimizes total token errors directly; used when
    clustering is bypassed and no centroids exist."""
    k = len(est_sequences)
    if k != batch.K:
        raise ValueError("sequence count != device count")
    est = np.asarray(est_sequences)
    true = np.asarray(batch.sequences)
    cost = np.array([[np.sum(est[i] != true[j]) for j in range(k)] for i in range(k)])
    rows, cols = linear_sum_assignment(cost)
    return DeviceMatching(permutation={int(i): int(j) for i, j in zip(rows, cols)})


def nmse(H_hat: list, H_true: list, squared: bool = False) -> float:
    """Channel estimation error in dB: 10*log10 of the slot-averaged ratio
    ||H_hat - H||_F / ||H||_F (unsquared as printed; squared=True gives the
    conventional power ratio)."""
    if len(H_hat) != len(H_true) or not H_true:
        raise ValueError("need equally many estimated and true matrices")
    ratios = []
    for He, Ht in zip(H_hat, H_true):
        He = np.asarray(He)
        Ht = np.asarray(Ht)
        if He.shape != Ht.shape:
            raise ValueError("shape mismatch between estimate and truth")
        denom = np.linalg.norm(Ht)
        if denom == 0:
            raise ValueError("zero-norm ground-truth channel matrix")
        r = np.linalg.norm(He - Ht) / denom
        ratios.append(r * r if squared else r)
    return float(10.0 * np.log10(np.mean(ratios)))


def tder(P_hat: list, P_true: list, K: int) -> float:
    """Token detection error rate: symmetric-difference count averaged over
    slots, normalized by K."""
    if len(P_hat) != len(P_true) or not P_true:
        raise ValueError("need equally many detected and true sets")
    if K < 1:
        raise ValueError("K must be positive")
    total = sum(len(set(ph) ^ set(pt)) for ph, pt in zip(P_hat, P_true))
    return total / (len(P_true) * K)


def ter(filled_sequences: list, batch: TokenBatch, matching: DeviceMatching) -> float:
    """Token error rate: fraction of wrong tokens after device matching.
    Each wrong one-hot column differs in two entries, so the l0/(2NK) form
    reduces to this fraction."""
    if len(filled_sequences) != batch.K:
        raise ValueError("sequence count != device count")
    wrong = 0
    for i, seq in enumerate(filled_sequences):
        if len(seq) != batch.N:
            raise ValueError(f"sequence {i} has wrong length")
        true_seq = batch.sequences[matching[i]]
        for a, b in zip(seq, true_seq):
            if a is None or a < 0:
                raise ValueError(f"sequence {i} has an unfilled position")
            wrong += a != b
    return wrong / (batch.N * batch.K)


def latency_todma(L: int, N: int, bandwidth_hz: float = 1e7) -> float:
    """Frame airtime: L*N symbols over bandwidth B."""
    if bandwidth_hz <= 0:
        raise ValueError("bandwidth must be positive")
    if L < 1 or N < 1:
        raise ValueError("L and N must be positive")
    return L * N / bandwidth_hz


def _bits_per_token(Q: int) -> int:
    bits = math.ceil(math.log2(Q))
    return max(bits, 1)


def latency_orth(K: int, N: int, Q: int, lm: LatencyModel) -> float:
    """Orthogonal baseline airtime: K*N tokens of log2(Q) bits at the
    adaptive-QAM rate R = B*log2(1 + 1.5/(-ln(5*ber)) * SNR).  ber=0 is the
    error-free quality idealization and has no finite rate here."""
    if K < 1 or N < 1 or Q < 2:
        raise ValueError("K, N must be positive and Q >= 2")
    if lm.ber <= 0:
        raise ValueError("ber must be positive (the rate formula degenerates at 0)")
    rate = lm.bandwidth_hz * math.log2(1.0 + (1.5 / (-math.log(5.0 * lm.ber))) * lm.snr_linear)
    return K * N * _bits_per_token(Q) / rate


def orth_token_errors(batch: TokenBatch, ber: float, rng: np.random.Generator) -> TokenBatch:
    """Corrupt a batch the way the orthogonal baseline would: each token
    flips with probability 1 - (1-ber)^bits and lands uniformly on one of
    the other Q-1 ids."""
    if not 0 <= ber <= 1:
        raise ValueError("ber must be in [0,1]")
    if ber == 0:
        return TokenBatch(Q=batch.Q, N=batch.N,
                          sequences=[list(seq) for seq in batch.sequences])
    p_tok = 1.0 - (1.0 - ber) ** _bits_per_token(batch.Q)
    out = []
    for seq in batch.sequences:
        new = list(seq)
        for n in range(batch.N):
            if rng.random() < p_tok:
                shift = int(rng.integers(1, batch.Q))
                new[n] = (new[n] + shift) % batch.Q
        out.append(new)
    return TokenBatch(Q=batch.Q, N=batch.N, sequences=out)
