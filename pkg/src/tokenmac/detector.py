"""Per-slot active-token detection.

Each received slot Y = U H + Z is an underdetermined MMV problem in the
row-sparse H.  We run AMP with a spike-and-slab prior on the rows, learn the
per-token sparsity ratios gamma by EM inside the loop, and threshold gamma to
get the active token set.  All message arrays live at full Q x M resolution;
the per-iteration cost is a handful of L x Q x M matmuls.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

_EPS = 1e-12


@dataclass
class DetectorConfig:
    T0: int = 30
    Th_r: float = 0.5
    damping: float = 0.0
    early_stop_tol: float = 1e-6
    gamma_init: float = 0.5
    known_k: int = None  # when set, pick the K largest gamma instead of thresholding

    def __post_init__(self):
        if not 0 < self.Th_r < 1:
            raise ValueError("Th_r must be in (0,1)")
        if not 0 <= self.damping < 1:
            raise ValueError("damping must be in [0,1)")
        if self.T0 < 1:
            raise ValueError("T0 must be >= 1")
        if not 0 < self.gamma_init < 1:
            raise ValueError("gamma_init must be in (0,1)")


@dataclass
class AmpState:
    """Message state after the final AMP iteration (all arrays dense)."""

    t: int
    h_hat: np.ndarray   # Q x M posterior means
    v: np.ndarray       # Q x M posterior variances
    Z: np.ndarray       # L x M Onsager-corrected fits
    V: np.ndarray       # L x M fit variances
    Sigma: np.ndarray   # Q x M pseudo-observation variances
    R: np.ndarray       # Q x M pseudo-observations
    pi: np.ndarray      # Q x M activity indicators
    gamma: np.ndarray   # length-Q sparsity ratios


@dataclass
class DetectionOutput:
    active_set: set
    csi: dict           # token id -> estimated M-vector
    h_hat_full: np.ndarray
    gamma: np.ndarray

    def __post_init__(self):
        if set(self.csi.keys()) != self.active_set:
            raise ValueError("csi keys must equal active_set")

    @property
    def is_empty(self) -> bool:
        return len(self.active_set) == 0


def denoiser_moments(R, Sigma, gamma):
    """Spike-and-slab posterior moments, elementwise with broadcasting.

    Returns (pi, mu, tau, h_hat, v) where mu, tau are the slab posterior
    mean and variance, pi the activity indicator, and h_hat = pi * mu,
    v = pi * (|mu|^2 + tau) - |h_hat|^2 computed in the stable product form.
    """
    R = np.asarray(R, dtype=complex)
    Sigma = np.asarray(Sigma, dtype=float)
    gamma = np.asarray(gamma, dtype=float)
    if np.any(Sigma <= 0):
        raise ValueError("Sigma must be positive")
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        mu = R / (1.0 + Sigma)
        tau = Sigma / (1.0 + Sigma)
        abs_r2 = np.abs(R) ** 2
        # log-likelihood ratio of slab vs spike; pi = sigmoid(L + logit(gamma))
        llr = np.log(tau) + abs_r2 * (1.0 / Sigma - 1.0 / (1.0 + Sigma))
        logit_gamma = np.log(gamma) - np.log1p(-gamma)
        pi = expit(llr + logit_gamma)
        pi = np.where(gamma == 0.0, 0.0, pi)
        pi = np.where(gamma == 1.0, 1.0, pi)
        h_hat = pi * mu
        abs_mu2 = np.abs(mu) ** 2
        v = pi * (1.0 - pi) * abs_mu2 + pi * tau
    return pi, mu, tau, h_hat, v


def em_update_gamma(pi_row) -> float:
    """EM refresh of one token's sparsity ratio: the mean of its activity
    indicators across antennas."""
    pi_row = np.asarray(pi_row, dtype=float)
    if pi_row.size == 0:
        raise ValueError("empty activity row")
    if np.any(pi_row < 0) or np.any(pi_row > 1):
        raise ValueError("activity indicators must lie in [0,1]")
    return float(pi_row.mean())


def amp_iterate(Y, cb, noise_variance: float, cfg: DetectorConfig = None) -> AmpState:
    """Run the AMP loop on one slot matrix Y (L x M).

    Per iteration: fit variances V, Onsager-corrected fit Z, then the
    variable-side Sigma and pseudo-observation R, the spike-and-slab
    denoiser, and the EM update of gamma.  Stops after cfg.T0 iterations or
    once both the relative change of h_hat and the change of gamma fall
    below cfg.early_stop_tol.
    """
    if cfg is None:
        cfg = DetectorConfig()
    Y = np.asarray(Y, dtype=complex)
    U = cb.entries
    L, Q = U.shape
    if Y.ndim != 2 or Y.shape[0] != L:
        raise ValueError(f"Y shape {Y.shape} inconsistent with codebook L={L}")
    if noise_variance <= 0:
        raise ValueError("noise variance must be > 0 (known at the receiver)")
    M = Y.shape[1]

    absU2 = np.abs(U) ** 2          # L x Q
    Uh = U.conj().T                 # Q x L

    h_hat = np.zeros((Q, M), dtype=complex)
    v = np.ones((Q, M))
    Z_prev = Y.copy()
    V_prev = np.ones((L, M))
    gamma = np.full(Q, cfg.gamma_init)
    rho = cfg.damping

    pi = Sigma = R = V = Z = None
    for t in range(1, cfg.T0 + 1):
        V = absU2 @ v
        denom_prev = np.maximum(noise_variance + V_prev, _EPS)
        Z = U @ h_hat - (V / denom_prev) * (Y - Z_prev)
        denom = np.maximum(noise_variance + V, _EPS)
        Sigma = 1.0 / np.maximum(absU2.T @ (1.0 / denom), _EPS)
        R = h_hat + Sigma * (Uh @ ((Y - Z) / denom))

        pi, _, _, h_new, v_new = denoiser_moments(R, Sigma, gamma[:, None])
        if rho > 0:
            h_new = (1.0 - rho) * h_new + rho * h_hat
            v_new = (1.0 - rho) * v_new + rho * v

        gamma_new = pi.mean(axis=1)

        for name, arr in (("h_hat", h_new), ("v", v_new), ("Z", Z), ("V", V),
                          ("Sigma", Sigma), ("R", R), ("pi", pi), ("gamma", gamma_new)):
            if not np.all(np.isfinite(arr)):
                raise FloatingPointError(f"non-finite {name} at AMP iteration {t}")
        assert np.all(v_new >= 0)
        assert np.all((pi >= 0) & (pi <= 1))
        assert np.all((gamma_new >= 0) & (gamma_new <= 1))

        h_delta = np.linalg.norm(h_new - h_hat)
        h_scale = np.linalg.norm(h_new)
        g_delta = np.max(np.abs(gamma_new - gamma))
        h_hat, v, gamma = h_new, v_new, gamma_new
        Z_prev, V_prev = Z, V
        if cfg.early_stop_tol > 0 and t > 1:
            if h_delta <= cfg.early_stop_tol * max(h_scale, _EPS) and g_delta <= cfg.early_stop_tol:
                break

    return AmpState(t=t, h_hat=h_hat, v=v, Z=Z, V=V, Sigma=Sigma, R=R,
                    pi=pi, gamma=gamma)


def detect_tokens(state: AmpState, Th_r: float = 0.5, known_k: int = None) -> DetectionOutput:
    """Threshold the learned sparsity ratios: active iff gamma > Th_r
    (strict).  With known_k set, take the k largest gamma instead."""
    gamma = state.gamma
    if known_k is not None:
        if not 1 <= known_k <= len(gamma):
            raise ValueError("known_k outside [1, Q]")
        order = np.argsort(gamma, kind="stable")[::-1]
        active = {int(q) for q in order[:known_k]}
    else:
        if not 0 < Th_r < 1:
            raise ValueError("Th_r must be in (0,1)")
        active = {int(q) for q in np.flatnonzero(gamma > Th_r)}
    csi = {q: state.h_hat[q].copy() for q in active}
    return DetectionOutput(active_set=active, csi=csi,
                           h_hat_full=state.h_hat, gamma=gamma)
