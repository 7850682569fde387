"""Token-to-device assignment.

Detected tokens carry an estimated channel vector each; since a device's
channel is constant over the frame, clustering all per-slot CSI estimates
into K groups ties tokens to devices.  Low-confidence cells (CSI far from
its centroid, by the reciprocal-distance score) are cleared and handed to
the predictor as masked positions with a per-slot candidate token set; a
slot whose candidate set is a single token is resolved on the spot, which
is exactly the collision case.
"""

from dataclasses import dataclass, field

import numpy as np


@dataclass
class ClusterModel:
    K: int
    centroids: np.ndarray        # K x M complex
    membership: dict             # (slot, token) -> cluster id
    inertia: float               # total unsquared within-cluster distance


@dataclass
class AssignmentState:
    """Mutable assignment of tokens to the K device rows over N slots.

    B_hat holds token ids with -1 for an empty (masked) cell; D is the
    Eq.-style reciprocal-distance score (0 for empty cells, inf for an exact
    centroid hit); distances mirrors D in the distance domain (inf for empty
    cells).  candidates maps slot -> candidate token set for slots left with
    more than one doubtful token.
    """

    B_hat: np.ndarray
    D: np.ndarray
    distances: np.ndarray
    candidates: dict
    Th_s: float = 0.0
    demoted: dict = field(default_factory=dict)   # slot -> tokens bumped by conflict tie-break
    csi: dict = field(default_factory=dict)       # slot -> {token -> M-vector}

    @property
    def K(self) -> int:
        return self.B_hat.shape[0]

    @property
    def N(self) -> int:
        return self.B_hat.shape[1]

    @property
    def masked(self) -> np.ndarray:
        return self.B_hat < 0


def _embed(vectors: np.ndarray) -> np.ndarray:
    vectors = np.atleast_2d(np.asarray(vectors, dtype=complex))
    return np.concatenate([vectors.real, vectors.imag], axis=1)


def _pair_dist2(X: np.ndarray, C: np.ndarray) -> np.ndarray:
    # expanded form keeps this a single matmul instead of an n x K x d blow-up
    d2 = (X * X).sum(1)[:, None] + (C * C).sum(1)[None, :] - 2.0 * (X @ C.T)
    return np.maximum(d2, 0.0)


def _kmeans_once(X: np.ndarray, K: int, rng: np.random.Generator, Tc: int):
    n = X.shape[0]
    # kmeans++ seeding on squared distances
    centroids = np.empty((K, X.shape[1]))
    centroids[0] = X[rng.integers(n)]
    d2 = np.sum((X - centroids[0]) ** 2, axis=1)
    for k in range(1, K):
        total = d2.sum()
        if total <= 0:
            idx = rng.integers(n)
        else:
            idx = rng.choice(n, p=d2 / total)
        centroids[k] = X[idx]
        d2 = np.minimum(d2, np.sum((X - centroids[k]) ** 2, axis=1))

    labels = None
    obj_prev = np.inf
    for _ in range(Tc):
        dist2 = _pair_dist2(X, centroids)
        new_labels = dist2.argmin(axis=1)
        obj = dist2[np.arange(n), new_labels].sum()
        assert obj <= obj_prev + 1e-9 * max(1.0, obj_prev), "Lloyd objective increased"
        obj_prev = obj
        if labels is not None and np.array_equal(new_labels, labels):
            break
        labels = new_labels
        for k in range(K):
            members = X[labels == k]
            if len(members) == 0:
                centroids[k] = X[rng.integers(n)]   # reseed a starved cluster
            else:
                centroids[k] = members.mean(axis=0)
    dist2 = _pair_dist2(X, centroids)
    labels = dist2.argmin(axis=1)
    obj = dist2[np.arange(n), labels].sum()
    return centroids, labels, obj


def kmeanspp_cluster(F_hat: list, K: int, rng: np.random.Generator,
                     Tc: int = 100, restarts: int = 5) -> ClusterModel:
    """Cluster the pooled CSI estimates into K device groups.

    F_hat is a list of (slot, token, M-vector) triples.  Complex vectors are
    embedded into R^{2M}; Lloyd runs to an assignment fixpoint or Tc sweeps,
    the best of `restarts` runs by squared objective wins, and the reported
    inertia is the unsquared within-cluster distance sum (that is what the
    score threshold wants).
    """
    if len(F_hat) < K:
        raise ValueError(f"need at least K={K} CSI vectors, got {len(F_hat)}")
    if K < 1:
        raise ValueError("K must be >= 1")
    keys = [(n, tok) for n, tok, _ in F_hat]
    X = _embed(np.array([vec for _, _, vec in F_hat]))

    best = None
    for _ in range(restarts):
        centroids, labels, obj = _kmeans_once(X, K, rng, Tc)
        if best is None or obj < best[2]:
            best = (centroids, labels, obj)
    centroids, labels, _ = best

    M = X.shape[1] // 2
    centroids_c = centroids[:, :M] + 1j * centroids[:, M:]
    dists = np.linalg.norm(X - centroids[labels], axis=1)
    return ClusterModel(K=K, centroids=centroids_c,
                        membership={key: int(lab) for key, lab in zip(keys, labels)},
                        inertia=float(dists.sum()))


def coarse_assign(cm: ClusterModel, detections: list) -> AssignmentState:
    """First-pass assignment: each detected token goes to the device row of
    its cluster.  When two tokens of one slot land in the same cluster, the
    nearer-to-centroid one stays and the rest are demoted (they rejoin the
    slot's candidate set at refinement); the demotions are recorded as
    deviation flags."""
    K, N = cm.K, len(detections)
    B_hat = np.full((K, N), -1, dtype=int)
    D = np.zeros((K, N))
    distances = np.full((K, N), np.inf)
    demoted: dict = {}
    csi: dict = {}
    for n, det in enumerate(detections):
        csi[n] = det.csi
        by_cluster: dict = {}
        for tok in sorted(det.active_set):
            key = (n, tok)
            if key not in cm.membership:
                raise ValueError(f"no cluster membership for slot {n} token {tok}")
            by_cluster.setdefault(cm.membership[key], []).append(tok)
        for k, toks in by_cluster.items():
            if len(toks) > 1:
                d = [np.linalg.norm(det.csi[t] - cm.centroids[k]) for t in toks]
                keep = toks[int(np.argmin(d))]
                demoted.setdefault(n, set()).update(t for t in toks if t != keep)
            else:
                keep = toks[0]
            B_hat[k, n] = keep
    return AssignmentState(B_hat=B_hat, D=D, distances=distances,
                           candidates={}, demoted=demoted, csi=csi)


def score_matrix(st: AssignmentState, cm: ClusterModel) -> AssignmentState:
    """Fill the confidence scores: D[k,n] is the reciprocal distance between
    the assigned token's CSI and centroid k, 0 for empty cells.  A vector
    sitting exactly on its centroid scores +inf."""
    for k in range(st.K):
        for n in range(st.N):
            tok = st.B_hat[k, n]
            if tok < 0:
                continue
            d = float(np.linalg.norm(st.csi[n][tok] - cm.centroids[k]))
            st.distances[k, n] = d
            st.D[k, n] = np.inf if d == 0 else 1.0 / d
    return st


def compute_score_threshold(cm: ClusterModel) -> float:
    """Score cutoff: reciprocal of twice the average within-cluster
    distance.  Degenerate all-zero spread gives an +inf sentinel (nothing
    gets masked)."""
    count = len(cm.membership)
    if count == 0:
        raise ValueError("cluster model has no members")
    if cm.inertia == 0:
        return np.inf
    return count / (2.0 * cm.inertia)


def refine_assignment(st: AssignmentState, Th_s: float = None) -> AssignmentState:
    """Clear doubtful cells and build per-slot candidate sets.

    Works in the distance domain: a cell is doubtful iff its distance
    exceeds d* = 1/Th_s (strictly).  A slot whose candidate set collapses to
    one token is the collision signature: that token is granted to every
    doubtful or empty device in the slot with full confidence."""
    if Th_s is not None:
        st.Th_s = Th_s
    if st.Th_s <= 0:
        raise ValueError("Th_s must be set before refinement")
    d_star = 0.0 if np.isinf(st.Th_s) else 1.0 / st.Th_s

    for n in range(st.N):
        pool = set(st.demoted.get(n, ()))
        for k in range(st.K):
            tok = st.B_hat[k, n]
            if tok >= 0 and st.distances[k, n] > d_star:
                pool.add(int(tok))
                st.B_hat[k, n] = -1
                st.D[k, n] = 0.0
                st.distances[k, n] = np.inf
        if len(pool) == 1:
            tok = pool.pop()
            for k in range(st.K):
                if st.B_hat[k, n] < 0:
                    st.B_hat[k, n] = tok
                    st.D[k, n] = 1.0
                    st.distances[k, n] = 1.0
        elif pool:
            st.candidates[n] = pool
    return st
