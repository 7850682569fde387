"""Correlated token sources.

A small Markov chain over the token codebook stands in for a learned
tokenizer: it is cheap to sample, cheap to fit, and gives the receiver-side
predictor real context to exploit.  All devices in a trial draw from the same
model with independent RNG streams.
"""

from dataclasses import dataclass, field

import numpy as np

Context = tuple[int, ...]

_PROB_TOL = 1e-9


def _check_dist(p: np.ndarray, what: str) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    if p.ndim != 1:
        raise ValueError(f"{what} must be a 1-D probability vector")
    if np.any(p < 0):
        raise ValueError(f"{what} has negative entries")
    if abs(p.sum() - 1.0) > _PROB_TOL:
        raise ValueError(f"{what} sums to {p.sum():.12f}, expected 1")
    return p


@dataclass
class SourceModel:
    """Markov token source of a given order over a codebook of `vocab_size` ids.

    `transitions` maps a context tuple (the up-to-`order` most recent token
    ids) to a probability vector over the codebook.  Contexts never seen at
    fit time back off to `initial_dist`.
    """

    vocab_size: int
    transitions: dict[Context, np.ndarray]
    initial_dist: np.ndarray
    order: int = 1
    smoothing: float = 0.0

    def __post_init__(self):
        if self.vocab_size < 2:
            raise ValueError("vocab_size must be >= 2")
        if not 1 <= self.order <= 3:
            raise ValueError("order must be in 1..3")
        if self.smoothing < 0:
            raise ValueError("smoothing must be >= 0")
        self.initial_dist = _check_dist(self.initial_dist, "initial_dist")
        if len(self.initial_dist) != self.vocab_size:
            raise ValueError("initial_dist length != vocab_size")
        clean = {}
        for ctx, row in self.transitions.items():
            ctx = tuple(int(t) for t in ctx)
            if not 1 <= len(ctx) <= self.order:
                raise ValueError(f"context {ctx} longer than order {self.order}")
            if any(t < 0 or t >= self.vocab_size for t in ctx):
                raise ValueError(f"context {ctx} has token ids outside [0, Q)")
            row = _check_dist(row, f"transition row for context {ctx}")
            if len(row) != self.vocab_size:
                raise ValueError("transition row length != vocab_size")
            clean[ctx] = row
        self.transitions = clean

    @classmethod
    def from_matrix(cls, matrix, initial_dist=None, smoothing: float = 0.0) -> "SourceModel":
        """Build an order-1 model from a Q x Q row-stochastic matrix."""
        matrix = np.asarray(matrix, dtype=float)
        q = matrix.shape[0]
        if matrix.shape != (q, q):
            raise ValueError("transition matrix must be square")
        if initial_dist is None:
            initial_dist = np.full(q, 1.0 / q)
        transitions = {(i,): matrix[i] for i in range(q)}
        return cls(vocab_size=q, transitions=transitions, initial_dist=initial_dist,
                   order=1, smoothing=smoothing)

    def row(self, context: Context) -> np.ndarray:
        """Distribution of the next token given `context`, backing off to
        the initial distribution for unknown contexts."""
        return self.transitions.get(tuple(context), self.initial_dist)


@dataclass
class TokenBatch:
    """Ground-truth token sequences of K devices: sequences[k][n] is the token
    id device k transmits in slot n."""

    Q: int
    N: int
    sequences: list[list[int]]

    def __post_init__(self):
        for k, seq in enumerate(self.sequences):
            if len(seq) != self.N:
                raise ValueError(f"sequence {k} has length {len(seq)}, expected {self.N}")
            if any(t < 0 or t >= self.Q for t in seq):
                raise ValueError(f"sequence {k} has token ids outside [0, Q)")

    @property
    def K(self) -> int:
        return len(self.sequences)

    def active_sets(self) -> list[set]:
        """Per-slot set of transmitted token ids (collisions merge)."""
        return [{seq[n] for seq in self.sequences} for n in range(self.N)]


def gen_markov_sources(model: SourceModel, K: int, N: int, rng: np.random.Generator) -> TokenBatch:
    """Sample K independent length-N token sequences from `model`.

    Deterministic for a given generator state; devices are drawn one after
    the other from the same stream.
    """
    if K < 1 or N < 1:
        raise ValueError("K and N must be >= 1")
    q = model.vocab_size
    # cache inverse-CDF rows so long sequences stay cheap
    cum_cache: dict[Context, np.ndarray] = {}
    cum_init = np.cumsum(model.initial_dist)

    def draw(cum: np.ndarray) -> int:
        return int(np.searchsorted(cum, rng.random(), side="right").clip(0, q - 1))

    sequences = []
    for _ in range(K):
        seq = [draw(cum_init)]
        for n in range(1, N):
            ctx = tuple(seq[max(0, n - model.order):n])
            cum = cum_cache.get(ctx)
            if cum is None:
                cum = np.cumsum(model.row(ctx))
                cum_cache[ctx] = cum
            seq.append(draw(cum))
        sequences.append(seq)
    return TokenBatch(Q=q, N=N, sequences=sequences)


def fit_markov(corpus: list[list[int]], Q: int, smoothing: float = 0.0, order: int = 1) -> SourceModel:
    """Fit a Markov source by additive-smoothed counting.

    Each transition row is (count + eps) / (row_total + eps * Q); the initial
    distribution is fitted the same way from the first token of each
    sequence.  With smoothing = 0, only observed contexts get a row.
    """
    if Q < 2:
        raise ValueError("Q must be >= 2")
    if smoothing < 0:
        raise ValueError("smoothing must be >= 0")
    if not corpus or all(len(seq) == 0 for seq in corpus):
        raise ValueError("corpus is empty")
    for seq in corpus:
        for t in seq:
            if not 0 <= t < Q:
                raise ValueError(f"token id {t} outside [0, {Q})")

    init_counts = np.zeros(Q)
    ctx_counts: dict[Context, np.ndarray] = {}
    for seq in corpus:
        if not seq:
            continue
        init_counts[seq[0]] += 1
        for n in range(1, len(seq)):
            ctx = tuple(seq[max(0, n - order):n])
            row = ctx_counts.get(ctx)
            if row is None:
                row = np.zeros(Q)
                ctx_counts[ctx] = row
            row[seq[n]] += 1

    def normalize(counts: np.ndarray) -> np.ndarray:
        total = counts.sum()
        if smoothing == 0 and total == 0:
            raise ValueError("cannot normalize an empty count row without smoothing")
        return (counts + smoothing) / (total + smoothing * Q)

    transitions = {ctx: normalize(row) for ctx, row in ctx_counts.items()}
    return SourceModel(vocab_size=Q, transitions=transitions,
                       initial_dist=normalize(init_counts), order=order,
                       smoothing=smoothing)


def random_markov(Q: int, rng: np.random.Generator, order: int = 1,
                  concentration: float = 0.3) -> SourceModel:
    """Draw a random order-1 source whose transition rows are Dirichlet
    samples; small `concentration` gives peaked, predictable rows."""
    if order != 1:
        raise ValueError("random_markov only generates order-1 models")
    matrix = rng.dirichlet(np.full(Q, concentration), size=Q)
    initial = rng.dirichlet(np.full(Q, concentration))
    return SourceModel.from_matrix(matrix, initial_dist=initial)


def load_corpus(path) -> list[list[int]]:
    """Read a corpus file: one sequence per line, whitespace-separated
    decimal token ids."""
    corpus = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                corpus.append([int(tok) for tok in line.split()])
    return corpus
