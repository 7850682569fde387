"""Masked token prediction.

After assignment each device sequence may contain masked positions plus a
per-slot candidate token set.  A predictor scores every masked position in a
single pass; the chosen token is the argmax restricted to the candidate set
(falling back to the full codebook when the set is empty).  Three predictors
are provided: the true-model Markov oracle, a uniform random-fill baseline,
and a newline-delimited JSON client for an external masked-LM service.
"""

import itertools
import json
import queue
import socket
import threading
from dataclasses import dataclass, field

import numpy as np

from .source import SourceModel


class PredictionError(RuntimeError):
    """Prediction failed; `positions` lists the masked positions involved."""

    def __init__(self, message, positions=None):
        super().__init__(message)
        self.positions = list(positions) if positions is not None else None


class ServiceTimeout(PredictionError):
    pass


class ProtocolError(PredictionError):
    pass


class IdMismatchError(ProtocolError):
    pass


class ServiceError(PredictionError):
    """The service answered with an error object."""


@dataclass
class MaskedSequence:
    """One device's sequence with None at masked positions; candidates maps a
    masked position to its candidate token set (absent or empty = no
    restriction)."""

    tokens: list
    candidates: dict = field(default_factory=dict)

    def __post_init__(self):
        for pos, cands in self.candidates.items():
            if not 0 <= pos < len(self.tokens):
                raise ValueError(f"candidate position {pos} out of range")
            if self.tokens[pos] is not None:
                raise ValueError(f"candidates given for unmasked position {pos}")
            for c in cands:
                if c < 0:
                    raise ValueError("negative candidate token id")

    @property
    def masked_positions(self) -> list:
        return [i for i, t in enumerate(self.tokens) if t is None]


@dataclass
class PredictionDistribution:
    """Scores for one sequence's masked positions: restricted score lists
    aligned to `candidates` order where a candidate set was supplied, plus
    the service's choices."""

    choices: dict
    scores: dict = field(default_factory=dict)
    candidates: dict = field(default_factory=dict)

    def __post_init__(self):
        for pos, s in self.scores.items():
            s = np.asarray(s, dtype=float)
            if not np.all(np.isfinite(s)):
                raise ValueError(f"non-finite scores at position {pos}")
            self.scores[pos] = s


def markov_posterior(model: SourceModel, seq: MaskedSequence, pos: int) -> np.ndarray:
    """Posterior over the token at `pos` given the nearest unmasked neighbor
    on each side: proportional to P(prev -> q) * P(q -> next).  A side with
    no unmasked token contributes nothing; with both sides empty the initial
    distribution is returned.  Order-1 models only."""
    if model.order != 1:
        raise ValueError("markov_posterior expects an order-1 model")
    tokens = seq.tokens
    if not 0 <= pos < len(tokens):
        raise ValueError("position out of range")
    q_count = model.vocab_size
    left = next((tokens[i] for i in range(pos - 1, -1, -1) if tokens[i] is not None), None)
    right = next((tokens[i] for i in range(pos + 1, len(tokens)) if tokens[i] is not None), None)
    if left is None and right is None:
        return model.initial_dist.copy()
    post = np.ones(q_count)
    if left is not None:
        post = post * model.row((left,))
    if right is not None:
        post = post * np.array([model.row((q,))[right] for q in range(q_count)])
    total = post.sum()
    if total <= 0:
        # contradictory context under a zero-mass chain; keep it defined
        return np.full(q_count, 1.0 / q_count)
    return post / total


class MarkovPredictor:
    """Scores masked positions with a known source model (the oracle role)."""

    def __init__(self, model: SourceModel):
        self.model = model

    def distributions(self, seq: MaskedSequence) -> dict:
        return {pos: markov_posterior(self.model, seq, pos)
                for pos in seq.masked_positions}


def predict_masked(seq: MaskedSequence, model) -> list:
    """Fill every masked position: argmax of the model's score restricted to
    the candidate set when one is present, over the full codebook otherwise.
    Ties break to the smallest token id.  Unmasked positions pass through."""
    masked = seq.masked_positions
    try:
        dists = model.distributions(seq)
    except PredictionError as err:
        if err.positions is None:
            err.positions = masked
        raise
    except Exception as err:
        raise PredictionError(f"predictor failed: {err}", positions=masked) from err

    filled = list(seq.tokens)
    for pos in masked:
        if pos not in dists:
            raise PredictionError(f"no scores for masked position {pos}", positions=[pos])
        scores = np.asarray(dists[pos], dtype=float)
        cands = sorted(seq.candidates.get(pos, ()))
        if cands:
            filled[pos] = int(cands[int(np.argmax(scores[cands]))])
        else:
            filled[pos] = int(np.argmax(scores))
    return filled


def random_fill(seq: MaskedSequence, Q: int, rng: np.random.Generator) -> list:
    """Baseline: each masked position drawn uniformly from the codebook."""
    return [int(rng.integers(Q)) if t is None else t for t in seq.tokens]


def _parse_address(address):
    if isinstance(address, (tuple, list)):
        host, port = address
    else:
        host, _, port = str(address).rpartition(":")
        if not host:
            raise ValueError(f"endpoint {address!r} is not host:port")
    return host, int(port)


class ExternalPredictor:
    """Client for the newline-delimited JSON predictor protocol.

    One request per line: {"id", "tokens" (null = masked), "candidates"
    ({"pos": [ids]})}; the response carries "choices" and, for restricted
    positions, "scores" aligned to the candidate order.  A background thread
    pumps incoming lines into a queue so timeouts work the same for sockets
    and pipes.
    """

    def __init__(self, reader, writer, vocab_size: int, timeout: float = 30.0, on_close=None):
        if vocab_size < 1:
            raise ValueError("vocab_size must be positive")
        self.vocab_size = vocab_size
        self.timeout = timeout
        self._reader = reader
        self._writer = writer
        self._on_close = on_close
        self._ids = itertools.count()
        self._lines: queue.Queue = queue.Queue()
        self._pump_thread = threading.Thread(target=self._pump, daemon=True)
        self._pump_thread.start()

    @classmethod
    def connect(cls, address, vocab_size: int, timeout: float = 30.0) -> "ExternalPredictor":
        host, port = _parse_address(address)
        sock = socket.create_connection((host, port), timeout=timeout)
        sock.settimeout(None)
        reader = sock.makefile("r", encoding="utf-8", newline="\n")
        writer = sock.makefile("w", encoding="utf-8", newline="\n")

        def shut():
            # unblocks the pump thread's pending read before the close
            try:
                sock.shutdown(socket.SHUT_RDWR)
            except OSError:
                pass
            sock.close()

        return cls(reader, writer, vocab_size, timeout, on_close=shut)

    def _pump(self):
        try:
            for line in self._reader:
                self._lines.put(line)
        except Exception as err:
            self._lines.put(err)
        self._lines.put(None)

    def _read_line(self) -> str:
        try:
            item = self._lines.get(timeout=self.timeout)
        except queue.Empty:
            raise ServiceTimeout(f"no response within {self.timeout}s") from None
        if item is None:
            raise ProtocolError("connection closed by service")
        if isinstance(item, Exception):
            raise ProtocolError(f"read failed: {item}")
        return item

    def _roundtrip(self, payload: dict) -> dict:
        try:
            self._writer.write(json.dumps(payload) + "\n")
            self._writer.flush()
        except OSError as err:
            raise ProtocolError(f"write failed: {err}") from err
        line = self._read_line()
        try:
            resp = json.loads(line)
        except json.JSONDecodeError as err:
            raise ProtocolError(f"malformed response line: {err}") from err
        if not isinstance(resp, dict):
            raise ProtocolError("response is not a JSON object")
        if "error" in resp:
            raise ServiceError(f"{resp.get('error')}: {resp.get('message', '')}")
        if resp.get("id") != payload["id"]:
            raise IdMismatchError(
                f"response id {resp.get('id')} does not match request id {payload['id']}")
        return resp

    def _request_for(self, seq: MaskedSequence) -> dict:
        return {
            "id": next(self._ids),
            "tokens": list(seq.tokens),
            "candidates": {str(pos): sorted(int(c) for c in cands)
                           for pos, cands in seq.candidates.items() if cands},
        }

    def distributions(self, seq: MaskedSequence) -> dict:
        payload = self._request_for(seq)
        resp = self._roundtrip(payload)
        choices = resp.get("choices", {})
        scores = resp.get("scores", {})
        out = {}
        for pos in seq.masked_positions:
            key = str(pos)
            cands = sorted(seq.candidates.get(pos, ()))
            vec = np.full(self.vocab_size, -np.inf)
            if cands and key in scores:
                s = np.asarray(scores[key], dtype=float)
                if s.shape != (len(cands),):
                    raise ProtocolError(
                        f"position {pos}: {s.size} scores for {len(cands)} candidates")
                if not np.all(np.isfinite(s)):
                    raise ProtocolError(f"position {pos}: non-finite scores")
                vec[cands] = s
            elif key in choices:
                choice = int(choices[key])
                if not 0 <= choice < self.vocab_size:
                    raise ProtocolError(f"position {pos}: choice {choice} outside codebook")
                vec[choice] = 0.0
            else:
                raise ProtocolError(f"position {pos}: neither scores nor choice returned")
            out[pos] = vec
        return out

    def predict_batch(self, seqs: list) -> list:
        """Strict request/response per sequence; ids stay unique across the
        session so responses can always be matched."""
        results = []
        for seq in seqs:
            payload = self._request_for(seq)
            resp = self._roundtrip(payload)
            choices = {int(k): int(v) for k, v in resp.get("choices", {}).items()}
            scores = {int(k): v for k, v in resp.get("scores", {}).items()}
            cands = {pos: sorted(int(c) for c in cs)
                     for pos, cs in seq.candidates.items() if cs}
            results.append(PredictionDistribution(choices=choices, scores=scores,
                                                  candidates=cands))
        return results

    def close(self):
        try:
            self._writer.close()
        except OSError:
            pass
        if self._on_close is not None:
            try:
                self._on_close()
            except OSError:
                pass
        # only close the reader once the pump has let go of it
        self._pump_thread.join(timeout=1.0)
        if not self._pump_thread.is_alive():
            try:
                self._reader.close()
            except OSError:
                pass

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def external_predict(endpoint, requests: list, vocab_size: int,
                     timeout: float = 30.0) -> list:
    """One-shot batch against a service at `endpoint` (host:port)."""
    with ExternalPredictor.connect(endpoint, vocab_size, timeout) as client:
        return client.predict_batch(requests)
