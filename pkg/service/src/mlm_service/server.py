"""Serve loop: newline-delimited JSON over stdio or a listening socket."""

import os
import select
import socket
import sys
import time
from dataclasses import dataclass

from .protocol import (RequestError, check_vocab, encode_error, encode_response,
                       parse_request)


@dataclass
class ServiceConfig:
    model_name: str = "bert-base-cased"
    address: str = None        # None means stdio; "host:port" listens
    max_batch: int = 8
    timeout_s: float = 30.0

    def __post_init__(self):
        if self.max_batch < 1:
            raise ValueError("max_batch must be >= 1")
        if self.timeout_s <= 0:
            raise ValueError("timeout_s must be > 0")


class LineReader:
    """Line buffering over a raw fd.  Buffered file objects lie to
    select(), so the drain-ready-lines batching below needs its own."""

    def __init__(self, fd):
        self.fd = fd
        self.buf = b""
        self.eof = False

    def _fill(self, block):
        if self.eof:
            return False
        if not block:
            ready, _, _ = select.select([self.fd], [], [], 0)
            if not ready:
                return False
        chunk = os.read(self.fd, 65536)
        if not chunk:
            self.eof = True
            return False
        self.buf += chunk
        return True

    def readline(self, block=True):
        """Next line without its newline, or None (EOF, or nothing buffered
        in non-blocking mode).  A trailer without a newline counts at EOF."""
        while True:
            i = self.buf.find(b"\n")
            if i >= 0:
                line, self.buf = self.buf[:i], self.buf[i + 1:]
                return line.decode("utf-8", "replace")
            if self.eof:
                if self.buf:
                    line, self.buf = self.buf, b""
                    return line.decode("utf-8", "replace")
                return None
            if not self._fill(block) and not self.eof:
                return None   # non-blocking and nothing ready


def choose(logit_vec, candidates=None):
    """Restricted argmax; ties go to the smaller token id."""
    if candidates:
        best, best_val = None, None
        for c in candidates:
            val = float(logit_vec[c])
            if best is None or val > best_val or (val == best_val and c < best):
                best, best_val = c, val
        return best
    return int(logit_vec.argmax())


def handle_lines(backend, lines, timeout_s=None):
    """Responses for a batch of raw request lines, arrival order.  Invalid
    lines turn into error responses; the rest share one model call."""
    slots = []
    requests = []
    for line in lines:
        if not line.strip():
            continue   # blank lines between requests are tolerated
        try:
            req = parse_request(line)
            check_vocab(req, backend.vocab_size)
        except RequestError as err:
            slots.append(encode_error(err.req_id, err.code, str(err)))
            continue
        slots.append(None)
        requests.append(req)

    if requests:
        started = time.monotonic()
        try:
            per_req = backend.logits_batch([r.tokens for r in requests])
        except Exception as err:
            # keep the connection up on a backend fault
            per_req = None
            answers = [encode_error(r.id, "internal", f"{type(err).__name__}: {err}")
                       for r in requests]
        if per_req is not None:
            elapsed = time.monotonic() - started
            answers = []
            for req, logits in zip(requests, per_req):
                if timeout_s is not None and elapsed > timeout_s:
                    # the forward cannot be preempted; over-budget batches
                    # are reported after the fact
                    answers.append(encode_error(req.id, "timeout",
                                                f"compute took {elapsed:.2f}s"))
                    continue
                choices, scores = {}, {}
                for pos in req.masked_positions:
                    cands = req.candidates.get(pos)
                    choices[pos] = choose(logits[pos], cands)
                    if cands:
                        scores[pos] = [float(logits[pos][c]) for c in cands]
                answers.append(encode_response(req.id, choices, scores))
        it = iter(answers)
        slots = [s if s is not None else next(it) for s in slots]
    return slots


def serve_stream(backend, reader: LineReader, write, cfg: ServiceConfig):
    """Pump one connection until EOF.  After a blocking read, whatever
    full lines are already buffered join the same model batch."""
    while True:
        line = reader.readline(block=True)
        if line is None:
            return
        batch = [line]
        while len(batch) < cfg.max_batch:
            extra = reader.readline(block=False)
            if extra is None:
                break
            batch.append(extra)
        for response in handle_lines(backend, batch, cfg.timeout_s):
            write(response + "\n")


def serve(backend, cfg: ServiceConfig):
    """Run until EOF (stdio) or forever (socket listener)."""
    if cfg.address is None:
        out = sys.stdout
        reader = LineReader(sys.stdin.fileno())

        def write(s):
            out.write(s)
            out.flush()

        serve_stream(backend, reader, write, cfg)
        return

    host, _, port = cfg.address.rpartition(":")
    sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
    sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
    sock.bind((host or "127.0.0.1", int(port)))
    sock.listen(1)
    print(f"listening on {sock.getsockname()[0]}:{sock.getsockname()[1]}",
          file=sys.stderr, flush=True)
    try:
        while True:
            conn, _ = sock.accept()
            with conn:
                reader = LineReader(conn.fileno())
                serve_stream(backend, reader,
                             lambda s: conn.sendall(s.encode("utf-8")), cfg)
    finally:
        sock.close()
