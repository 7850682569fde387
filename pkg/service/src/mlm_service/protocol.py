"""Wire protocol: one JSON object per line in each direction.

Request:  {"id": int, "tokens": [int|null, ...], "candidates": {"<pos>": [int, ...]}}
Response: {"id": int, "choices": {"<pos>": int}, "scores": {"<pos>": [float, ...]}}
Error:    {"id": int, "error": code, "message": str}

A line that does not parse gets an error response with id -1 and the
connection stays up.  Choices cover every masked position; scores are
returned only for positions that carried a candidate set, aligned to the
candidate order of the request.
"""

import json
from dataclasses import dataclass


class RequestError(ValueError):
    """Invalid request; `code` lands in the error response."""

    def __init__(self, code, message, req_id=-1):
        super().__init__(message)
        self.code = code
        self.req_id = req_id


def _is_int(x):
    # bool is an int subclass and must not pass as a token id
    return isinstance(x, int) and not isinstance(x, bool)


@dataclass
class Request:
    id: int
    tokens: list
    candidates: dict   # int position -> candidate id list, request order kept

    @property
    def masked_positions(self):
        return [i for i, t in enumerate(self.tokens) if t is None]


def parse_request(line: str) -> Request:
    try:
        raw = json.loads(line)
    except json.JSONDecodeError as err:
        raise RequestError("parse", f"bad json: {err}") from None
    if not isinstance(raw, dict) or not _is_int(raw.get("id")):
        raise RequestError("parse", "expected an object with an integer id")
    rid = raw["id"]

    tokens = raw.get("tokens")
    if not isinstance(tokens, list):
        raise RequestError("schema", "tokens must be a list", rid)
    for t in tokens:
        if t is not None and not (_is_int(t) and t >= 0):
            raise RequestError("schema", f"bad token entry {t!r}", rid)

    raw_cands = raw.get("candidates", {})
    if not isinstance(raw_cands, dict):
        raise RequestError("schema", "candidates must be an object", rid)
    candidates = {}
    for key, ids in raw_cands.items():
        try:
            pos = int(key)
        except (TypeError, ValueError):
            raise RequestError("schema", f"bad candidate position {key!r}", rid) from None
        if not 0 <= pos < len(tokens):
            raise RequestError("schema", f"candidate position {pos} out of range", rid)
        if tokens[pos] is not None:
            raise RequestError("schema", f"candidates on unmasked position {pos}", rid)
        if not isinstance(ids, list) or not ids:
            raise RequestError("schema", f"candidate list for {pos} must be non-empty", rid)
        for c in ids:
            if not (_is_int(c) and c >= 0):
                raise RequestError("schema", f"bad candidate id {c!r} at {pos}", rid)
        candidates[pos] = list(ids)
    return Request(id=rid, tokens=list(tokens), candidates=candidates)


def check_vocab(req: Request, vocab_size: int):
    for t in req.tokens:
        if t is not None and t >= vocab_size:
            raise RequestError("vocab", f"token id {t} >= vocab size {vocab_size}", req.id)
    for pos, ids in req.candidates.items():
        for c in ids:
            if c >= vocab_size:
                raise RequestError("vocab",
                                   f"candidate id {c} >= vocab size {vocab_size}", req.id)


def encode_response(rid: int, choices: dict, scores: dict) -> str:
    return json.dumps({"id": rid,
                       "choices": {str(p): int(c) for p, c in choices.items()},
                       "scores": {str(p): [float(s) for s in v]
                                  for p, v in scores.items()}})


def encode_error(rid: int, code: str, message: str) -> str:
    return json.dumps({"id": rid, "error": code, "message": message})
