"""Demo tests against the real pretrained model; weights come from the
local cache (the suite runs offline)."""

import json
import os

os.environ.setdefault("HF_HUB_OFFLINE", "1")
os.environ.setdefault("TRANSFORMERS_OFFLINE", "1")

import pytest

from mlm_service.backend import BertBackend, text_roundtrip
from mlm_service.server import handle_lines


@pytest.fixture(scope="module")
def backend():
    return BertBackend()


def ask(backend, tokens, candidates=None):
    line = json.dumps({"id": 1, "tokens": tokens, "candidates": candidates or {}})
    return json.loads(handle_lines(backend, [line])[0])


def masked_ids(backend, text):
    ids = backend.tokenizer.encode(text, add_special_tokens=False)
    return [None if i == backend.mask_id else int(i) for i in ids]


def test_vocab_size(backend):
    assert backend.vocab_size == 28996


def test_criterion_10_beach_and_device2(backend):
    tok = backend.tokenizer
    toks = masked_ids(backend, "A beach with palm [MASK] and clear blue water")
    obj = ask(backend, toks)
    (pos, choice), = obj["choices"].items()
    assert tok.convert_ids_to_tokens([choice]) == ["trees"]

    pieces = ["E", "##gna", "##ro", "is", "[MASK]", "secret",
              "known", "to", "everyone", "but"]
    ids = tok.convert_tokens_to_ids(pieces)
    toks2 = [None if p == "[MASK]" else int(i) for p, i in zip(pieces, ids)]
    cands = [tok.convert_tokens_to_ids("a"), tok.convert_tokens_to_ids("is")]
    obj2 = ask(backend, toks2, {"4": cands})
    assert obj2["choices"]["4"] == tok.convert_tokens_to_ids("a")
    assert len(obj2["scores"]["4"]) == 2
    assert obj2["scores"]["4"][0] > obj2["scores"]["4"][1]


def test_singleton_candidate_regardless_of_logits(backend):
    toks = masked_ids(backend, "A beach with palm [MASK] and clear blue water")
    rare = backend.tokenizer.convert_tokens_to_ids("##ose")
    obj = ask(backend, toks, {str(toks.index(None)): [rare]})
    assert obj["choices"][str(toks.index(None))] == rare


def test_roundtrip_examples(backend):
    tok = backend.tokenizer
    # the cased vocabulary holds lowercase "suppose" whole; the capitalized
    # form is the one that splits into three subwords
    ids, text = text_roundtrip(backend, "Suppose")
    assert tok.convert_ids_to_tokens(ids) == ["[CLS]", "Su", "##pp", "##ose", "[SEP]"]
    assert text == "Suppose"

    ids, text = text_roundtrip(backend, "I love transformers!")
    assert len(ids) == 7
    assert ids[0] == backend.cls_id and ids[-1] == backend.sep_id
    assert text == "I love transformers!"

    ids, text = text_roundtrip(backend, "")
    assert ids == [backend.cls_id, backend.sep_id]
    assert text == ""


def test_identical_request_identical_response(backend):
    toks = masked_ids(backend, "A beach with palm [MASK] and clear blue water")
    line = json.dumps({"id": 3, "tokens": toks,
                       "candidates": {str(toks.index(None)): [1, 2, 3]}})
    assert handle_lines(backend, [line]) == handle_lines(backend, [line])


def test_out_of_vocab_token(backend):
    obj = ask(backend, [backend.vocab_size])
    assert obj["error"] == "vocab"
