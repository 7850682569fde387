import json

import pytest

from mlm_service.protocol import (RequestError, check_vocab, encode_error,
                                  encode_response, parse_request)


def err(line):
    with pytest.raises(RequestError) as exc:
        parse_request(line)
    return exc.value


class TestParse:
    def test_full_request(self):
        req = parse_request('{"id": 7, "tokens": [3, null, 5], '
                            '"candidates": {"1": [9, 2]}}')
        assert req.id == 7
        assert req.tokens == [3, None, 5]
        assert req.candidates == {1: [9, 2]}   # request order kept
        assert req.masked_positions == [1]

    def test_candidates_optional(self):
        req = parse_request('{"id": 0, "tokens": [null]}')
        assert req.candidates == {}

    def test_empty_tokens(self):
        assert parse_request('{"id": 1, "tokens": []}').masked_positions == []

    def test_bad_json(self):
        e = err("{nope")
        assert e.code == "parse" and e.req_id == -1

    def test_non_object(self):
        assert err("[1, 2]").code == "parse"

    def test_missing_or_bad_id(self):
        assert err('{"tokens": []}').req_id == -1
        assert err('{"id": "3", "tokens": []}').code == "parse"
        assert err('{"id": true, "tokens": []}').code == "parse"

    def test_tokens_not_list(self):
        e = err('{"id": 4, "tokens": "abc"}')
        assert e.code == "schema" and e.req_id == 4

    def test_bad_token_entries(self):
        assert err('{"id": 1, "tokens": [-1]}').code == "schema"
        assert err('{"id": 1, "tokens": [1.5]}').code == "schema"
        assert err('{"id": 1, "tokens": [true]}').code == "schema"

    def test_bad_candidates(self):
        assert err('{"id": 1, "tokens": [null], "candidates": [1]}').code == "schema"
        assert err('{"id": 1, "tokens": [null], "candidates": {"x": [1]}}').code == "schema"
        assert err('{"id": 1, "tokens": [null], "candidates": {"5": [1]}}').code == "schema"
        assert err('{"id": 1, "tokens": [null], "candidates": {"0": []}}').code == "schema"
        assert err('{"id": 1, "tokens": [null], "candidates": {"0": [-2]}}').code == "schema"

    def test_candidates_on_unmasked(self):
        e = err('{"id": 9, "tokens": [3], "candidates": {"0": [1]}}')
        assert e.code == "schema" and e.req_id == 9


class TestVocab:
    def test_in_range_passes(self):
        req = parse_request('{"id": 1, "tokens": [7, null], "candidates": {"1": [7]}}')
        check_vocab(req, 8)

    def test_token_out_of_range(self):
        req = parse_request('{"id": 2, "tokens": [8]}')
        with pytest.raises(RequestError) as exc:
            check_vocab(req, 8)
        assert exc.value.code == "vocab" and exc.value.req_id == 2

    def test_candidate_out_of_range(self):
        req = parse_request('{"id": 3, "tokens": [null], "candidates": {"0": [8]}}')
        with pytest.raises(RequestError) as exc:
            check_vocab(req, 8)
        assert exc.value.code == "vocab"


class TestEncode:
    def test_response_shape(self):
        line = encode_response(5, {1: 9, 3: 0}, {1: [0.5, 1.0]})
        obj = json.loads(line)
        assert obj == {"id": 5, "choices": {"1": 9, "3": 0},
                       "scores": {"1": [0.5, 1.0]}}
        assert "\n" not in line

    def test_error_shape(self):
        obj = json.loads(encode_error(-1, "parse", "bad"))
        assert obj == {"id": -1, "error": "parse", "message": "bad"}
