"""Masked-LM prediction sidecar: newline-delimited JSON in, restricted
argmax choices and candidate scores out."""

__version__ = "0.1.0"

from .backend import BertBackend, MockBackend, make_backend, text_roundtrip
from .protocol import (Request, RequestError, check_vocab, encode_error,
                       encode_response, parse_request)
from .server import LineReader, ServiceConfig, choose, handle_lines, serve, serve_stream
