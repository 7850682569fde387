"""Command-line entry point for the prediction service."""

import argparse
import sys

from .backend import make_backend
from .server import ServiceConfig, serve


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="mlm-predictor-service",
        description="Masked-LM prediction service over newline-delimited JSON")
    parser.add_argument("--model", default="bert-base-cased",
                        help="pretrained masked-LM name, or 'mock' / 'mock:<vocab>' "
                             "for the deterministic test backend")
    mode = parser.add_mutually_exclusive_group()
    mode.add_argument("--stdio", action="store_true",
                      help="serve on stdin/stdout (default)")
    mode.add_argument("--listen", metavar="HOST:PORT",
                      help="listen on a TCP address instead of stdio")
    parser.add_argument("--max-batch", type=int, default=8,
                        help="requests per model call")
    parser.add_argument("--timeout", type=float, default=30.0,
                        help="per-request compute budget in seconds")
    args = parser.parse_args(argv)

    try:
        cfg = ServiceConfig(model_name=args.model, address=args.listen,
                            max_batch=args.max_batch, timeout_s=args.timeout)
        backend = make_backend(cfg.model_name)
    except Exception as err:
        print(f"error: cannot start with model {args.model!r}: {err}",
              file=sys.stderr)
        return 1
    print(f"ready model={args.model} vocab={backend.vocab_size}",
          file=sys.stderr, flush=True)
    try:
        serve(backend, cfg)
    except KeyboardInterrupt:
        pass
    return 0


if __name__ == "__main__":
    sys.exit(main())
