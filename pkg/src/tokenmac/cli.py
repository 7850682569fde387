"""Command-line entry point: run / sweep / report."""

import argparse
import sys

from .harness import ExperimentConfig, StageError, load_config, report_csv, run_sweep


def _add_common(p: argparse.ArgumentParser):
    p.add_argument("--config", help="JSON experiment config file")
    p.add_argument("--out", help="output directory (overrides config)")
    p.add_argument("--seed", type=int, help="master seed (overrides config)")
    p.add_argument("--trials", type=int, help="trials per grid point")
    p.add_argument("--workers", type=int, default=1, help="parallel trial workers")
    p.add_argument("--set", dest="overrides", action="append", default=[],
                   metavar="KEY=VALUE",
                   help="dotted config override, e.g. --set sim.K=20")


def _build_config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig.from_dict({})
    for item in args.overrides:
        key, sep, value = item.partition("=")
        if not sep:
            raise ValueError(f"--set expects KEY=VALUE, got {item!r}")
        cfg.apply_override(key, value)
    if args.out is not None:
        cfg.output_dir = args.out
    if args.seed is not None:
        cfg.master_seed = args.seed
    if args.trials is not None:
        cfg.apply_override("trials", str(args.trials))
    return cfg


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="tokenmac",
        description="Token-domain multiple access link-level simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one configuration (no sweep grid)")
    _add_common(p_run)
    p_sweep = sub.add_parser("sweep", help="run the Cartesian sweep from the config")
    _add_common(p_sweep)
    p_report = sub.add_parser("report", help="aggregate a results.csv into a summary table")
    p_report.add_argument("csv", help="path to results.csv")

    args = parser.parse_args(argv)
    try:
        if args.command == "report":
            rows = report_csv(args.csv)
            if not rows:
                print("no rows")
                return 0
            cols = list(rows[0].keys())
            widths = {c: max(len(c), *(len(_fmt(r[c])) for r in rows)) for c in cols}
            print("  ".join(c.rjust(widths[c]) for c in cols))
            for r in rows:
                print("  ".join(_fmt(r[c]).rjust(widths[c]) for c in cols))
            return 0

        cfg = _build_config(args)
        if args.command == "run":
            cfg.sweep = {}
        elif not cfg.sweep:
            print("warning: sweep grid is empty; running the base configuration",
                  file=sys.stderr)
        records, manifest = run_sweep(cfg, workers=args.workers)
        print(f"{len(records)} trial(s) written to {cfg.output_dir}/results.csv "
              f"({manifest['resumed_rows_skipped']} already present)")
        return 0
    except StageError as err:
        print(f"error {err}", file=sys.stderr)
        return 1
    except (ValueError, KeyError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


def _fmt(v) -> str:
    if isinstance(v, float):
        return f"{v:.6g}"
    return str(v)


if __name__ == "__main__":
    sys.exit(main())
