"""Command-line entry point: ``floodrisk <stage> [options]``.

Exit codes: 0 success, 2 missing/unreadable input or unwritable output,
3 schema violation, 4 numerical failure.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .errors import NumericalError, SchemaError
from .pipeline import STAGES, build_config, parse_config_text, run_pipeline

EXIT_IO, EXIT_SCHEMA, EXIT_NUMERIC = 2, 3, 4

# flag -> config key
FLAGS = {
    "seed": int, "out": str, "k": int, "knn": int, "tau": float, "alpha": float,
    "beta": float, "epochs": int, "pretrain_epochs": int, "graph_epochs": int,
    "perms": int, "min_city_pop": float, "data": str, "weeks": int,
}


def make_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="floodrisk", description=__doc__.splitlines()[0])
    ap.add_argument("subcommand", choices=STAGES)
    ap.add_argument("--config", type=Path, help="key = value configuration file")
    for key, typ in FLAGS.items():
        ap.add_argument("--" + key.replace("_", "-"), dest=key, type=typ, default=None)
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv=None) -> int:
    ap = make_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        file_values = parse_config_text(args.config.read_text(encoding="utf-8")) if args.config else {}
        cfg = build_config(file_values, {k: getattr(args, k) for k in FLAGS})
    except OSError as exc:
        print(f"error: cannot read config: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ValueError, TypeError) as exc:
        print(f"error: bad configuration: {exc}", file=sys.stderr)
        return EXIT_IO

    try:
        outputs = run_pipeline(args.subcommand, cfg)
    except SchemaError as exc:
        print(f"error: schema violation: {exc}", file=sys.stderr)
        return EXIT_SCHEMA
    except NumericalError as exc:
        print(f"error: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"error: invalid input: {exc}", file=sys.stderr)
        return EXIT_SCHEMA
    for name in outputs:
        print(Path(cfg.out) / name)
    return 0


if __name__ == "__main__":
    sys.exit(main())
