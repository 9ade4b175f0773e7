"""Command-line entry point: ``gencs <stage> [--config PATH] [--out DIR] [--seed N]``.

Exit codes: 0 success, 2 configuration error, 3 stage failure.
"""

from __future__ import annotations

import argparse
import sys

from .pipeline import OUTPUT_ENV, STAGES, ConfigError, StageError, load_config, run_pipeline

EXIT_OK, EXIT_CONFIG, EXIT_STAGE = 0, 2, 3


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="gencs", description="Generative compressed sensing experiments.")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in STAGES + ("all",):
        p = sub.add_parser(name, help="run every stage in order" if name == "all" else f"run the {name} stage")
        p.add_argument("--config", metavar="PATH", help="YAML experiment config (defaults: desk scale)")
        p.add_argument("--out", metavar="DIR", help=f"run directory (overrides ${OUTPUT_ENV} and the config)")
        p.add_argument("--seed", type=int, help="master seed (overrides the config)")
        p.add_argument("--dataset", metavar="DIR", help="directory holding darcy_<res>.bin files")
        p.add_argument("--stage-only", metavar="NAME", choices=STAGES, help="run just this stage")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, {"seed": args.seed})
        if args.dataset:
            cfg.data.path = args.dataset
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    if args.stage_only:
        stages = (args.stage_only,)
    elif args.command == "all":
        stages = STAGES
    else:
        stages = (args.command,)
    try:
        run = run_pipeline(cfg, args.out, stages)
    except StageError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_STAGE
    print(f"artifacts in {run.out}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
