"""Full desk-scale experiment: every stage, then the acceptance summary.

Usage:
    python scripts/run_desk.py [--config configs/desk.yaml] [--out runs/desk]

Takes about ten minutes on one core.  The summary lands in <out>/summary.txt.
"""

import argparse

from gencs.pipeline import load_config, run_pipeline


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--config", default="configs/desk.yaml")
    ap.add_argument("--out", default=None)
    args = ap.parse_args()
    run = run_pipeline(load_config(args.config), args.out)
    print((run.out / "summary.txt").read_text())


if __name__ == "__main__":
    main()
