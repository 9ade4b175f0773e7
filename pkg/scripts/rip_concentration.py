"""Empirical Gen-RIP failure fraction as the measurement count is scaled.

Random (2, 4, 8) network on a 16x16 grid, p = p*.  For each factor f the
suite uses m = f * (rate at delta = 1/2, eps = 0.1).  CSV goes to stdout.

Usage:
    python scripts/rip_concentration.py [--trials 100] [--diffs 200]
"""

import argparse
import csv
import sys

from gencs.coherence import optimal_distribution, subspace_coherence
from gencs.generator import random_model, range_subspace_basis
from gencs.measurement import DFT2
from gencs.riptest import rip_trial_suite

FACTORS = (0.001, 0.003, 0.01, 0.03, 0.1, 0.3, 1.0)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--trials", type=int, default=100)
    ap.add_argument("--diffs", type=int, default=200)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    model = random_model((2, 4, 8), (16, 16), seed=args.seed)
    p = optimal_distribution(subspace_coherence(range_subspace_basis(model), DFT2((16, 16))))
    out = csv.writer(sys.stdout)
    out.writerow(["m_factor", "m", "failure_fraction", "mean_deviation", "max_deviation"])
    for f in FACTORS:
        rep = rip_trial_suite(model, p, 0.5, 0.1, args.trials, args.diffs, args.seed, m_factor=f)
        out.writerow([f, rep.m, rep.failure_fraction, rep.deviations.mean(), rep.deviations.max()])


if __name__ == "__main__":
    main()
