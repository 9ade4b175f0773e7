"""Leakage theta outside nested low-frequency supports, for random decoders.

Supports are the l lowest radial frequencies of a 16x16 DFT.  Prints one
CSV row per (seed, l).

Usage:
    python scripts/balancing_decay.py [--seeds 5]
"""

import argparse
import csv
import sys

import numpy as np

from gencs.acceptance import radial_order
from gencs.coherence import balancing_theta
from gencs.generator import random_model, range_subspace_basis, smooth_random_model
from gencs.measurement import DFT2, SamplingDistribution


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--seeds", type=int, default=5)
    args = ap.parse_args()

    op = DFT2((16, 16))
    order = radial_order(16)
    out = csv.writer(sys.stdout)
    out.writerow(["decoder", "seed", "support", "theta"])
    for name, make in (("random", random_model), ("smooth", smooth_random_model)):
        for seed in range(args.seeds):
            B = range_subspace_basis(make((4, 8, 16), (16, 16), seed=seed))
            for ell in range(16, 257, 16):
                mask = np.zeros(256, bool)
                mask[order[:ell]] = True
                out.writerow([name, seed, ell, balancing_theta(B, SamplingDistribution.uniform_on(mask), op)])


if __name__ == "__main__":
    main()
