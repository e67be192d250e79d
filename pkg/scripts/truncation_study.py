"""Eigen-truncated DerSHAP: measured l2 error against the (d-k) eps sqrt(d) bound.

    python scripts/truncation_study.py --matrices 100 --d 8
"""

import argparse
import math

import numpy as np

from dershap.measures import dershap, dershap_truncated
from dershap.validation import random_psd


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--matrices", type=int, default=100)
    ap.add_argument("--d", type=int, default=8)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    rng = np.random.default_rng(args.seed)
    d = args.d
    errs = np.zeros((args.matrices, d))
    bounds = np.zeros((args.matrices, d))
    for r in range(args.matrices):
        c = random_psd(rng, d, int(rng.integers(1, d + 1)))
        phi = dershap(c).values
        for k in range(1, d + 1):
            tr = dershap_truncated(c, k)
            errs[r, k - 1] = np.linalg.norm(phi - tr.values)
            bounds[r, k - 1] = (d - k) * tr.eps * math.sqrt(d)
    held = int((errs <= bounds).sum())
    print(f"bound held in {held}/{errs.size} instances")
    print(f"{'k':>3s} {'median err':>12s} {'median bound':>13s} {'max err/bound':>14s}")
    for k in range(1, d + 1):
        e, b = errs[:, k - 1], bounds[:, k - 1]
        ratio = np.max(np.divide(e, b, out=np.zeros_like(e), where=b > 0))
        print(f"{k:3d} {np.median(e):12.3e} {np.median(b):13.3e} {ratio:14.3e}")


if __name__ == "__main__":
    main()
