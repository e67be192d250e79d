"""Evaluation counts: FD-based DerSHAP (N(d+1)) against subset enumeration (2^d).

Counts model calls with the instrumented counter; nothing is timed.

    python scripts/complexity_counts.py --n 1000 --dims 2 4 8 16 20
"""

import argparse

import numpy as np

from dershap.expr import parse_expression
from dershap.gradients import EvalCounter, FDProvider
from dershap.inputs import IndependentInputs, Uniform
from dershap.measures import dershap
from dershap.oracles import shapley_exact
from dershap.spectral import estimate_c_mc


def counts(d: int, n: int, seed: int) -> tuple[int, int]:
    names = [f"x{i}" for i in range(d)]
    expr = parse_expression(" + ".join(f"sin({v})*{v}" for v in names), names)
    spec = IndependentInputs((Uniform(0.0, 1.0),) * d)
    fd = EvalCounter()
    c = estimate_c_mc(FDProvider(expr, d, counter=fd), spec, n, seed)
    dershap(c)
    oracle = EvalCounter()
    shapley_exact(np.abs(c.entries), counter=oracle)
    return fd.model_evaluations, oracle.model_evaluations


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=1000)
    ap.add_argument("--dims", type=int, nargs="+", default=[2, 4, 8, 16])
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    print(f"{'d':>3s} {'FD evals':>10s} {'N(d+1)':>10s} {'subsets':>10s}")
    for d in args.dims:
        fd, enum = counts(d, args.n, args.seed)
        assert fd == args.n * (d + 1) and enum == 2**d
        print(f"{d:3d} {fd:10d} {args.n * (d + 1):10d} {enum:10d}")


if __name__ == "__main__":
    main()
