"""Test double for the external model protocol.

Reads rows of space-separated floats and prints their sum, one line per row.
``--nan-row R`` prints ``nan`` for row R; ``--fail`` exits with status 5.
"""

import argparse
import sys

parser = argparse.ArgumentParser()
parser.add_argument("--nan-row", type=int, default=-1)
parser.add_argument("--fail", action="store_true")
args = parser.parse_args()

if args.fail:
    sys.stderr.write("deliberate failure\n")
    sys.exit(5)
out = []
for r, line in enumerate(sys.stdin):
    out.append("nan" if r == args.nan_row else repr(sum(float(v) for v in line.split())))
sys.stdout.write("\n".join(out) + ("\n" if out else ""))
