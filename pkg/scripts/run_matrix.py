"""Run the four disturbed tests for all three controllers over several seeds.

Writes a full run directory through the CLI harness and prints the seed-mean
table with gaps relative to the Q-learning controller.

Usage: python scripts/run_matrix.py [--seeds 5] [--out runs/matrix]
"""

import argparse
import csv
import sys
from pathlib import Path

from platoon_perl import cli


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--seeds", type=int, default=5)
    p.add_argument("--out", type=Path, default=Path("runs/matrix"))
    args = p.parse_args()
    argv = ["run", "--matrix", "paper", "--out", str(args.out)]
    for s in range(args.seeds):
        argv += ["--seed", str(s)]
    code = cli.main(argv)
    with open(args.out / "table.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    head = f"{'scenario':<9} {'error':<10} {'controller':<9} {'CAE_p':>8} {'CAE_v':>7} " \
           f"{'MAE_p':>6} {'MAE_v':>6} {'gap CAE_p':>9}"
    print(head)
    for r in rows:
        print(f"{r['scenario']:<9} {r['error_kind']:<10} {r['controller']:<9} "
              f"{float(r['cae_p']):8.1f} {float(r['cae_v']):7.1f} {float(r['mae_p']):6.3f} "
              f"{float(r['mae_v']):6.3f} {float(r['gap_cae_p']):9.2f}")
    return code


if __name__ == "__main__":
    sys.exit(main())
