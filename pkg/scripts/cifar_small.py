"""Small-data search on real CIFAR-10 (4,500/500 split, 8 epochs per candidate, reduced channels).

Needs the binary CIFAR-10 files under $CGPNAS_DATA_DIR. Expect hours on a CPU.

    CGPNAS_DATA_DIR=~/data/cifar-10-batches-bin python scripts/cifar_small.py --out runs/small
"""

import argparse
import sys

from cgpcnn.cli import main as cli_main


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--generations", type=int, default=30)
    ap.add_argument("--out", default="runs/small")
    args = ap.parse_args()
    argv = ["search", "--scenario", "small", "--seed", str(args.seed),
            "--set", f"generations={args.generations}", "--out", args.out]
    code = cli_main(argv)
    if code == 0:
        code = cli_main(["retrain", f"{args.out}/best.genotype", "--scenario", "small", "--seed", str(args.seed),
                         "--out", f"{args.out}/retrain"])
    sys.exit(code)


if __name__ == "__main__":
    main()
