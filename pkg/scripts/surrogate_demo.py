"""Surrogate-mode search: no training, the fitness rewards closeness to a target active-node count.

    python scripts/surrogate_demo.py --target 25 --seeds 10 --generations 200
"""

import argparse
import time

from cgpcnn.evaluator import SurrogateEvaluator
from cgpcnn.evolution import evolve
from cgpcnn.genome import CgpConfig


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--target", type=int, default=25)
    ap.add_argument("--seeds", type=int, default=10)
    ap.add_argument("--generations", type=int, default=200)
    ap.add_argument("--lam", type=int, default=2)
    args = ap.parse_args()

    ev = SurrogateEvaluator(f"target_active_count({args.target})")
    start = time.perf_counter()
    hits = 0
    for seed in range(args.seeds):
        state = evolve(CgpConfig(), ev, args.generations, seed=seed, lam=args.lam)
        first = state.history[0].parent_active_count
        final = state.parent.genotype.n_active
        hits += abs(final - args.target) <= 2
        print(f"seed {seed}: active nodes {first} -> {final}  fitness {state.parent.fitness:.3f}")
    print(f"{hits}/{args.seeds} seeds within 2 of {args.target} in {time.perf_counter() - start:.1f}s")


if __name__ == "__main__":
    main()
