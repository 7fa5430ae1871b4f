"""Desk-scale end-to-end run: search on the synthetic gratings for several seeds, then retrain the best.

    python scripts/desk_pipeline.py --seeds 0 1 2 3 4 --out runs/desk
"""

import argparse
import json
import time
from pathlib import Path

import numpy as np

from cgpcnn.data import SyntheticSpec, mean_subtract, synthetic_dataset
from cgpcnn.desk import DESK_IMAGE_SIZE, desk_data, run_desk_search
from cgpcnn.evaluator import TrainConfig, build_network, train_network
from cgpcnn.evolution import write_history
from cgpcnn.phenotype import decode, infer_shapes, to_dot


def retrain(genotype, seed):
    train = synthetic_dataset(SyntheticSpec(2, 2500, DESK_IMAGE_SIZE), 0)
    test = synthetic_dataset(SyntheticSpec(2, 1000, DESK_IMAGE_SIZE), 1)
    train, test, _ = mean_subtract(train, test)
    graph = infer_shapes(decode(genotype, 2), train.image_shape)
    cfg = TrainConfig.retrain(lr_schedule=((3, 0.05), (7, 0.005)), epochs=10, batch_size=64, augmentation=False)
    rng = np.random.default_rng(seed)
    net = build_network(graph, rng, batch_size=cfg.batch_size)
    train_network(net, train, cfg, rng)
    return net.accuracy(test.images, test.labels), graph


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    ap.add_argument("--generations", type=int, default=30)
    ap.add_argument("--out", default="runs/desk")
    ap.add_argument("--no-retrain", action="store_true")
    args = ap.parse_args()

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    data = desk_data(0)
    summary = []
    t0 = time.perf_counter()
    for seed in args.seeds:
        start = time.perf_counter()
        state = run_desk_search(
            seed, args.generations, data=data,
            on_generation=lambda s: print(f"seed {seed} gen {s.generation:3d} parent {s.parent.fitness:.3f}", flush=True),
        )
        write_history(state.history, out / f"history-seed{seed}.csv")
        (out / f"best-seed{seed}.genotype").write_text(state.parent.genotype.to_text())
        row = {
            "seed": seed,
            "initial_fitness": state.history[0].parent_fitness,
            "final_fitness": state.parent.fitness,
            "active_nodes": state.parent.genotype.n_active,
            "search_seconds": round(time.perf_counter() - start, 1),
        }
        if not args.no_retrain:
            acc, graph = retrain(state.parent.genotype, seed)
            (out / f"best-seed{seed}.dot").write_text(to_dot(graph))
            row["test_accuracy"] = acc
            row["param_count"] = graph.param_count()
        summary.append(row)
        print(json.dumps(row), flush=True)

    gains = [r["final_fitness"] - r["initial_fitness"] for r in summary]
    improved = sum(g >= 0.10 for g in gains)
    print(f"{improved}/{len(gains)} seeds improved by >= 0.10 in {(time.perf_counter() - t0) / 60:.1f} min")
    (out / "summary.json").write_text(json.dumps(summary, indent=1) + "\n")


if __name__ == "__main__":
    main()
