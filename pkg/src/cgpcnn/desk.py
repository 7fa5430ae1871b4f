"""Desk-scale profile: a small grid, a reduced channel catalog and the easy synthetic task."""

from __future__ import annotations

from cgpcnn.data import SyntheticSpec, mean_subtract, preset, split, synthetic_dataset
from cgpcnn.evaluator import DataSplit, TrainConfig, TrainingEvaluator
from cgpcnn.evolution import EvolutionState, evolve
from cgpcnn.genome import CgpConfig

DESK_CHANNELS = (8, 16)
DESK_IMAGE_SIZE = 16
DESK_MEMORY_BUDGET = 256 * 1024**2


def desk_cgp_config(**overrides) -> CgpConfig:
    """3x10 grid with at least 8 active nodes; deep enough that random draws rarely solve the task."""
    base = dict(n_rows=3, n_cols=10, levels_back=4, min_active=8, max_active=15, channels=DESK_CHANNELS)
    base.update(overrides)
    return CgpConfig(**base)


def desk_train_config(**overrides) -> TrainConfig:
    return TrainConfig.desk(**overrides)


def desk_data(seed: int = 0, difficulty: str = "easy") -> DataSplit:
    """2,000/500 split of a 2-class 16x16 synthetic set, mean-subtracted with training statistics."""
    spec = preset("desk", seed)
    ds = synthetic_dataset(
        SyntheticSpec(classes=2, samples=spec.train_n + spec.val_n, image_size=DESK_IMAGE_SIZE, difficulty=difficulty),
        seed,
    )
    train, val = split(ds, spec)
    train, val, _ = mean_subtract(train, val)
    return DataSplit(train, val)


def run_desk_search(
    seed: int,
    generations: int = 30,
    lam: int = 2,
    data: DataSplit | None = None,
    on_generation=None,
) -> EvolutionState:
    """Search on the desk task with the training evaluator; the dataset is fixed across seeds by default."""
    data = data if data is not None else desk_data(0)
    evaluator = TrainingEvaluator(data, desk_train_config(), DESK_MEMORY_BUDGET)
    return evolve(desk_cgp_config(), evaluator, generations, seed=seed, lam=lam, on_generation=on_generation)
