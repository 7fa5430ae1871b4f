"""Fitness evaluation: CNN training on a data split, plus cheap deterministic surrogates."""

from __future__ import annotations

import json
import re
import time
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from cgpcnn.data import Dataset, augment_batch
from cgpcnn.errors import (
    EpochOutOfRange,
    InvalidArchitecture,
    OutOfMemoryBudget,
    TrainingDiverged,
    UnknownSurrogate,
)
from cgpcnn.genome import Genotype
from cgpcnn.nn.network import Network
from cgpcnn.nn.optim import Adam, SGDMomentum
from cgpcnn.phenotype import DEFAULT_MEMORY_BUDGET, LayerGraph, decode, estimate_memory, infer_shapes

OUT_OF_MEMORY = "OutOfMemoryBudget"
INVALID_ARCHITECTURE = "InvalidArchitecture"
DIVERGED = "Diverged"
EVALUATOR_ERROR = "EvaluatorError"


@dataclass(frozen=True)
class TrainConfig:
    optimizer: str = "Adam"  # or "SgdMomentum"
    initial_lr: float = 0.01
    lr_schedule: tuple[tuple[int, float], ...] = ((30, 0.001),)
    epochs: int = 50
    batch_size: int = 128
    weight_decay: float = 1e-4
    augmentation: bool = True
    fitness_window: int = 10
    momentum: float = 0.9

    def __post_init__(self):
        if self.optimizer not in ("Adam", "SgdMomentum"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.epochs < 1 or self.batch_size < 1 or self.fitness_window < 1:
            raise ValueError("epochs, batch_size and fitness_window must be positive")
        object.__setattr__(self, "lr_schedule", tuple(sorted((int(e), float(lr)) for e, lr in self.lr_schedule)))

    @classmethod
    def search(cls, **overrides) -> "TrainConfig":
        return replace(cls(), **overrides)

    @classmethod
    def retrain(cls, **overrides) -> "TrainConfig":
        base = cls(
            optimizer="SgdMomentum",
            initial_lr=0.01,
            lr_schedule=((5, 0.1), (250, 0.01), (375, 0.001)),
            epochs=500,
            weight_decay=5e-4,
            fitness_window=10,
        )
        return replace(base, **overrides)

    @classmethod
    def desk(cls, **overrides) -> "TrainConfig":
        """Minutes-scale search profile: one epoch, no augmentation, constant learning rate."""
        base = cls(lr_schedule=(), epochs=1, batch_size=64, augmentation=False, fitness_window=1)
        return replace(base, **overrides)


def lr_at(cfg: TrainConfig, epoch: int) -> float:
    """Learning rate in effect during ``epoch`` (1-based); change points take effect at their epoch."""
    if not 1 <= epoch <= cfg.epochs:
        raise EpochOutOfRange(f"epoch {epoch} outside 1..{cfg.epochs}")
    lr = cfg.initial_lr
    for start, value in cfg.lr_schedule:
        if epoch >= start:
            lr = value
    return lr


def fitness_from_trace(accuracies, window: int) -> float:
    """Maximum over the trailing ``window`` validation accuracies."""
    if not len(accuracies):
        return 0.0
    return float(max(accuracies[-window:]))


@dataclass
class FitnessResult:
    fitness: float
    val_accuracies: list = field(default_factory=list)
    test_accuracy: float | None = None
    param_count: int = 0
    wall_time: float = 0.0
    failure_reason: str | None = None
    epochs_trained: int = 0

    @classmethod
    def failed(cls, reason, param_count=0, wall_time=0.0, val_accuracies=(), epochs_trained=0):
        return cls(0.0, list(val_accuracies), None, param_count, wall_time, reason, epochs_trained)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


@dataclass(frozen=True)
class DataSplit:
    train: Dataset
    val: Dataset

    def __post_init__(self):
        if self.train.image_shape != self.val.image_shape:
            raise ValueError("train and validation images differ in shape")


def build_network(graph: LayerGraph, rng, memory_budget=DEFAULT_MEMORY_BUDGET, batch_size=128, dtype=np.float32):
    """Instantiate a He-initialised network, refusing graphs whose memory estimate exceeds the budget."""
    need = estimate_memory(graph, batch_size).total_bytes
    if memory_budget is not None and need > memory_budget:
        raise OutOfMemoryBudget(need, memory_budget)
    return Network(graph, rng, dtype=dtype)


def _make_optimizer(cfg: TrainConfig):
    if cfg.optimizer == "Adam":
        return Adam(lr=cfg.initial_lr, weight_decay=cfg.weight_decay)
    return SGDMomentum(lr=cfg.initial_lr, momentum=cfg.momentum, weight_decay=cfg.weight_decay)


def train_network(net: Network, train: Dataset, cfg: TrainConfig, rng, val: Dataset | None = None, log=None):
    """Minibatch training; returns per-epoch validation accuracies (empty without ``val``)."""
    opt = _make_optimizer(cfg)
    params = net.parameters()
    n = len(train)
    accuracies = []
    for epoch in range(1, cfg.epochs + 1):
        opt.lr = lr_at(cfg, epoch)
        order = rng.permutation(n)
        losses = []
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            x = train.images[idx]
            if cfg.augmentation:
                x = augment_batch(x, rng)
            losses.append(net.loss_and_grad(x, train.labels[idx], train=True))
            opt.step(params, net.gradients())
        if val is not None:
            accuracies.append(net.accuracy(val.images, val.labels))
        if log is not None:
            log(epoch, float(np.mean(losses)), accuracies[-1] if accuracies else None)
    return accuracies


def evaluate(
    arch: Genotype,
    data: DataSplit,
    cfg: TrainConfig,
    rng,
    memory_budget=DEFAULT_MEMORY_BUDGET,
) -> FitnessResult:
    """Train the decoded architecture and score it by trailing-window validation accuracy.

    Shape failures, memory-budget overruns and divergence come back as a
    zero-fitness result carrying the reason; nothing is raised.
    """
    start = time.perf_counter()
    graph = decode(arch, data.train.class_count)
    try:
        graph = infer_shapes(graph, data.train.image_shape)
    except InvalidArchitecture:
        return FitnessResult.failed(INVALID_ARCHITECTURE, wall_time=time.perf_counter() - start)
    n_params = graph.param_count()
    try:
        net = build_network(graph, rng, memory_budget, cfg.batch_size)
    except OutOfMemoryBudget:
        return FitnessResult.failed(OUT_OF_MEMORY, n_params, time.perf_counter() - start)
    accuracies = []

    def record(epoch, loss, acc):
        accuracies.append(acc)

    try:
        with np.errstate(over="ignore", invalid="ignore"):
            train_network(net, data.train, cfg, rng, data.val, log=record)
    except TrainingDiverged:
        return FitnessResult.failed(DIVERGED, n_params, time.perf_counter() - start, accuracies, len(accuracies))
    return FitnessResult(
        fitness=fitness_from_trace(accuracies, cfg.fitness_window),
        val_accuracies=accuracies,
        param_count=n_params,
        wall_time=time.perf_counter() - start,
        epochs_trained=cfg.epochs,
    )


class TrainingEvaluator:
    """Evaluator-contract adapter: ``evaluator(genotype, rng) -> FitnessResult``."""

    def __init__(self, data: DataSplit, cfg: TrainConfig, memory_budget=DEFAULT_MEMORY_BUDGET):
        self.data = data
        self.cfg = cfg
        self.memory_budget = memory_budget
        self.id = f"train:{cfg.optimizer}:{cfg.epochs}"

    def __call__(self, genotype, rng):
        return evaluate(genotype, self.data, self.cfg, rng, self.memory_budget)


# -- surrogates ------------------------------------------------------------------

_TARGET = re.compile(r"^target_active_count[(:](\d+)\)?$")


def parse_surrogate(surrogate_id: str):
    if surrogate_id in ("active_count_ratio", "depth_reward"):
        return surrogate_id, None
    match = _TARGET.match(surrogate_id)
    if match:
        return "target_active_count", int(match.group(1))
    raise UnknownSurrogate(f"unknown surrogate {surrogate_id!r}")


def _depth(graph: LayerGraph) -> int:
    """Number of function nodes on the longest input-to-output path."""
    depth = [0] * len(graph.nodes)
    for node in graph.nodes:
        if node.inputs:
            depth[node.index] = max(depth[i] for i in node.inputs) + 1
    return depth[-1] - 1


def surrogate_evaluate(arch: Genotype, surrogate_id: str, input_shape=(32, 32, 3), n_classes=10) -> FitnessResult:
    """Deterministic structural fitness in [0, 1] computed from the decoded graph alone."""
    kind, target = parse_surrogate(surrogate_id)
    graph = decode(arch, n_classes)
    n_active = len(graph.nodes) - arch.config.n_inputs - 1
    max_active = arch.config.max_active
    if kind == "active_count_ratio":
        fitness = n_active / max_active
    elif kind == "target_active_count":
        fitness = 1.0 / (1.0 + abs(n_active - target))
    else:
        fitness = min(1.0, _depth(graph) / max_active)
    try:
        params = infer_shapes(graph, input_shape).param_count()
    except InvalidArchitecture:
        params = 0
    return FitnessResult(fitness=float(fitness), param_count=params)


class SurrogateEvaluator:
    def __init__(self, surrogate_id: str, input_shape=(32, 32, 3), n_classes=10):
        parse_surrogate(surrogate_id)
        self.id = f"surrogate:{surrogate_id}"
        self.surrogate_id = surrogate_id
        self.input_shape = tuple(input_shape)
        self.n_classes = n_classes

    def __call__(self, genotype, rng=None):
        return surrogate_evaluate(genotype, self.surrogate_id, self.input_shape, self.n_classes)
