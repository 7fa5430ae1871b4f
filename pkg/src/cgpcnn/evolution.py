"""Modified (1+lambda) evolution strategy with neutral drift and resumable checkpoints.

Two random streams drive a run. Mutations draw from one generator whose
state lives in the checkpoint. Each evaluation gets its own generator
derived from ``(seed, generation, offspring index)``, so results do not
depend on evaluation order or on how many worker threads run them.
"""

from __future__ import annotations

import csv
import io
import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from cgpcnn.errors import CorruptCheckpoint, GenotypeFormatError, InvalidLambda, VersionMismatch
from cgpcnn.evaluator import EVALUATOR_ERROR, FitnessResult
from cgpcnn.genome import CgpConfig, Genotype, forced_mutation, neutral_mutation, random_genotype

CHECKPOINT_TAG = "cgpcnn-checkpoint"
CHECKPOINT_VERSION = 1
CSV_HEADER = (
    "generation",
    "parent_fitness",
    "offspring_fitnesses",
    "parent_active_count",
    "parent_param_count",
    "elapsed_seconds",
)
_EVAL_STREAM = 1  # spawn-key prefix separating evaluation streams from the mutation stream


def mutation_rng(seed: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed))


def eval_rng(seed: int, generation: int, index: int) -> np.random.Generator:
    """Independent generator for one evaluation; generation 0 is the initial parent."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(_EVAL_STREAM, generation, index)))


@dataclass(frozen=True)
class Individual:
    genotype: Genotype
    fitness: float | None = None
    epochs_trained: int = 0
    wall_time: float = 0.0
    param_count: int = 0
    failure_reason: str | None = None

    @classmethod
    def from_result(cls, genotype: Genotype, result: FitnessResult) -> "Individual":
        return cls(
            genotype,
            float(result.fitness),
            result.epochs_trained,
            float(result.wall_time),
            int(result.param_count),
            result.failure_reason,
        )

    def to_dict(self) -> dict:
        return {
            "genotype": self.genotype.to_text(),
            "fitness": self.fitness,
            "epochs_trained": self.epochs_trained,
            "wall_time": self.wall_time,
            "param_count": self.param_count,
            "failure_reason": self.failure_reason,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Individual":
        return cls(
            Genotype.from_text(d["genotype"]),
            d["fitness"],
            int(d["epochs_trained"]),
            float(d["wall_time"]),
            int(d["param_count"]),
            d["failure_reason"],
        )


@dataclass(frozen=True)
class GenerationRecord:
    generation: int
    parent_fitness: float
    offspring_fitnesses: tuple[float, ...]
    parent_active_count: int
    parent_param_count: int
    elapsed_seconds: float

    def csv_row(self) -> list[str]:
        return [
            str(self.generation),
            repr(self.parent_fitness),
            ";".join(repr(f) for f in self.offspring_fitnesses),
            str(self.parent_active_count),
            str(self.parent_param_count),
            f"{self.elapsed_seconds:.3f}",
        ]


@dataclass
class EvolutionState:
    parent: Individual
    generation: int
    lam: int
    seed: int
    rng: np.random.Generator
    history: list[GenerationRecord] = field(default_factory=list)
    evaluator_id: str = ""
    offspring: list[Individual] = field(default_factory=list)  # last generation's, not checkpointed

    @property
    def elapsed(self) -> float:
        return self.history[-1].elapsed_seconds if self.history else 0.0

    def __eq__(self, other):
        if not isinstance(other, EvolutionState):
            return NotImplemented
        return (
            self.parent == other.parent
            and (self.generation, self.lam, self.seed, self.evaluator_id)
            == (other.generation, other.lam, other.seed, other.evaluator_id)
            and self.rng.bit_generator.state == other.rng.bit_generator.state
            and self.history == other.history
        )


def select_elite(parent: Individual, offspring: list[Individual]) -> Individual:
    """Highest fitness wins; an offspring beats an equally fit parent; the first of tied offspring wins."""
    best = parent
    for child in offspring:
        if child.fitness > best.fitness or (best is parent and child.fitness == parent.fitness):
            best = child
    return best


def _safe_evaluate(evaluator, genotype, rng) -> FitnessResult:
    try:
        return evaluator(genotype, rng)
    except Exception:  # one broken candidate must not end the run
        return FitnessResult.failed(EVALUATOR_ERROR)


def _evaluate_all(evaluator, genotypes, seed, generation, workers):
    rngs = [eval_rng(seed, generation, i) for i in range(len(genotypes))]
    if workers is None or workers <= 1 or len(genotypes) == 1:
        return [_safe_evaluate(evaluator, g, r) for g, r in zip(genotypes, rngs)]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda gr: _safe_evaluate(evaluator, *gr), zip(genotypes, rngs)))


def _record(state_gen, parent, offspring, elapsed):
    return GenerationRecord(
        state_gen,
        parent.fitness,
        tuple(child.fitness for child in offspring),
        parent.genotype.n_active,
        parent.param_count,
        elapsed,
    )


def initialize(config: CgpConfig, evaluator, seed: int, lam: int = 2) -> EvolutionState:
    """Draw and evaluate the first parent (generation 0)."""
    if lam < 1:
        raise InvalidLambda(f"lambda must be at least 1, got {lam}")
    rng = mutation_rng(seed)
    genotype = random_genotype(config, rng)
    result = _safe_evaluate(evaluator, genotype, eval_rng(seed, 0, 0))
    parent = Individual.from_result(genotype, result)
    record = _record(0, parent, [], parent.wall_time)
    return EvolutionState(parent, 0, lam, seed, rng, [record], getattr(evaluator, "id", ""))


def step(state: EvolutionState, evaluator, workers: int | None = None) -> EvolutionState:
    """One generation: forced-mutate lambda offspring, evaluate them, drift the parent if none improved, select.

    Advances ``state.rng`` in place.
    """
    if state.lam < 1:
        raise InvalidLambda(f"lambda must be at least 1, got {state.lam}")
    gen = state.generation + 1
    rng = state.rng
    parent = state.parent
    children = [forced_mutation(parent.genotype, rng) for _ in range(state.lam)]
    results = _evaluate_all(evaluator, children, state.seed, gen, workers)
    offspring = [Individual.from_result(g, r) for g, r in zip(children, results)]
    if max(child.fitness for child in offspring) <= parent.fitness:
        parent = replace(parent, genotype=neutral_mutation(parent.genotype, rng))
    elite = select_elite(parent, offspring)
    elapsed = state.elapsed + sum(child.wall_time for child in offspring)
    history = state.history + [_record(gen, elite, offspring, elapsed)]
    return EvolutionState(elite, gen, state.lam, state.seed, rng, history, state.evaluator_id, offspring)


def evolve(
    config: CgpConfig,
    evaluator,
    max_generations: int,
    seed: int = 0,
    lam: int = 2,
    checkpoint_sink=None,
    state: EvolutionState | None = None,
    workers: int | None = None,
    on_generation=None,
) -> EvolutionState:
    """Run until ``max_generations`` generations have completed.

    Pass a loaded ``state`` to resume. ``checkpoint_sink`` (a path or a
    callable taking the state) receives the state after every generation,
    as does ``on_generation``.
    """
    if max_generations < 1:
        raise ValueError("max_generations must be at least 1")
    if state is None:
        state = initialize(config, evaluator, seed, lam)
        _emit(state, checkpoint_sink, on_generation)
    while state.generation < max_generations:
        state = step(state, evaluator, workers)
        _emit(state, checkpoint_sink, on_generation)
    return state


def _emit(state, sink, callback):
    if sink is not None:
        if callable(sink):
            sink(state)
        else:
            save_checkpoint(state, sink)
    if callback is not None:
        callback(state)


# -- persistence ------------------------------------------------------------------

def history_csv(history) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for record in history:
        writer.writerow(record.csv_row())
    return buf.getvalue()


def _atomic_write(path, text: str) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


def write_history(history, path) -> None:
    _atomic_write(path, history_csv(history))


def checkpoint_dict(state: EvolutionState) -> dict:
    return {
        "format": CHECKPOINT_TAG,
        "version": CHECKPOINT_VERSION,
        "seed": state.seed,
        "lambda": state.lam,
        "generation": state.generation,
        "evaluator_id": state.evaluator_id,
        "parent": state.parent.to_dict(),
        "rng_state": state.rng.bit_generator.state,
        "history": [
            {
                "generation": r.generation,
                "parent_fitness": r.parent_fitness,
                "offspring_fitnesses": list(r.offspring_fitnesses),
                "parent_active_count": r.parent_active_count,
                "parent_param_count": r.parent_param_count,
                "elapsed_seconds": r.elapsed_seconds,
            }
            for r in state.history
        ],
    }


def dumps_checkpoint(state: EvolutionState) -> str:
    return json.dumps(checkpoint_dict(state), sort_keys=True, indent=1) + "\n"


def save_checkpoint(state: EvolutionState, path) -> None:
    _atomic_write(path, dumps_checkpoint(state))


def loads_checkpoint(text: str) -> EvolutionState:
    try:
        d = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CorruptCheckpoint(f"checkpoint is not valid JSON: {exc}") from exc
    if not isinstance(d, dict) or d.get("format") != CHECKPOINT_TAG:
        raise CorruptCheckpoint("not a cgpcnn checkpoint")
    if d.get("version") != CHECKPOINT_VERSION:
        raise VersionMismatch(f"checkpoint version {d.get('version')} != {CHECKPOINT_VERSION}")
    try:
        bitgen = getattr(np.random, d["rng_state"]["bit_generator"])()
        bitgen.state = d["rng_state"]
        rng = np.random.Generator(bitgen)
        history = [
            GenerationRecord(
                int(r["generation"]),
                r["parent_fitness"],
                tuple(r["offspring_fitnesses"]),
                int(r["parent_active_count"]),
                int(r["parent_param_count"]),
                r["elapsed_seconds"],
            )
            for r in d["history"]
        ]
        return EvolutionState(
            Individual.from_dict(d["parent"]),
            int(d["generation"]),
            int(d["lambda"]),
            int(d["seed"]),
            rng,
            history,
            d["evaluator_id"],
        )
    except (KeyError, TypeError, ValueError, AttributeError, GenotypeFormatError) as exc:
        raise CorruptCheckpoint(f"malformed checkpoint: {exc}") from exc


def load_checkpoint(path) -> EvolutionState:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except UnicodeDecodeError as exc:
        raise CorruptCheckpoint(f"{path} is not text") from exc
    return loads_checkpoint(text)
