import json

import numpy as np
import pytest

from cgpcnn.errors import CorruptCheckpoint, InvalidLambda, VersionMismatch
from cgpcnn.evaluator import EVALUATOR_ERROR, FitnessResult, SurrogateEvaluator
from cgpcnn.evolution import (
    Individual,
    dumps_checkpoint,
    evolve,
    history_csv,
    initialize,
    load_checkpoint,
    loads_checkpoint,
    save_checkpoint,
    select_elite,
    step,
)
from cgpcnn.genome import CgpConfig, active_nodes, random_genotype, structure_key

CFG = CgpConfig(n_rows=3, n_cols=8, levels_back=4, min_active=2, max_active=20)


def ind(fitness, seed=0):
    return Individual(random_genotype(CFG, np.random.default_rng(seed)), fitness)


class Scripted:
    """Returns queued fitness values in call order and counts calls."""

    def __init__(self, values):
        self.values = list(values)
        self.calls = 0

    def __call__(self, genotype, rng):
        self.calls += 1
        return FitnessResult(self.values.pop(0))


class Noisy:
    """Fitness drawn from the evaluation stream; used to check elitism under noise."""

    id = "noisy"

    def __call__(self, genotype, rng):
        return FitnessResult(float(rng.random()), wall_time=0.25)


def test_select_elite_examples():
    p = ind(0.5)
    a, b = ind(0.7, 1), ind(0.6, 2)
    assert select_elite(p, [a, b]) is a
    a, b = ind(0.5, 1), ind(0.3, 2)
    assert select_elite(p, [a, b]) is a  # an equal offspring replaces the parent
    a, b = ind(0.6, 1), ind(0.6, 2)
    assert select_elite(p, [a, b]) is a  # first tied offspring wins
    assert select_elite(p, [ind(0.1, 1), ind(0.2, 2)]) is p


@pytest.mark.parametrize("lam", [0, -1])
def test_invalid_lambda(lam):
    with pytest.raises(InvalidLambda):
        initialize(CFG, Scripted([0.5]), 0, lam)


def test_neutral_drift_keeps_fitness_and_structure():
    ev = Scripted([0.5, 0.2, 0.3])
    state = initialize(CFG, ev, 0, 2)
    before = state.parent
    state = step(state, ev)
    assert state.parent.fitness == 0.5
    assert active_nodes(state.parent.genotype) == active_nodes(before.genotype)
    assert structure_key(state.parent.genotype) == structure_key(before.genotype)
    assert state.history[-1].offspring_fitnesses == (0.2, 0.3)


def test_better_offspring_replaces_parent():
    ev = Scripted([0.5, 0.4, 0.9])
    state = step(initialize(CFG, ev, 0, 2), ev)
    assert state.parent is state.offspring[1] and state.parent.fitness == 0.9


def test_evaluator_call_count():
    ev = Scripted([0.1] * 100)
    evolve(CFG, ev, max_generations=7, seed=1, lam=3)
    assert ev.calls == 7 * 3 + 1


@pytest.mark.parametrize("seed", range(5))
def test_elitism_under_noise(seed):
    state = evolve(CFG, Noisy(), max_generations=40, seed=seed, lam=2)
    fits = [r.parent_fitness for r in state.history]
    assert all(b >= a for a, b in zip(fits, fits[1:]))
    assert len(state.history) == 41


def test_evaluator_exception_becomes_zero():
    class Flaky:
        def __init__(self):
            self.n = 0

        def __call__(self, genotype, rng):
            self.n += 1
            if self.n == 2:
                raise RuntimeError("boom")
            return FitnessResult(0.4)

    state = initialize(CFG, (ev := Flaky()), 0, 2)
    state = step(state, ev)
    assert state.offspring[0].fitness == 0.0
    assert state.offspring[0].failure_reason == EVALUATOR_ERROR
    assert state.offspring[1].fitness == 0.4


def test_workers_do_not_change_results():
    a = evolve(CFG, Noisy(), 15, seed=3, lam=4)
    b = evolve(CFG, Noisy(), 15, seed=3, lam=4, workers=3)
    assert a == b


def test_checkpoint_round_trip(tmp_path):
    state = evolve(CFG, Noisy(), 5, seed=2)
    save_checkpoint(state, tmp_path / "c.json")
    back = load_checkpoint(tmp_path / "c.json")
    assert back == state
    assert dumps_checkpoint(back) == dumps_checkpoint(state)
    assert back.elapsed == pytest.approx(0.25 * (1 + 5 * 2))  # initial parent plus ten offspring


def test_resume_matches_uninterrupted(tmp_path):
    full = evolve(CFG, Noisy(), 20, seed=9)
    evolve(CFG, Noisy(), 10, seed=9, checkpoint_sink=tmp_path / "c.json")
    resumed = evolve(CFG, Noisy(), 20, state=load_checkpoint(tmp_path / "c.json"))
    assert resumed == full
    assert history_csv(resumed.history) == history_csv(full.history)


def test_checkpoint_sink_callable():
    seen = []
    evolve(CFG, Noisy(), 4, seed=0, checkpoint_sink=lambda s: seen.append(s.generation))
    assert seen == [0, 1, 2, 3, 4]


def test_truncated_checkpoint(tmp_path):
    text = dumps_checkpoint(evolve(CFG, Noisy(), 3, seed=0))
    with pytest.raises(CorruptCheckpoint):
        loads_checkpoint(text[: len(text) // 2])
    with pytest.raises(CorruptCheckpoint):
        loads_checkpoint('{"format": "something-else"}')
    d = json.loads(text)
    del d["parent"]["genotype"]
    with pytest.raises(CorruptCheckpoint):
        loads_checkpoint(json.dumps(d))
    (tmp_path / "bin").write_bytes(b"\xff\xfe\x00")
    with pytest.raises(CorruptCheckpoint):
        load_checkpoint(tmp_path / "bin")


def test_version_mismatch():
    d = json.loads(dumps_checkpoint(evolve(CFG, Noisy(), 2, seed=0)))
    d["version"] += 1
    with pytest.raises(VersionMismatch):
        loads_checkpoint(json.dumps(d))


def test_csv_is_reproducible():
    ev = SurrogateEvaluator("target_active_count(12)")
    a = history_csv(evolve(CFG, ev, 30, seed=4).history)
    b = history_csv(evolve(CFG, ev, 30, seed=4).history)
    assert a == b
    lines = a.splitlines()
    assert lines[0] == "generation,parent_fitness,offspring_fitnesses,parent_active_count,parent_param_count,elapsed_seconds"
    assert len(lines) == 32
    assert lines[1].startswith("0,") and lines[1].split(",")[2] == ""


def test_different_seeds_differ():
    ev = SurrogateEvaluator("active_count_ratio")
    assert evolve(CFG, ev, 10, seed=0) != evolve(CFG, ev, 10, seed=1)


def test_surrogate_search_approaches_target():
    cfg = CgpConfig(n_rows=5, n_cols=30, levels_back=10, min_active=10, max_active=50)
    state = evolve(cfg, SurrogateEvaluator("target_active_count(25)"), 200, seed=0)
    assert abs(state.parent.genotype.n_active - 25) <= 2
