"""Command-line entry point: ``cgpcnn {search,retrain,export,eval,gradcheck}``.

Exit codes: 0 success, 1 failed check, 2 configuration error, 3 dataset
error, 4 genotype or shape error, 130 interrupted.
"""

from __future__ import annotations

import argparse
import json
import sys
import threading
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from cgpcnn import __version__
from cgpcnn.data import SyntheticSpec, data_dir, load_cifar10, mean_subtract, preset, split, synthetic_dataset
from cgpcnn.desk import DESK_CHANNELS, DESK_IMAGE_SIZE, DESK_MEMORY_BUDGET, desk_data
from cgpcnn.errors import (
    CgpError,
    CorruptCheckpoint,
    CorruptRecord,
    GenotypeFormatError,
    InvalidArchitecture,
    MissingFile,
    OutOfMemoryBudget,
    SpecInfeasible,
    UnknownFunctionSet,
    UnknownSurrogate,
    VersionMismatch,
)
from cgpcnn.evaluator import (
    DataSplit,
    SurrogateEvaluator,
    TrainConfig,
    TrainingEvaluator,
    build_network,
    evaluate,
    train_network,
)
from cgpcnn.evolution import evolve, load_checkpoint, save_checkpoint, write_history
from cgpcnn.genome import CgpConfig, Genotype
from cgpcnn.nn.gradcheck import check_all_kinds
from cgpcnn.nn.network import save_weights
from cgpcnn.phenotype import decode, infer_shapes, to_dot, to_json

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_CONFIG = 2
EXIT_DATASET = 3
EXIT_GENOTYPE = 4
EXIT_INTERRUPTED = 130


class ConfigError(Exception):
    pass


@dataclass(frozen=True)
class RunConfig:
    # genome
    n_rows: int = 5
    n_cols: int = 30
    levels_back: int = 10
    mutation_rate: float = 0.05
    min_active: int = 10
    max_active: int = 50
    function_set: str = "ConvSet"
    channels: tuple = (32, 64, 128)
    kernels: tuple = (3, 5)
    # search
    generations: int = 500
    lam: int = 2
    workers: int = 0  # 0 means one thread per offspring
    memory_budget: int = 2 * 1024**3
    search_optimizer: str = "Adam"
    search_lr: float = 0.01
    search_lr_schedule: tuple = ((30, 0.001),)
    search_epochs: int = 50
    search_batch_size: int = 128
    search_weight_decay: float = 1e-4
    search_augmentation: bool = True
    fitness_window: int = 10
    # retrain
    retrain_optimizer: str = "SgdMomentum"
    retrain_lr: float = 0.01
    retrain_lr_schedule: tuple = ((5, 0.1), (250, 0.01), (375, 0.001))
    retrain_epochs: int = 500
    retrain_batch_size: int = 128
    retrain_weight_decay: float = 5e-4
    retrain_augmentation: bool = True
    momentum: float = 0.9
    # data and run
    scenario: str = "default"
    data_dir: str = ""
    synthetic_difficulty: str = "easy"
    data_seed: int = 0
    seed: int = 0
    surrogate: str = ""

    def cgp_config(self) -> CgpConfig:
        return CgpConfig(
            n_rows=self.n_rows,
            n_cols=self.n_cols,
            levels_back=self.levels_back,
            mutation_rate=self.mutation_rate,
            min_active=self.min_active,
            max_active=self.max_active,
            function_set_id=self.function_set,
            channels=self.channels,
            kernels=self.kernels,
        )

    def search_config(self) -> TrainConfig:
        return TrainConfig(
            optimizer=self.search_optimizer,
            initial_lr=self.search_lr,
            lr_schedule=self.search_lr_schedule,
            epochs=self.search_epochs,
            batch_size=self.search_batch_size,
            weight_decay=self.search_weight_decay,
            augmentation=self.search_augmentation,
            fitness_window=self.fitness_window,
            momentum=self.momentum,
        )

    def retrain_config(self) -> TrainConfig:
        return TrainConfig(
            optimizer=self.retrain_optimizer,
            initial_lr=self.retrain_lr,
            lr_schedule=self.retrain_lr_schedule,
            epochs=self.retrain_epochs,
            batch_size=self.retrain_batch_size,
            weight_decay=self.retrain_weight_decay,
            augmentation=self.retrain_augmentation,
            fitness_window=self.fitness_window,
            momentum=self.momentum,
        )

    def input_shape(self) -> tuple[int, int, int]:
        return (DESK_IMAGE_SIZE, DESK_IMAGE_SIZE, 3) if self.scenario == "desk" else (32, 32, 3)

    def to_text(self) -> str:
        return "".join(f"{k} = {_format_value(v)}\n" for k, v in asdict(self).items())


SCENARIO_DEFAULTS = {
    "default": {},
    "small": dict(channels=(16, 32), generations=30, search_epochs=8),
    "desk": dict(
        n_rows=3,
        n_cols=10,
        levels_back=4,
        min_active=8,
        max_active=15,
        channels=DESK_CHANNELS,
        generations=30,
        memory_budget=DESK_MEMORY_BUDGET,
        search_lr_schedule=(),
        search_epochs=1,
        search_batch_size=64,
        search_augmentation=False,
        fitness_window=1,
        retrain_lr_schedule=((3, 0.05), (7, 0.005)),
        retrain_epochs=10,
        retrain_batch_size=64,
        retrain_augmentation=False,
    ),
}


# -- config parsing -----------------------------------------------------------------

def _format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        if value and isinstance(value[0], tuple):
            return ",".join(f"{e}:{lr}" for e, lr in value)
        return ",".join(str(v) for v in value)
    return str(value)


def _parse_bool(text):
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _parse_schedule(text):
    if not text.strip():
        return ()
    points = []
    for item in text.split(","):
        epoch, _, lr = item.partition(":")
        points.append((int(epoch), float(lr)))
    return tuple(points)


def _parse_value(key, text):
    default = getattr(RunConfig, key)
    try:
        if key.endswith("lr_schedule"):
            return _parse_schedule(text)
        if isinstance(default, bool):
            return _parse_bool(text)
        if isinstance(default, int):
            return int(float(text)) if "e" in text.lower() else int(text)
        if isinstance(default, float):
            return float(text)
        if isinstance(default, tuple):
            return tuple(int(v) for v in text.split(",") if v.strip())
        return text.strip()
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {text!r} ({exc})") from None


_KEYS = {f.name for f in fields(RunConfig)}


def parse_assignments(lines, origin="config") -> dict:
    """Parse ``key = value`` lines (``#`` starts a comment) into typed values."""
    values = {}
    for number, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, text = line.partition("=")
        key = key.strip()
        if not sep:
            raise ConfigError(f"{origin}:{number}: expected key=value, got {raw.strip()!r}")
        if key not in _KEYS:
            raise ConfigError(f"{origin}:{number}: unknown config key {key!r}")
        values[key] = _parse_value(key, text.strip())
    return values


def resolve_config(file_values: dict, overrides: dict) -> RunConfig:
    """Defaults, then scenario defaults, then the config file, then command-line overrides."""
    scenario = overrides.get("scenario", file_values.get("scenario", "default"))
    if scenario not in SCENARIO_DEFAULTS:
        raise ConfigError(f"unknown scenario {scenario!r}; choose from {sorted(SCENARIO_DEFAULTS)}")
    merged = {**SCENARIO_DEFAULTS[scenario], **file_values, **overrides, "scenario": scenario}
    try:
        cfg = RunConfig(**merged)
        cfg.cgp_config()
        cfg.search_config()
        cfg.retrain_config()
    except (ValueError, TypeError, UnknownFunctionSet) as exc:
        raise ConfigError(str(exc)) from None
    if cfg.lam < 1:
        raise ConfigError("lam must be at least 1")
    return cfg


def load_run_config(args) -> RunConfig:
    file_values = {}
    if args.config:
        path = Path(args.config)
        if not path.is_file():
            raise ConfigError(f"config file {path} not found")
        file_values = parse_assignments(path.read_text().splitlines(), str(path))
    overrides = parse_assignments(args.set or [], "--set")
    for key in ("seed", "scenario", "surrogate"):
        value = getattr(args, key, None)
        if value is not None:
            overrides[key] = value
    return resolve_config(file_values, overrides)


# -- data -----------------------------------------------------------------------------

def _cifar_root(cfg: RunConfig) -> Path:
    root = Path(cfg.data_dir) if cfg.data_dir else data_dir()
    if root is None:
        raise MissingFile("no CIFAR-10 location: set data_dir or CGPNAS_DATA_DIR")
    return root


def search_data(cfg: RunConfig) -> DataSplit:
    if cfg.scenario == "desk":
        return desk_data(cfg.data_seed, cfg.synthetic_difficulty)
    ds, _ = load_cifar10(_cifar_root(cfg))
    train, val = split(ds, preset(cfg.scenario, cfg.data_seed))
    train, val, _ = mean_subtract(train, val)
    return DataSplit(train, val)


def retrain_data(cfg: RunConfig):
    """Full training set and the held-out test set, mean-subtracted with training statistics."""
    if cfg.scenario == "desk":
        spec = preset("desk", cfg.data_seed)
        make = lambda n, seed: synthetic_dataset(  # noqa: E731
            SyntheticSpec(2, n, DESK_IMAGE_SIZE, cfg.synthetic_difficulty), seed
        )
        train, test = make(spec.train_n + spec.val_n, cfg.data_seed), make(1000, cfg.data_seed + 1)
    else:
        train, test = load_cifar10(_cifar_root(cfg))
        if cfg.scenario == "small":
            spec = preset("small", cfg.data_seed)
            train, _ = split(train, spec)
    train, test, _ = mean_subtract(train, test)
    return train, test


# -- commands -------------------------------------------------------------------------

def _read_genotype(path) -> Genotype:
    try:
        return Genotype.from_text(Path(path).read_text())
    except OSError as exc:
        raise GenotypeFormatError(f"cannot read genotype file: {exc}") from None


def _manifest(cfg: RunConfig, command: str, extra=None) -> str:
    body = {"command": command, "code_version": __version__, "seed": cfg.seed, "config": asdict(cfg)}
    body.update(extra or {})
    return json.dumps(body, sort_keys=True, indent=1) + "\n"


def _make_evaluator(cfg: RunConfig):
    if cfg.surrogate:
        return SurrogateEvaluator(cfg.surrogate, cfg.input_shape())
    return TrainingEvaluator(search_data(cfg), cfg.search_config(), cfg.memory_budget)


def _write_best(state, out: Path, n_classes: int, input_shape):
    genotype = state.parent.genotype
    (out / "best.genotype").write_text(genotype.to_text())
    graph = decode(genotype, n_classes)
    try:
        graph = infer_shapes(graph, input_shape)
    except InvalidArchitecture:
        pass
    (out / "best.dot").write_text(to_dot(graph))


def cmd_search(args) -> int:
    cfg = load_run_config(args)
    out = Path(args.out or f"runs/{cfg.scenario}-seed{cfg.seed}")
    out.mkdir(parents=True, exist_ok=True)
    state = None
    if args.resume:
        state = load_checkpoint(args.resume)
        if state.parent.genotype.config != cfg.cgp_config():
            raise ConfigError("checkpoint genome settings differ from the run configuration")
        if (state.seed, state.lam) != (cfg.seed, cfg.lam):
            raise ConfigError("checkpoint seed or lam differs from the run configuration")
    evaluator = _make_evaluator(cfg)
    n_classes = 2 if cfg.scenario == "desk" and not cfg.surrogate else 10
    (out / "manifest.json").write_text(_manifest(cfg, "search", {"evaluator": evaluator.id}))
    latest = {"state": state}
    lock = threading.Lock()
    results_mode = "a" if args.resume else "w"
    results = open(out / "results.jsonl", results_mode, encoding="utf-8")

    def on_generation(s):
        with lock:
            latest["state"] = s
            for index, ind in enumerate(s.offspring or [s.parent]):
                record = {"generation": s.generation, "index": index, "n_active": ind.genotype.n_active,
                          "fitness": ind.fitness, "failure_reason": ind.failure_reason,
                          "param_count": ind.param_count, "epochs_trained": ind.epochs_trained,
                          "wall_time": round(ind.wall_time, 3)}
                results.write(json.dumps(record, sort_keys=True) + "\n")
            results.flush()
            save_checkpoint(s, out / "checkpoint.json")
            write_history(s.history, out / "history.csv")
            if not args.quiet:
                print(f"gen {s.generation:4d}  parent {s.parent.fitness:.4f}  "
                      f"offspring {[round(f, 4) for f in s.history[-1].offspring_fitnesses]}", flush=True)

    workers = cfg.workers or cfg.lam
    try:
        state = evolve(cfg.cgp_config(), evaluator, cfg.generations, cfg.seed, cfg.lam,
                       state=state, workers=workers, on_generation=on_generation)
    except KeyboardInterrupt:
        final = latest["state"]
        if final is not None:
            save_checkpoint(final, out / "checkpoint.json")
            write_history(final.history, out / "history.csv")
            _write_best(final, out, n_classes, cfg.input_shape())
            print(f"interrupted; checkpoint at generation {final.generation} saved to {out}", file=sys.stderr)
        return EXIT_INTERRUPTED
    finally:
        results.close()
    _write_best(state, out, n_classes, cfg.input_shape())
    print(json.dumps({"best_fitness": state.parent.fitness, "generations": state.generation, "out": str(out)}))
    return EXIT_OK


def _shaped_graph(genotype, n_classes, input_shape):
    return infer_shapes(decode(genotype, n_classes), input_shape)


def cmd_retrain(args) -> int:
    cfg = load_run_config(args)
    genotype = _read_genotype(args.genotype)
    train, test = retrain_data(cfg)
    graph = _shaped_graph(genotype, train.class_count, train.image_shape)
    tcfg = cfg.retrain_config()
    rng = np.random.default_rng(cfg.seed)
    net = build_network(graph, rng, cfg.memory_budget, tcfg.batch_size)
    log = None if args.quiet else (lambda e, loss, acc: print(f"epoch {e}  loss {loss:.4f}", flush=True))
    train_network(net, train, tcfg, rng, log=log)
    summary = {
        "test_accuracy": net.accuracy(test.images, test.labels),
        "param_count": graph.param_count(),
        "epochs": tcfg.epochs,
        "train_samples": len(train),
        "test_samples": len(test),
    }
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        save_weights(net, out / "weights.bin")
        (out / "retrain.json").write_text(json.dumps(summary, sort_keys=True, indent=1) + "\n")
        (out / "manifest.json").write_text(_manifest(cfg, "retrain", {"genotype": genotype.to_text()}))
    print(json.dumps(summary, sort_keys=True))
    return EXIT_OK


def cmd_export(args) -> int:
    genotype = _read_genotype(args.genotype)
    graph = decode(genotype, args.classes)
    shape = tuple(int(v) for v in args.input_shape.split(","))
    if args.format == "json":
        text = to_json(infer_shapes(graph, shape))
    else:
        try:
            graph = infer_shapes(graph, shape)
        except InvalidArchitecture:
            pass
        text = to_dot(graph)
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = load_run_config(args)
    genotype = _read_genotype(args.genotype)
    evaluator = _make_evaluator(cfg)
    if cfg.surrogate:
        result = evaluator(genotype)
    else:
        result = evaluate(genotype, evaluator.data, evaluator.cfg, np.random.default_rng(cfg.seed), cfg.memory_budget)
    print(result.to_json())
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    err = float(check_all_kinds(seed=args.seed or 0, n_samples=args.samples))
    ok = bool(err < args.tolerance)
    print(json.dumps({"max_relative_error": err, "tolerance": args.tolerance, "passed": ok}))
    return EXIT_OK if ok else EXIT_CHECK_FAILED


# -- entry point ------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cgpcnn", description="CGP-based CNN architecture search")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="flat key=value config file")
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key")
        p.add_argument("--seed", type=int)
        p.add_argument("--scenario", choices=sorted(SCENARIO_DEFAULTS))
        p.add_argument("--surrogate", help="surrogate fitness id instead of training")
        p.add_argument("--out", help="output directory")
        p.add_argument("--quiet", action="store_true")

    p = sub.add_parser("search", help="run the evolutionary search")
    common(p)
    p.add_argument("--resume", help="checkpoint file to continue from")
    p.set_defaults(func=cmd_search)

    p = sub.add_parser("retrain", help="train a genotype with the retraining schedule")
    p.add_argument("genotype")
    common(p)
    p.set_defaults(func=cmd_retrain)

    p = sub.add_parser("eval", help="fitness of a single genotype")
    p.add_argument("genotype")
    common(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("export", help="render a genotype as DOT or JSON")
    p.add_argument("genotype")
    p.add_argument("--format", choices=("dot", "json"), default="dot")
    p.add_argument("--classes", type=int, default=10)
    p.add_argument("--input-shape", default="32,32,3")
    p.add_argument("--out")
    p.set_defaults(func=cmd_export)

    p = sub.add_parser("gradcheck", help="finite-difference check of the network runtime")
    p.add_argument("--seed", type=int)
    p.add_argument("--samples", type=int, default=200)
    p.add_argument("--tolerance", type=float, default=1e-3)
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, UnknownSurrogate) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (MissingFile, CorruptRecord, SpecInfeasible) as exc:
        print(f"dataset error: {exc}", file=sys.stderr)
        return EXIT_DATASET
    except (GenotypeFormatError, InvalidArchitecture, OutOfMemoryBudget) as exc:
        print(f"genotype error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_GENOTYPE
    except (CorruptCheckpoint, VersionMismatch) as exc:
        print(f"checkpoint error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CgpError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_CHECK_FAILED


if __name__ == "__main__":
    sys.exit(main())
