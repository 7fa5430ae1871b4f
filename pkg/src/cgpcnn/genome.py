"""Fixed-length CGP genotype, active-node decoding and mutation operators.

Node numbering: input nodes are ``0 .. n_inputs-1``; grid nodes follow
column by column, so grid node ``j`` (0-based) sits in column
``j // n_rows`` and has id ``n_inputs + j``. Each node gene is a row
``(function_id, input0, input1)``; unary functions ignore ``input1``.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass, field, fields

import numpy as np

from cgpcnn.errors import ConfigInfeasible, GenotypeFormatError, MutationStuck
from cgpcnn.functions import DEFAULT_CHANNELS, DEFAULT_KERNELS, FunctionSpec, catalog

MAX_ATTEMPTS = 10_000
FORMAT_TAG = "cgpcnn-genotype"
FORMAT_VERSION = 1


@dataclass(frozen=True)
class CgpConfig:
    n_rows: int = 5
    n_cols: int = 30
    levels_back: int = 10
    n_inputs: int = 1
    n_outputs: int = 1
    mutation_rate: float = 0.05
    min_active: int = 10
    max_active: int = 50
    function_set_id: str = "ConvSet"
    channels: tuple[int, ...] = DEFAULT_CHANNELS
    kernels: tuple[int, ...] = DEFAULT_KERNELS

    def __post_init__(self):
        object.__setattr__(self, "channels", tuple(int(c) for c in self.channels))
        object.__setattr__(self, "kernels", tuple(int(k) for k in self.kernels))
        for name in ("n_rows", "n_cols", "levels_back", "n_inputs", "n_outputs", "max_active"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.levels_back > self.n_cols:
            raise ValueError("levels_back must not exceed n_cols")
        if not 0.0 <= self.mutation_rate <= 1.0:
            raise ValueError("mutation_rate must lie in [0, 1]")
        if not 0 <= self.min_active <= self.max_active <= self.n_rows * self.n_cols:
            raise ValueError("need 0 <= min_active <= max_active <= n_rows * n_cols")
        catalog(self.function_set_id, self.channels, self.kernels)

    @property
    def n_nodes(self) -> int:
        return self.n_rows * self.n_cols

    @property
    def functions(self) -> tuple[FunctionSpec, ...]:
        return _catalog(self.function_set_id, self.channels, self.kernels)

    def to_text(self) -> str:
        parts = []
        for f in fields(self):
            value = getattr(self, f.name)
            if isinstance(value, tuple):
                value = ",".join(str(v) for v in value)
            parts.append(f"{f.name}={value}")
        return " ".join(parts)

    @classmethod
    def from_text(cls, text: str) -> "CgpConfig":
        kwargs = {}
        types = {f.name: f.type for f in fields(cls)}
        for item in text.split():
            key, _, value = item.partition("=")
            if key not in types:
                raise GenotypeFormatError(f"unknown config field {key!r}")
            kwargs[key] = _parse_field(key, value)
        return cls(**kwargs)


def _parse_field(key, value):
    if key in ("channels", "kernels"):
        return tuple(int(v) for v in value.split(","))
    if key == "mutation_rate":
        return float(value)
    if key == "function_set_id":
        return value
    return int(value)


@functools.lru_cache(maxsize=None)
def _catalog(function_set_id, channels, kernels):
    return tuple(catalog(function_set_id, channels, kernels))


@functools.lru_cache(maxsize=None)
@functools.lru_cache(maxsize=64)
def _tables(config: CgpConfig):
    """Per-node connection windows and function arities, cached per config."""
    j = np.arange(config.n_nodes)
    col = j // config.n_rows
    lo = config.n_inputs + np.maximum(col - config.levels_back, 0) * config.n_rows
    hi = config.n_inputs + col * config.n_rows
    arity = np.array([f.arity for f in config.functions], dtype=np.int64)
    for table in (lo, hi, arity):
        table.flags.writeable = False
    return lo, hi, arity


@dataclass(frozen=True, eq=False)
class Genotype:
    config: CgpConfig
    genes: np.ndarray
    output_genes: np.ndarray
    _active: tuple = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        genes = np.array(self.genes, dtype=np.int64).reshape(self.config.n_nodes, 3)
        outs = np.array(self.output_genes, dtype=np.int64).reshape(self.config.n_outputs)
        genes.flags.writeable = False
        outs.flags.writeable = False
        object.__setattr__(self, "genes", genes)
        object.__setattr__(self, "output_genes", outs)
        object.__setattr__(self, "_active", _compute_active(self.config, genes, outs))

    def __eq__(self, other):
        if not isinstance(other, Genotype):
            return NotImplemented
        return (
            self.config == other.config
            and np.array_equal(self.genes, other.genes)
            and np.array_equal(self.output_genes, other.output_genes)
        )

    def __hash__(self):
        return hash((self.config, self.genes.tobytes(), self.output_genes.tobytes()))

    @property
    def n_active(self) -> int:
        return len(self._active)

    def to_text(self) -> str:
        lines = [f"{FORMAT_TAG} {FORMAT_VERSION} {self.config.to_text()}"]
        lines += [f"{f},{a},{b}" for f, a, b in self.genes.tolist()]
        lines.append("out " + ",".join(str(o) for o in self.output_genes.tolist()))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "Genotype":
        lines = [ln.strip() for ln in text.strip().splitlines() if ln.strip()]
        if not lines:
            raise GenotypeFormatError("empty genotype text")
        head = lines[0].split(maxsplit=2)
        if len(head) < 2 or head[0] != FORMAT_TAG:
            raise GenotypeFormatError("missing genotype header")
        if head[1] != str(FORMAT_VERSION):
            raise GenotypeFormatError(f"unsupported genotype version {head[1]}")
        try:
            config = CgpConfig.from_text(head[2] if len(head) > 2 else "")
        except (TypeError, ValueError) as exc:
            raise GenotypeFormatError(str(exc)) from exc
        body = lines[1:]
        if len(body) != config.n_nodes + 1 or not body[-1].startswith("out "):
            raise GenotypeFormatError("node gene count does not match the header")
        try:
            genes = [[int(v) for v in ln.split(",")] for ln in body[:-1]]
            outs = [int(v) for v in body[-1][4:].split(",")]
        except ValueError as exc:
            raise GenotypeFormatError(str(exc)) from exc
        if any(len(g) != 3 for g in genes) or len(outs) != config.n_outputs:
            raise GenotypeFormatError("malformed gene line")
        g = cls(config, np.array(genes), np.array(outs))
        problems = validate(g, check_window=False)
        if problems:
            raise GenotypeFormatError(problems[0])
        return g


def _compute_active(config, genes, outs):
    arity = _tables(config)[2]
    n_in = config.n_inputs
    active = [False] * (n_in + config.n_nodes)
    for o in outs.tolist():
        active[o] = True
    g = genes.tolist()
    arity = arity.tolist()
    for idx in range(n_in + config.n_nodes - 1, n_in - 1, -1):
        if active[idx]:
            f, a, b = g[idx - n_in]
            active[a] = True
            if arity[f] == 2:
                active[b] = True
    return tuple(i for i in range(n_in, len(active)) if active[i])


def active_nodes(g: Genotype) -> tuple[int, ...]:
    """Grid-node ids reachable from the output genes, ascending (a topological order)."""
    return g._active


def validate(g: Genotype, check_window: bool = True) -> list[str]:
    """Return a list of violated invariants; empty when ``g`` is valid."""
    cfg = g.config
    lo, hi, arity = _tables(cfg)
    problems = []
    f = g.genes[:, 0]
    if f.min() < 0 or f.max() >= len(arity):
        problems.append("function id outside the catalog")
    for slot in (1, 2):
        x = g.genes[:, slot]
        ok = ((x >= 0) & (x < cfg.n_inputs)) | ((x >= lo) & (x < hi))
        if not ok.all():
            bad = int(np.flatnonzero(~ok)[0]) + cfg.n_inputs
            problems.append(f"node {bad} input {slot - 1} violates levels-back")
    o = g.output_genes
    if o.min() < 0 or o.max() >= cfg.n_inputs + cfg.n_nodes:
        problems.append("output gene out of range")
    if check_window and not cfg.min_active <= g.n_active <= cfg.max_active:
        problems.append(f"{g.n_active} active nodes outside [{cfg.min_active}, {cfg.max_active}]")
    return problems


def _sample_connections(cfg, rng, shape):
    lo, hi, _ = _tables(cfg)
    span = cfg.n_inputs + (hi - lo)
    r = (rng.random(shape) * span[:, None]).astype(np.int64)
    return np.where(r < cfg.n_inputs, r, lo[:, None] + r - cfg.n_inputs)


def _sample_fields(cfg, rng):
    funcs = rng.integers(0, len(cfg.functions), size=(cfg.n_nodes, 1))
    conns = _sample_connections(cfg, rng, (cfg.n_nodes, 2))
    outs = rng.integers(0, cfg.n_inputs + cfg.n_nodes, size=cfg.n_outputs)
    return np.hstack([funcs, conns]), outs


def _in_window(cfg, g):
    return cfg.min_active <= g.n_active <= cfg.max_active


def random_genotype(config: CgpConfig, rng: np.random.Generator) -> Genotype:
    for _ in range(MAX_ATTEMPTS):
        genes, outs = _sample_fields(config, rng)
        g = Genotype(config, genes, outs)
        if _in_window(config, g):
            return g
    raise ConfigInfeasible(
        f"no genotype with {config.min_active}..{config.max_active} active nodes "
        f"after {MAX_ATTEMPTS} attempts"
    )


def _mutate_once(g, rng, node_mask=None):
    cfg = g.config
    rate = cfg.mutation_rate
    new_genes, new_outs = _sample_fields(cfg, rng)
    hit = rng.random(g.genes.shape) < rate
    hit_out = rng.random(g.output_genes.shape) < rate
    if node_mask is not None:
        hit &= node_mask[:, None]
        hit_out[:] = False
    genes = np.where(hit, new_genes, g.genes)
    outs = np.where(hit_out, new_outs, g.output_genes)
    return Genotype(cfg, genes, outs)


def point_mutation(g: Genotype, rng: np.random.Generator) -> Genotype:
    """Resample every gene field with probability ``mutation_rate``.

    The whole mutation is re-drawn from ``g`` until the child's active-node
    count lies inside the configured window.
    """
    for _ in range(MAX_ATTEMPTS):
        child = _mutate_once(g, rng)
        if _in_window(g.config, child):
            return child
    raise MutationStuck(f"point mutation left the active window {MAX_ATTEMPTS} times")


def structure_key(g: Genotype) -> tuple:
    """Canonical form of the active subgraph; equal keys mean equal phenotypes."""
    cfg = g.config
    arity = _tables(cfg)[2]
    index = {i: ("in", i) for i in range(cfg.n_inputs)}
    nodes = []
    for pos, nid in enumerate(g._active):
        index[nid] = pos
        f, a, b = g.genes[nid - cfg.n_inputs].tolist()
        ins = (index[a], index[b]) if arity[f] == 2 else (index[a],)
        nodes.append((f, ins))
    return tuple(nodes), tuple(index[o] for o in g.output_genes.tolist())


def forced_mutation(g: Genotype, rng: np.random.Generator) -> Genotype:
    """Point mutation repeated until the decoded architecture differs from ``g``'s."""
    key = structure_key(g)
    for _ in range(MAX_ATTEMPTS):
        child = point_mutation(g, rng)
        if structure_key(child) != key:
            return child
    raise MutationStuck(f"forced mutation did not change the phenotype in {MAX_ATTEMPTS} attempts")


def neutral_mutation(g: Genotype, rng: np.random.Generator) -> Genotype:
    """Resample genes of inactive nodes only; the phenotype is untouched."""
    cfg = g.config
    inactive = np.ones(cfg.n_nodes, dtype=bool)
    inactive[np.array(g._active, dtype=np.int64) - cfg.n_inputs] = False
    if not inactive.any():
        return g
    return _mutate_once(g, rng, node_mask=inactive)
