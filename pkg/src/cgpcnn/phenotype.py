"""Decoding genotypes into shape-annotated layer graphs."""

from __future__ import annotations

import json
from dataclasses import dataclass

from cgpcnn.errors import InvalidArchitecture
from cgpcnn.functions import FunctionKind, FunctionSpec, TensorShape, downsample_plan, output_shape, param_count
from cgpcnn.genome import Genotype, active_nodes

INPUT = "input"
OUTPUT = "output"
BYTES_PER_SCALAR = 4
DEFAULT_MEMORY_BUDGET = 2 * 1024**3
JSON_SCHEMA_ID = "cgpcnn.graph/1"


@dataclass(frozen=True)
class LayerNode:
    index: int
    op: object  # FunctionSpec, INPUT or OUTPUT
    inputs: tuple[int, ...]
    source: int  # node id in the genotype, -1 for the output layer

    @property
    def label(self) -> str:
        if self.op == INPUT:
            return "input"
        if self.op == OUTPUT:
            return "softmax"
        return self.op.symbol


@dataclass(frozen=True)
class LayerGraph:
    nodes: tuple[LayerNode, ...]
    n_classes: int
    shapes: tuple[TensorShape, ...] | None = None

    @property
    def edges(self) -> list[tuple[int, int, int]]:
        """``(producer, consumer, slot)`` triples."""
        return [(src, node.index, slot) for node in self.nodes for slot, src in enumerate(node.inputs)]

    @property
    def output(self) -> LayerNode:
        return self.nodes[-1]

    @property
    def input_shape(self) -> TensorShape:
        return self.shapes[0]

    def layer_params(self) -> list[int]:
        """Parameter count per node; the output entry is the dense layer."""
        _require_shapes(self)
        counts = []
        for node in self.nodes:
            if node.op == INPUT:
                counts.append(0)
            elif node.op == OUTPUT:
                flat = self.shapes[node.inputs[0]].size
                counts.append(flat * self.n_classes + self.n_classes)
            else:
                counts.append(param_count(node.op, self.shapes[node.inputs[0]]))
        return counts

    def param_count(self) -> int:
        return sum(self.layer_params())


def _require_shapes(graph):
    if graph.shapes is None:
        raise ValueError("graph has no shapes; run infer_shapes first")


def decode(g: Genotype, n_classes: int = 10) -> LayerGraph:
    cfg = g.config
    if cfg.n_outputs != 1:
        raise ValueError("a CNN phenotype has exactly one softmax output")
    funcs = cfg.functions
    nodes = [LayerNode(i, INPUT, (), i) for i in range(cfg.n_inputs)]
    index = {i: i for i in range(cfg.n_inputs)}
    for nid in active_nodes(g):
        f, a, b = g.genes[nid - cfg.n_inputs].tolist()
        spec = funcs[f]
        ins = (index[a], index[b]) if spec.arity == 2 else (index[a],)
        index[nid] = len(nodes)
        nodes.append(LayerNode(len(nodes), spec, ins, nid))
    out = int(g.output_genes[0])
    nodes.append(LayerNode(len(nodes), OUTPUT, (index[out],), -1))
    return LayerGraph(tuple(nodes), n_classes)


def graph_from_layers(layers, n_classes: int = 10) -> LayerGraph:
    """Build a graph by hand from ``(FunctionSpec, input_indices)`` pairs.

    Index 0 is the input node; layer ``i`` of the list gets index ``i + 1``.
    The softmax output reads from the last layer.
    """
    nodes = [LayerNode(0, INPUT, (), 0)]
    for spec, ins in layers:
        ins = tuple(ins)
        if len(ins) != spec.arity or any(not 0 <= i < len(nodes) for i in ins):
            raise ValueError(f"bad inputs {ins} for {spec.symbol}")
        nodes.append(LayerNode(len(nodes), spec, ins, len(nodes)))
    nodes.append(LayerNode(len(nodes), OUTPUT, (len(nodes) - 1,), -1))
    return LayerGraph(tuple(nodes), n_classes)


def infer_shapes(graph: LayerGraph, input_shape) -> LayerGraph:
    """Assign an output shape to every node, in order.

    Raises :class:`InvalidArchitecture` naming the genotype node id of the
    first node whose output has a zero-sized dimension.
    """
    input_shape = TensorShape(*input_shape)
    shapes = []
    for node in graph.nodes:
        if node.op == INPUT:
            shape = input_shape
        elif node.op == OUTPUT:
            shape = TensorShape(1, 1, graph.n_classes)
        else:
            ins = [shapes[i] for i in node.inputs]
            shape = output_shape(node.op, *ins) if len(ins) == 2 else output_shape(node.op, ins[0])
        if not shape.valid:
            raise InvalidArchitecture(node.source)
        shapes.append(shape)
    return LayerGraph(graph.nodes, graph.n_classes, tuple(shapes))


@dataclass(frozen=True)
class MemoryEstimate:
    activation_bytes: int
    parameter_bytes: int
    batch_size: int

    @property
    def total_bytes(self) -> int:
        # stored gradients double the activations; params carry grad + two optimizer slots
        return 2 * self.activation_bytes + self.parameter_bytes


def _activation_elements(graph: LayerGraph, node: LayerNode) -> int:
    shape = graph.shapes[node.index]
    if node.op == INPUT:
        return shape.size
    if node.op == OUTPUT:
        return 2 * graph.n_classes  # logits and probabilities
    kind = node.op.kind
    if kind is FunctionKind.CONV:
        return 3 * shape.size  # conv, BN, ReLU outputs
    if kind is FunctionKind.RES:
        return 4 * shape.size  # conv, BN, sum, ReLU outputs
    if kind in (FunctionKind.SUM, FunctionKind.CONCAT):
        extra = 0
        for i in node.inputs:
            s = graph.shapes[i]
            if (s.rows, s.cols) != (shape.rows, shape.cols):
                extra += shape.rows * shape.cols * s.channels
        return shape.size + extra
    return shape.size


def estimate_memory(graph: LayerGraph, batch_size: int) -> MemoryEstimate:
    _require_shapes(graph)
    elements = sum(_activation_elements(graph, node) for node in graph.nodes)
    return MemoryEstimate(
        activation_bytes=batch_size * elements * BYTES_PER_SCALAR,
        parameter_bytes=graph.param_count() * BYTES_PER_SCALAR * 3,
        batch_size=batch_size,
    )


def _structure(graph: LayerGraph):
    return graph.n_classes, tuple((node.op, node.inputs) for node in graph.nodes)


def graph_equal(a: LayerGraph, b: LayerGraph) -> bool:
    """Structural equality in canonical (ascending genotype id) node order."""
    return _structure(a) == _structure(b)


def to_dot(graph: LayerGraph, name: str = "cgp_cnn") -> str:
    lines = [f"digraph {name} {{", "  rankdir=TB;", '  node [shape=box, fontname="Helvetica"];']
    for node in graph.nodes:
        label = node.label
        if node.op == OUTPUT:
            label = f"softmax({graph.n_classes})"
        if graph.shapes is not None:
            label += "\\n" + str(graph.shapes[node.index])
        lines.append(f'  n{node.index} [label="{label}"];')
    for src, dst, slot in graph.edges:
        if graph.nodes[dst].op not in (INPUT, OUTPUT) and graph.nodes[dst].op.arity == 2:
            lines.append(f'  n{src} -> n{dst} [label="{slot}"];')
        else:
            lines.append(f"  n{src} -> n{dst};")
    lines.append("}")
    return "\n".join(lines) + "\n"


def _op_fields(op):
    if op in (INPUT, OUTPUT):
        return {"kind": op}
    spec: FunctionSpec = op
    out = {"kind": spec.kind.value, "symbol": spec.symbol}
    if spec.is_conv:
        out.update(out_channels=spec.out_channels, kernel=spec.kernel)
    return out


def to_json_dict(graph: LayerGraph) -> dict:
    _require_shapes(graph)
    params = graph.layer_params()
    nodes = []
    for node in graph.nodes:
        entry = {"id": node.index, "genome_id": node.source, "inputs": list(node.inputs)}
        entry.update(_op_fields(node.op))
        entry["shape"] = list(graph.shapes[node.index])
        entry["params"] = params[node.index]
        nodes.append(entry)
    return {
        "schema": JSON_SCHEMA_ID,
        "n_classes": graph.n_classes,
        "param_count": sum(params),
        "nodes": nodes,
        "edges": [{"from": s, "to": d, "slot": k} for s, d, k in graph.edges],
    }


def to_json(graph: LayerGraph) -> str:
    return json.dumps(to_json_dict(graph), indent=2, ensure_ascii=False) + "\n"


GRAPH_JSON_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["schema", "n_classes", "param_count", "nodes", "edges"],
    "properties": {
        "schema": {"const": JSON_SCHEMA_ID},
        "n_classes": {"type": "integer", "minimum": 1},
        "param_count": {"type": "integer", "minimum": 0},
        "nodes": {
            "type": "array",
            "minItems": 2,
            "items": {
                "type": "object",
                "required": ["id", "genome_id", "kind", "inputs", "shape", "params"],
                "properties": {
                    "id": {"type": "integer", "minimum": 0},
                    "genome_id": {"type": "integer"},
                    "kind": {
                        "enum": [INPUT, OUTPUT] + [k.value for k in FunctionKind],
                    },
                    "symbol": {"type": "string"},
                    "out_channels": {"type": "integer", "minimum": 1},
                    "kernel": {"type": "integer", "minimum": 1},
                    "inputs": {"type": "array", "items": {"type": "integer", "minimum": 0}, "maxItems": 2},
                    "shape": {
                        "type": "array",
                        "items": {"type": "integer", "minimum": 1},
                        "minItems": 3,
                        "maxItems": 3,
                    },
                    "params": {"type": "integer", "minimum": 0},
                },
            },
        },
        "edges": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["from", "to", "slot"],
                "properties": {
                    "from": {"type": "integer", "minimum": 0},
                    "to": {"type": "integer", "minimum": 0},
                    "slot": {"enum": [0, 1]},
                },
            },
        },
    },
}


def resample_steps(graph: LayerGraph, node: LayerNode) -> list[list]:
    """Down-sampling plan for each input of a Sum/Concat node."""
    target = graph.shapes[node.index]
    plans = []
    for i in node.inputs:
        s = graph.shapes[i]
        plans.append(downsample_plan((s.rows, s.cols), (target.rows, target.cols)))
    return plans
