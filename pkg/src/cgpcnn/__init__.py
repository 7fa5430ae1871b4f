"""Evolutionary CNN architecture search with Cartesian genetic programming."""

from cgpcnn.functions import FunctionKind, FunctionSpec, TensorShape, INVALID, catalog, output_shape, param_count
from cgpcnn.genome import (
    CgpConfig,
    Genotype,
    active_nodes,
    forced_mutation,
    neutral_mutation,
    point_mutation,
    random_genotype,
)
from cgpcnn.phenotype import LayerGraph, decode, graph_equal, infer_shapes, estimate_memory, to_dot
from cgpcnn.evaluator import FitnessResult, SurrogateEvaluator, TrainConfig, TrainingEvaluator, evaluate
from cgpcnn.evolution import EvolutionState, evolve, load_checkpoint, save_checkpoint

__version__ = "0.1.0"

__all__ = [
    "CgpConfig",
    "EvolutionState",
    "FitnessResult",
    "FunctionKind",
    "FunctionSpec",
    "Genotype",
    "INVALID",
    "LayerGraph",
    "SurrogateEvaluator",
    "TensorShape",
    "TrainConfig",
    "TrainingEvaluator",
    "active_nodes",
    "catalog",
    "decode",
    "estimate_memory",
    "evaluate",
    "evolve",
    "forced_mutation",
    "graph_equal",
    "infer_shapes",
    "load_checkpoint",
    "neutral_mutation",
    "output_shape",
    "param_count",
    "point_mutation",
    "random_genotype",
    "save_checkpoint",
    "to_dot",
]
