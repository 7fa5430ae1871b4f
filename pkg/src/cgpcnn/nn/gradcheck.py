"""Finite-difference check of analytic network gradients."""

from __future__ import annotations

import numpy as np

from cgpcnn.functions import FunctionKind, FunctionSpec
from cgpcnn.nn import ops
from cgpcnn.nn.network import Network
from cgpcnn.phenotype import LayerGraph, graph_from_layers, infer_shapes


def _loss(net, x, labels, train):
    return ops.softmax_cross_entropy(net.forward(x, train), labels)[0]


def relative_error(analytic, numeric, floor=1e-8):
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def grad_check(net: Network, x, labels, eps=1e-5, n_samples=200, rng=None, train=True, floor=1e-8) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``n_samples`` parameter entries are drawn without replacement across all
    parameter tensors (every entry when there are fewer). Intended for
    networks built with ``dtype=np.float64``.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    net.loss_and_grad(x, labels, train)
    grads = {k: v.copy() for k, v in net.gradients().items()}
    params = net.parameters()
    index = [(name, i) for name, w in params.items() for i in range(w.size)]
    picks = rng.choice(len(index), size=min(n_samples, len(index)), replace=False)
    worst = 0.0
    for p in sorted(picks):
        name, i = index[p]
        flat = params[name].reshape(-1)
        old = flat[i]
        flat[i] = old + eps
        up = _loss(net, x, labels, train)
        flat[i] = old - eps
        down = _loss(net, x, labels, train)
        flat[i] = old
        numeric = (up - down) / (2 * eps)
        worst = max(worst, relative_error(grads[name].reshape(-1)[i], numeric, floor))
    return worst


def all_kinds_graph(input_shape=(6, 6, 2), n_classes=3, channels=3) -> LayerGraph:
    """Small shaped graph using every node kind, including a Concat that has to downsample."""
    cb = FunctionSpec(FunctionKind.CONV, channels, 3)
    rb = FunctionSpec(FunctionKind.RES, channels + 1, 3)
    layers = [
        (cb, (0,)),  # 1
        (rb, (1,)),  # 2
        (FunctionSpec(FunctionKind.MAX_POOL), (2,)),  # 3
        (FunctionSpec(FunctionKind.AVG_POOL), (1,)),  # 4
        (FunctionSpec(FunctionKind.SUM), (3, 4)),  # 5
        (FunctionSpec(FunctionKind.CONCAT), (5, 2)),  # 6
        (FunctionSpec(FunctionKind.CONV, channels, 1), (6,)),  # 7
    ]
    return infer_shapes(graph_from_layers(layers, n_classes), input_shape)


def check_all_kinds(seed=0, batch=4, n_samples=200, eps=1e-5, floor=1e-6) -> float:
    """Gradient check of :func:`all_kinds_graph` in float64 with BN in train mode."""
    rng = np.random.default_rng(seed)
    graph = all_kinds_graph()
    net = Network(graph, rng, dtype=np.float64)
    x = rng.normal(size=(batch, *graph.input_shape))
    labels = rng.integers(0, graph.n_classes, size=batch)
    return grad_check(net, x, labels, eps=eps, n_samples=n_samples, rng=rng, floor=floor)
