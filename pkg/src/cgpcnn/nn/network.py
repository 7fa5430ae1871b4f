"""Trainable network instantiated from a shape-annotated layer graph."""

from __future__ import annotations

import json
import struct

import numpy as np

from cgpcnn.errors import CorruptCheckpoint, ShapeMismatch, TrainingDiverged, VersionMismatch
from cgpcnn.functions import FunctionKind, downsample_plan
from cgpcnn.nn import ops
from cgpcnn.phenotype import INPUT, OUTPUT, LayerGraph

WEIGHTS_MAGIC = b"CGPW"
WEIGHTS_VERSION = 1


def he_normal(shape, fan_in, rng, dtype=np.float32):
    return (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(dtype)


def he_init(shape, rng, dtype=np.float32):
    """He-normal draw; fan-in is the product of all but the last axis."""
    fan_in = int(np.prod(shape[:-1]))
    return he_normal(shape, fan_in, rng, dtype)


class Module:
    """One graph node. ``params``/``grads`` are keyed by short names."""

    def __init__(self):
        self.params = {}
        self.grads = {}
        self.buffers = {}

    def forward(self, inputs, train):
        raise NotImplementedError

    def backward(self, dout):
        raise NotImplementedError


class Identity(Module):
    def forward(self, inputs, train):
        return inputs[0]

    def backward(self, dout):
        return [dout]


class ConvBlock(Module):
    """conv -> BN -> ReLU, optionally with a channel-fitted identity shortcut before the ReLU."""

    def __init__(self, c_in, c_out, k, rng, dtype, residual=False, zero_init_residual=False):
        super().__init__()
        self.residual = residual
        self.c_out = c_out
        self.needs_input_grad = True  # switched off when the block reads the network input
        self.params = {
            "w": he_normal((k, k, c_in, c_out), k * k * c_in, rng, dtype),
            "b": np.zeros(c_out, dtype),
            "gamma": np.zeros(c_out, dtype) if zero_init_residual and residual else np.ones(c_out, dtype),
            "beta": np.zeros(c_out, dtype),
        }
        self.buffers = {"running_mean": np.zeros(c_out, dtype), "running_var": np.ones(c_out, dtype)}

    def forward(self, inputs, train):
        x = inputs[0]
        p = self.params
        h, self._conv = ops.conv2d_forward(x, p["w"], p["b"])
        h, self._bn = ops.batch_norm_forward(
            h, p["gamma"], p["beta"], self.buffers["running_mean"], self.buffers["running_var"], train
        )
        if self.residual:
            h = h + ops.fit_channels(x, self.c_out)
            self._c_in = x.shape[3]
        out, self._relu = ops.relu_forward(h)
        return out

    def backward(self, dout):
        dh = ops.relu_backward(dout, self._relu)
        dconv, self.grads["gamma"], self.grads["beta"] = ops.batch_norm_backward(dh, self._bn)
        need_dx = self.needs_input_grad or self.residual
        dx, self.grads["w"], self.grads["b"] = ops.conv2d_backward(ops.flush_subnormal(dconv), self._conv, need_dx)
        if not need_dx:
            self._conv = self._bn = self._relu = None
            return [None]
        if self.residual:
            dx = dx + ops.fit_channels(dh, self._c_in)
        self._conv = self._bn = self._relu = None
        return [dx]


class MaxPool(Module):
    def forward(self, inputs, train):
        out, self._cache = ops.max_pool_forward(inputs[0])
        return out

    def backward(self, dout):
        return [ops.max_pool_backward(dout, self._cache)]


class AvgPool(Module):
    def forward(self, inputs, train):
        out, self._cache = ops.avg_pool_forward(inputs[0])
        return out

    def backward(self, dout):
        return [ops.avg_pool_backward(dout, self._cache)]


class _Resample:
    """Max-pools an input down to a target spatial size; no-op when sizes already match."""

    def __init__(self, src_hw, dst_hw):
        self.plan = downsample_plan(src_hw, dst_hw)

    def forward(self, x):
        self._caches = []
        for window, stride in self.plan:
            x, cache = ops.max_pool_forward(x, window, stride)
            self._caches.append(cache)
        return x

    def backward(self, dout):
        for cache in reversed(self._caches):
            dout = ops.max_pool_backward(dout, cache)
        self._caches = None
        return dout


class Merge(Module):
    """Sum or Concat of two inputs after matching their spatial sizes."""

    def __init__(self, kind, shapes_in, shape_out):
        super().__init__()
        self.kind = kind
        target = (shape_out.rows, shape_out.cols)
        self.resample = [_Resample((s.rows, s.cols), target) for s in shapes_in]

    def forward(self, inputs, train):
        a, b = (r.forward(x) for r, x in zip(self.resample, inputs))
        if self.kind is FunctionKind.SUM:
            out, self._cache = ops.padded_sum_forward(a, b)
        else:
            out, self._cache = ops.channel_concat_forward(a, b)
        return out

    def backward(self, dout):
        if self.kind is FunctionKind.SUM:
            da, db = ops.padded_sum_backward(dout, self._cache)
        else:
            da, db = ops.channel_concat_backward(dout, self._cache)
        return [r.backward(d) for r, d in zip(self.resample, (da, db))]


class Dense(Module):
    def __init__(self, n_in, n_out, rng, dtype):
        super().__init__()
        self.params = {"w": he_normal((n_in, n_out), n_in, rng, dtype), "b": np.zeros(n_out, dtype)}

    def forward(self, inputs, train):
        out, self._cache = ops.dense_forward(inputs[0], self.params["w"], self.params["b"])
        return out

    def backward(self, dout):
        dx, self.grads["w"], self.grads["b"] = ops.dense_backward(dout, self._cache)
        self._cache = None
        return [dx]


def _make_module(graph, node, rng, dtype, zero_init_residual):
    if node.op == INPUT:
        return Identity()
    shapes = graph.shapes
    if node.op == OUTPUT:
        return Dense(shapes[node.inputs[0]].size, graph.n_classes, rng, dtype)
    spec = node.op
    s_in = shapes[node.inputs[0]]
    if spec.is_conv:
        return ConvBlock(
            s_in.channels, spec.out_channels, spec.kernel, rng, dtype,
            residual=spec.kind is FunctionKind.RES, zero_init_residual=zero_init_residual,
        )
    if spec.kind is FunctionKind.MAX_POOL:
        return MaxPool()
    if spec.kind is FunctionKind.AVG_POOL:
        return AvgPool()
    return Merge(spec.kind, [shapes[i] for i in node.inputs], shapes[node.index])


class Network:
    """Executes a shaped :class:`LayerGraph` with forward and backward passes."""

    def __init__(self, graph: LayerGraph, rng: np.random.Generator, dtype=np.float32, zero_init_residual=False):
        if graph.shapes is None:
            raise ValueError("network construction needs a shape-inferred graph")
        self.graph = graph
        self.dtype = np.dtype(dtype)
        self.modules = [_make_module(graph, node, rng, self.dtype, zero_init_residual) for node in graph.nodes]
        for node, mod in zip(graph.nodes, self.modules):
            if isinstance(mod, ConvBlock) and graph.nodes[node.inputs[0]].op == INPUT:
                mod.needs_input_grad = False
        self.train = True

    # -- parameter access ---------------------------------------------------

    def named_parameters(self):
        for i, mod in enumerate(self.modules):
            for name, arr in mod.params.items():
                yield f"{i}.{name}", arr

    def named_buffers(self):
        for i, mod in enumerate(self.modules):
            for name, arr in mod.buffers.items():
                yield f"{i}.{name}", arr

    def parameters(self) -> dict:
        return dict(self.named_parameters())

    def gradients(self) -> dict:
        return {f"{i}.{name}": g for i, mod in enumerate(self.modules) for name, g in mod.grads.items()}

    def param_count(self) -> int:
        return sum(a.size for _, a in self.named_parameters())

    # -- execution ----------------------------------------------------------

    def forward(self, x, train=None):
        if train is None:
            train = self.train
        x = np.asarray(x, dtype=self.dtype)
        expect = tuple(self.graph.input_shape)
        if x.shape[1:] != expect:
            raise ShapeMismatch(f"network expects inputs of shape {expect}, got {x.shape[1:]}")
        outs = []
        for node, mod in zip(self.graph.nodes, self.modules):
            ins = [outs[i] for i in node.inputs] if node.inputs else [x]
            outs.append(mod.forward(ins, train))
        return outs[-1]

    def backward(self, dlogits):
        grads = [None] * len(self.modules)
        grads[-1] = dlogits
        for node, mod in zip(reversed(self.graph.nodes), reversed(self.modules)):
            d = grads[node.index]
            grads[node.index] = None
            if not node.inputs or d is None:
                continue
            for src, dx in zip(node.inputs, mod.backward(d)):
                if dx is None:
                    continue
                grads[src] = dx if grads[src] is None else grads[src] + dx

    def loss_and_grad(self, x, labels, train=True):
        logits = self.forward(x, train)
        loss, dlogits = ops.softmax_cross_entropy(logits, labels)
        if not np.isfinite(loss):
            raise TrainingDiverged(f"non-finite loss {loss}")
        self.backward(dlogits)
        return loss

    def predict(self, x, batch_size=256):
        """Class predictions in inference mode; argmax ties go to the lowest class."""
        preds = []
        for start in range(0, len(x), batch_size):
            logits = self.forward(x[start:start + batch_size], train=False)
            preds.append(np.argmax(logits, axis=1))
        return np.concatenate(preds) if preds else np.zeros(0, dtype=np.int64)

    def accuracy(self, x, labels, batch_size=256) -> float:
        if len(x) == 0:
            return 0.0
        return float(np.mean(self.predict(x, batch_size) == np.asarray(labels)))


def save_weights(net: Network, path) -> None:
    """Little-endian float32 snapshot with a JSON manifest of names and shapes."""
    arrays = list(net.named_parameters()) + list(net.named_buffers())
    manifest = json.dumps([{"name": n, "shape": list(a.shape)} for n, a in arrays]).encode()
    with open(path, "wb") as fh:
        fh.write(WEIGHTS_MAGIC)
        fh.write(struct.pack("<II", WEIGHTS_VERSION, len(manifest)))
        fh.write(manifest)
        for _, a in arrays:
            fh.write(np.ascontiguousarray(a, dtype="<f4").tobytes())


def load_weights(net: Network, path) -> None:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 12 or blob[:4] != WEIGHTS_MAGIC:
        raise CorruptCheckpoint("not a weight snapshot")
    version, mlen = struct.unpack("<II", blob[4:12])
    if version != WEIGHTS_VERSION:
        raise VersionMismatch(f"weight snapshot version {version}, expected {WEIGHTS_VERSION}")
    try:
        manifest = json.loads(blob[12:12 + mlen])
    except ValueError as exc:
        raise CorruptCheckpoint("unreadable manifest") from exc
    targets = dict(list(net.named_parameters()) + list(net.named_buffers()))
    offset = 12 + mlen
    for entry in manifest:
        arr = targets.get(entry["name"])
        if arr is None or list(arr.shape) != entry["shape"]:
            raise ShapeMismatch(f"snapshot entry {entry['name']} does not fit this network")
        nbytes = 4 * arr.size
        if offset + nbytes > len(blob):
            raise CorruptCheckpoint("weight snapshot is truncated")
        arr[...] = np.frombuffer(blob, dtype="<f4", count=arr.size, offset=offset).reshape(arr.shape)
        offset += nbytes
    if offset != len(blob) or len(manifest) != len(targets):
        raise CorruptCheckpoint("weight snapshot size does not match its manifest")
