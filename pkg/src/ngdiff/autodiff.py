"""Minimal reverse-mode automatic differentiation over dense float64 arrays.

A ``Graph`` is built once per model and re-run on fresh parameter vectors
and input batches.  The forward pass caches every node value; ``backward``
replays the tape in reverse and accumulates adjoints into a flat gradient
aligned with the graph's parameter layout.  The operation set is the
minimum needed for small MLP classifiers and analytic objectives: matmul,
bias add, tanh, relu, softmax cross-entropy, per-sample true-label
log-probability, elementwise square/exp/log/log-sigmoid, affine scaling,
and full-array reductions.

Everything is 64-bit.  Graphs are single-owner: a forward/backward pair
must not be interleaved with runs of the same graph from another thread.
``ParameterVector`` and ``FlatGradient`` are immutable values and safe to
share.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


class DimensionError(ValueError):
    """Shapes or layouts do not line up."""


class NumericError(ArithmeticError):
    """A non-finite value appeared where a finite one is required."""


class GraphStateError(RuntimeError):
    """A graph operation was called in the wrong order (e.g. backward before forward)."""


def _as_f64(value) -> np.ndarray:
    return np.asarray(value, dtype=np.float64)


def _frozen_f64(value) -> np.ndarray:
    arr = _as_f64(value).copy()
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class Tensor:
    """Dense row-major float64 array with an explicit shape.

    Invariants: ``len(data) == prod(shape)`` and every entry is finite.
    """

    shape: tuple[int, ...]
    data: np.ndarray

    def __post_init__(self):
        shape = tuple(int(s) for s in self.shape)
        if any(s <= 0 for s in shape):
            raise DimensionError(f"tensor shape must be positive, got {shape}")
        data = _frozen_f64(self.data).reshape(-1)
        if data.size != math.prod(shape):
            raise DimensionError(
                f"tensor data length {data.size} does not match shape {shape}"
            )
        if not np.all(np.isfinite(data)):
            raise NumericError("tensor entries must be finite")
        object.__setattr__(self, "shape", shape)
        object.__setattr__(self, "data", data)

    @classmethod
    def from_array(cls, array) -> "Tensor":
        arr = _as_f64(array)
        return cls(arr.shape, arr.reshape(-1))

    @property
    def array(self) -> np.ndarray:
        return self.data.reshape(self.shape)


@dataclass(frozen=True)
class Segment:
    """One named slice of the flat parameter vector."""

    name: str
    shape: tuple[int, ...]
    offset: int

    @property
    def size(self) -> int:
        return math.prod(self.shape)


@dataclass(frozen=True)
class ParameterLayout:
    """Ordered, contiguous, non-overlapping segments covering a flat vector."""

    segments: tuple[Segment, ...]

    def __post_init__(self):
        offset = 0
        names = set()
        for seg in self.segments:
            if seg.offset != offset:
                raise DimensionError(
                    f"segment {seg.name!r} offset {seg.offset}, expected {offset}"
                )
            if seg.name in names:
                raise DimensionError(f"duplicate segment name {seg.name!r}")
            names.add(seg.name)
            offset += seg.size

    @property
    def total_size(self) -> int:
        return sum(seg.size for seg in self.segments)

    def segment(self, name: str) -> Segment:
        for seg in self.segments:
            if seg.name == name:
                return seg
        raise KeyError(name)

    def view(self, data: np.ndarray, name: str) -> np.ndarray:
        seg = self.segment(name)
        return data[seg.offset : seg.offset + seg.size].reshape(seg.shape)


def _check_vector(data: np.ndarray, layout: ParameterLayout, what: str) -> np.ndarray:
    data = _frozen_f64(data).reshape(-1)
    if data.size != layout.total_size:
        raise DimensionError(
            f"{what} length {data.size} does not match layout size {layout.total_size}"
        )
    if not np.all(np.isfinite(data)):
        raise NumericError(f"{what} entries must be finite")
    return data


@dataclass(frozen=True)
class ParameterVector:
    """Flat model parameters plus the layout mapping segments to weights."""

    data: np.ndarray
    layout: ParameterLayout

    def __post_init__(self):
        object.__setattr__(self, "data", _check_vector(self.data, self.layout, "parameter"))

    def segment(self, name: str) -> np.ndarray:
        return self.layout.view(self.data, name)

    @property
    def size(self) -> int:
        return self.data.size


@dataclass(frozen=True)
class FlatGradient:
    """Flat gradient in the same layout as the parameter vector it differentiates."""

    data: np.ndarray
    layout: ParameterLayout

    def __post_init__(self):
        object.__setattr__(self, "data", _check_vector(self.data, self.layout, "gradient"))

    def segment(self, name: str) -> np.ndarray:
        return self.layout.view(self.data, name)

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.data))


def _same_layout(a: ParameterLayout, b: ParameterLayout, what: str) -> None:
    if a is not b and a != b:
        raise DimensionError(f"{what}: parameter layouts differ")


def axpy_update(params: ParameterVector, direction: FlatGradient, eta: float) -> ParameterVector:
    """Return ``params - eta * direction`` as a new vector; inputs unchanged."""
    _same_layout(params.layout, direction.layout, "axpy_update")
    eta = float(eta)
    if not math.isfinite(eta):
        raise NumericError("step size must be finite")
    return ParameterVector(params.data - eta * direction.data, params.layout)


@dataclass(frozen=True)
class _Node:
    op: str
    inputs: tuple[int, ...]
    label: str
    payload: object = None


class Graph:
    """Topologically ordered operation tape with parameter and input leaves.

    Build the graph once with the ``param``/``input``/op methods, call
    ``set_loss`` on the scalar output, then evaluate with ``run`` (or the
    module-level ``forward``) and differentiate with ``backward``.
    """

    def __init__(self):
        self._nodes: list[_Node] = []
        self._segments: list[Segment] = []
        self._next_offset = 0
        self._layout: ParameterLayout | None = None
        self.loss: int | None = None
        self.logits: int | None = None
        self.labels_input: int | None = None
        self._values: list | None = None

    # -- construction ----------------------------------------------------

    def _add(self, op: str, inputs: tuple[int, ...], label: str, payload=None) -> int:
        for i in inputs:
            if not 0 <= i < len(self._nodes):
                raise DimensionError(f"node input {i} out of range")
        self._nodes.append(_Node(op, inputs, label, payload))
        return len(self._nodes) - 1

    def param(self, name: str, shape) -> int:
        if self._layout is not None:
            raise GraphStateError("cannot add parameters after the layout is finalized")
        shape = tuple(int(s) for s in shape)
        seg = Segment(name, shape, self._next_offset)
        self._segments.append(seg)
        self._next_offset += seg.size
        return self._add("param", (), name, payload=name)

    def input(self, name: str, width: int | None = None) -> int:
        return self._add("input", (), name, payload=(name, width))

    def input_labels(self, name: str = "labels") -> int:
        node = self._add("labels", (), name, payload=name)
        self.labels_input = node
        return node

    def const(self, value) -> int:
        return self._add("const", (), "const", payload=_frozen_f64(value))

    def matmul(self, a: int, b: int) -> int:
        return self._add("matmul", (a, b), "matmul")

    def add_bias(self, x: int, b: int) -> int:
        return self._add("add_bias", (x, b), "add_bias")

    def add(self, a: int, b: int) -> int:
        return self._add("add", (a, b), "add")

    def sub(self, a: int, b: int) -> int:
        return self._add("sub", (a, b), "sub")

    def scale(self, a: int, k: float) -> int:
        return self._add("scale", (a,), f"scale({k:g})", payload=float(k))

    def tanh(self, a: int) -> int:
        return self._add("tanh", (a,), "tanh")

    def relu(self, a: int) -> int:
        return self._add("relu", (a,), "relu")

    def square(self, a: int) -> int:
        return self._add("square", (a,), "square")

    def exp(self, a: int) -> int:
        return self._add("exp", (a,), "exp")

    def log(self, a: int) -> int:
        return self._add("log", (a,), "log")

    def logsigmoid(self, a: int) -> int:
        return self._add("logsigmoid", (a,), "logsigmoid")

    def reduce_sum(self, a: int) -> int:
        return self._add("sum", (a,), "sum")

    def reduce_mean(self, a: int) -> int:
        return self._add("mean", (a,), "mean")

    def softmax_cross_entropy(self, logits: int, labels: int) -> int:
        return self._add("softmax_xent", (logits, labels), "softmax_xent")

    def logprob_true(self, logits: int, labels: int) -> int:
        """Per-sample log-probability of the true label under the softmax."""
        return self._add("logprob_true", (logits, labels), "logprob_true")

    def set_loss(self, node: int) -> None:
        self.loss = node

    def mark_logits(self, node: int) -> None:
        self.logits = node

    def extended(self) -> "Graph":
        """Copy of this graph sharing layout and nodes, open for new op nodes.

        New parameters cannot be added to the copy; it differentiates the
        same flat vector as the original.
        """
        g = Graph()
        g._nodes = list(self._nodes)
        g._segments = list(self._segments)
        g._next_offset = self._next_offset
        g._layout = self.layout
        g.loss = self.loss
        g.logits = self.logits
        g.labels_input = self.labels_input
        return g

    @property
    def layout(self) -> ParameterLayout:
        if self._layout is None:
            self._layout = ParameterLayout(tuple(self._segments))
        return self._layout

    # -- evaluation --------------------------------------------------------

    def run(self, params: ParameterVector, bindings: dict | None = None) -> float:
        """Forward pass: returns the scalar loss and caches all node values."""
        if self.loss is None:
            raise GraphStateError("graph has no loss output")
        _same_layout(params.layout, self.layout, "forward")
        bindings = bindings or {}
        values: list = [None] * len(self._nodes)
        # finiteness is checked per node, so numpy's own warnings are noise
        with np.errstate(all="ignore"):
            for i, node in enumerate(self._nodes):
                values[i] = self._eval(node, values, params, bindings)
                if node.op != "labels" and not np.all(np.isfinite(values[i])):
                    raise NumericError(f"non-finite value at node {i} ({node.label})")
        self._values = values
        out = values[self.loss]
        if np.ndim(out) != 0 and np.size(out) != 1:
            raise DimensionError("loss output must be a scalar")
        return float(out)

    def value(self, node: int) -> np.ndarray:
        """Cached value of a node from the most recent ``run``."""
        if self._values is None:
            raise GraphStateError("no forward pass has been run")
        return self._values[node]

    def _eval(self, node: _Node, values, params: ParameterVector, bindings: dict):
        op = node.op
        if op == "param":
            return params.segment(node.payload)
        if op == "input":
            name, width = node.payload
            if name not in bindings:
                raise DimensionError(f"missing binding for input {name!r}")
            arr = _as_f64(bindings[name])
            if arr.shape[0] == 0:
                raise DimensionError(f"input {name!r} must be non-empty")
            if width is not None:
                if arr.ndim != 2 or arr.shape[1] != width:
                    raise DimensionError(
                        f"input {name!r} expects shape (n, {width}), got {arr.shape}"
                    )
            return arr
        if op == "labels":
            name = node.payload
            if name not in bindings:
                raise DimensionError(f"missing binding for labels {name!r}")
            arr = np.asarray(bindings[name])
            if arr.ndim != 1 or arr.shape[0] == 0:
                raise DimensionError("labels must be a non-empty 1-D integer array")
            return arr.astype(np.int64)
        if op == "const":
            return node.payload
        a = values[node.inputs[0]] if node.inputs else None
        if op == "matmul":
            b = values[node.inputs[1]]
            if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
                raise DimensionError(
                    f"matmul shapes {a.shape} x {b.shape} are incompatible"
                )
            return a @ b
        if op == "add_bias":
            b = values[node.inputs[1]]
            if a.ndim != 2 or b.ndim != 1 or a.shape[1] != b.shape[0]:
                raise DimensionError(
                    f"add_bias shapes {a.shape} + {b.shape} are incompatible"
                )
            return a + b
        if op in ("add", "sub"):
            b = values[node.inputs[1]]
            if a.shape != b.shape:
                raise DimensionError(f"{op} shapes {a.shape} vs {b.shape} differ")
            return a + b if op == "add" else a - b
        if op == "scale":
            return node.payload * a
        if op == "tanh":
            return np.tanh(a)
        if op == "relu":
            return np.maximum(a, 0.0)
        if op == "square":
            return a * a
        if op == "exp":
            return np.exp(a)
        if op == "log":
            return np.log(a)
        if op == "logsigmoid":
            return -np.logaddexp(0.0, -a)
        if op == "sum":
            return np.sum(a)
        if op == "mean":
            return np.mean(a)
        if op in ("softmax_xent", "logprob_true"):
            labels = values[node.inputs[1]]
            if a.ndim != 2:
                raise DimensionError("logits must be 2-D")
            if labels.shape[0] != a.shape[0]:
                raise DimensionError("labels length must match the batch")
            if np.any(labels < 0) or np.any(labels >= a.shape[1]):
                raise DimensionError("labels out of class range")
            m = a.max(axis=1, keepdims=True)
            lse = m + np.log(np.sum(np.exp(a - m), axis=1, keepdims=True))
            logprob = a[np.arange(a.shape[0]), labels] - lse[:, 0]
            if op == "logprob_true":
                return logprob
            return -np.mean(logprob)
        raise GraphStateError(f"unknown op {op!r}")

    def backward(self) -> FlatGradient:
        """Gradient of the loss w.r.t. the flat parameter vector.

        Requires a preceding ``run`` on this graph; adjoints are seeded at
        the loss node and accumulated down the reversed tape.
        """
        if self._values is None:
            raise GraphStateError("backward requires a completed forward pass")
        values = self._values
        adj: list = [None] * len(self._nodes)
        adj[self.loss] = np.asarray(1.0)

        def push(idx: int, grad) -> None:
            if adj[idx] is None:
                adj[idx] = grad
            else:
                adj[idx] = adj[idx] + grad

        for i in range(len(self._nodes) - 1, -1, -1):
            node, g = self._nodes[i], adj[i]
            if g is None or node.op in ("param", "input", "labels", "const"):
                continue
            ins = node.inputs
            op = node.op
            if op == "matmul":
                a, b = values[ins[0]], values[ins[1]]
                push(ins[0], g @ b.T)
                push(ins[1], a.T @ g)
            elif op == "add_bias":
                push(ins[0], g)
                push(ins[1], g.sum(axis=0))
            elif op == "add":
                push(ins[0], g)
                push(ins[1], g)
            elif op == "sub":
                push(ins[0], g)
                push(ins[1], -g)
            elif op == "scale":
                push(ins[0], node.payload * g)
            elif op == "tanh":
                y = values[i]
                push(ins[0], (1.0 - y * y) * g)
            elif op == "relu":
                push(ins[0], (values[ins[0]] > 0.0) * g)
            elif op == "square":
                push(ins[0], 2.0 * values[ins[0]] * g)
            elif op == "exp":
                push(ins[0], values[i] * g)
            elif op == "log":
                push(ins[0], g / values[ins[0]])
            elif op == "logsigmoid":
                # d/dx log(sigmoid(x)) = sigmoid(-x)
                x = values[ins[0]]
                push(ins[0], np.exp(-np.logaddexp(0.0, x)) * g)
            elif op == "sum":
                push(ins[0], np.broadcast_to(g, np.shape(values[ins[0]])).copy())
            elif op == "mean":
                x = values[ins[0]]
                push(ins[0], np.broadcast_to(g / np.size(x), np.shape(x)).copy())
            elif op in ("softmax_xent", "logprob_true"):
                logits, labels = values[ins[0]], values[ins[1]]
                m = logits.max(axis=1, keepdims=True)
                e = np.exp(logits - m)
                probs = e / e.sum(axis=1, keepdims=True)
                onehot = np.zeros_like(probs)
                onehot[np.arange(len(labels)), labels] = 1.0
                if op == "softmax_xent":
                    push(ins[0], (probs - onehot) * (g / len(labels)))
                else:
                    push(ins[0], np.asarray(g).reshape(-1, 1) * (onehot - probs))
            else:
                raise GraphStateError(f"no backward rule for op {op!r}")

        flat = np.zeros(self.layout.total_size)
        for i, node in enumerate(self._nodes):
            if node.op == "param" and adj[i] is not None:
                seg = self.layout.segment(node.payload)
                flat[seg.offset : seg.offset + seg.size] = np.asarray(adj[i]).ravel()
        return FlatGradient(flat, self.layout)


def forward(graph: Graph, params: ParameterVector, batch=None) -> float:
    """Run the graph on a labeled batch, binding ``features`` and ``labels``.

    ``batch`` may be None for graphs without data inputs (analytic losses).
    """
    bindings = {}
    if batch is not None:
        features = batch.features.array if isinstance(batch.features, Tensor) else batch.features
        bindings = {"features": features, "labels": batch.labels}
    return graph.run(params, bindings)


def backward(graph: Graph) -> FlatGradient:
    return graph.backward()
