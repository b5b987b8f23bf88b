"""Deterministic problem generators for the desk-scale experiments.

Synthetic Gaussian-cluster classification stands in for image/text corpora:
class ``k`` is an isotropic unit-variance blob centered at
``separation * e_k``.  Everything is a pure function of its seed, so runs
are reproducible bit for bit on any platform with IEEE float64.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .autodiff import Graph, ParameterVector, Tensor


@dataclass(frozen=True)
class LabeledBatch:
    """Feature matrix (n x d) with integer class labels."""

    features: Tensor
    labels: np.ndarray
    class_count: int

    def __post_init__(self):
        labels = np.asarray(self.labels, dtype=np.int64).copy()
        labels.flags.writeable = False
        if len(self.features.shape) != 2:
            raise ValueError("features must be 2-D")
        if labels.ndim != 1 or labels.shape[0] != self.features.shape[0]:
            raise ValueError("labels must be 1-D with one entry per row")
        if labels.shape[0] < 1:
            raise ValueError("batch must be non-empty")
        if self.class_count < 1 or labels.min() < 0 or labels.max() >= self.class_count:
            raise ValueError("labels must lie in [0, class_count)")
        object.__setattr__(self, "labels", labels)

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def take(self, indices: np.ndarray) -> "LabeledBatch":
        return LabeledBatch(
            Tensor.from_array(self.features.array[indices]),
            self.labels[indices],
            self.class_count,
        )


@dataclass(frozen=True)
class ForgetRetainSplit:
    """Partition of a dataset into the class to forget and everything else."""

    retain: LabeledBatch
    forget: LabeledBatch
    forget_class: int

    def __post_init__(self):
        if not np.all(self.forget.labels == self.forget_class):
            raise ValueError("forget split must contain only the forget class")
        if np.any(self.retain.labels == self.forget_class):
            raise ValueError("retain split must not contain the forget class")


def gen_gaussian_clusters(
    seed: int, classes: int, per_class: int, dim: int, separation: float
) -> LabeledBatch:
    """Axis-anchored Gaussian blobs, one per class, deterministic in ``seed``."""
    if classes < 2:
        raise ValueError("need at least 2 classes")
    if per_class < 1:
        raise ValueError("per_class must be >= 1")
    if not separation > 0:
        raise ValueError("separation must be positive")
    if dim < classes:
        raise ValueError(f"dim={dim} too small for {classes} axis-anchored centers")
    rng = np.random.default_rng(seed)
    features = rng.standard_normal((classes * per_class, dim))
    labels = np.repeat(np.arange(classes), per_class)
    features[np.arange(len(labels)), labels] += separation
    return LabeledBatch(Tensor.from_array(features), labels, classes)


def split_forget_retain(data: LabeledBatch, forget_class: int) -> ForgetRetainSplit:
    """Partition by label; every sample lands in exactly one side."""
    mask = data.labels == forget_class
    if not mask.any():
        raise ValueError(f"class {forget_class} is absent from the dataset")
    idx = np.arange(data.n)
    return ForgetRetainSplit(
        retain=data.take(idx[~mask]),
        forget=data.take(idx[mask]),
        forget_class=forget_class,
    )


def mlp_factory(seed: int, layer_widths) -> tuple[Graph, ParameterVector]:
    """Tanh MLP with a softmax cross-entropy head.

    ``layer_widths`` runs input width through hidden widths to class count;
    two entries give plain multinomial logistic regression.  Weights are
    uniform(-s, s) with ``s = sqrt(6 / (fan_in + fan_out))``, biases zero,
    deterministic in ``seed``.
    """
    widths = [int(w) for w in layer_widths]
    if len(widths) < 2:
        raise ValueError("need at least input and output widths")
    g = Graph()
    x = g.input("features", width=widths[0])
    labels = g.input_labels()
    rng = np.random.default_rng(seed)
    init = np.zeros(0)
    h = x
    for i, (fan_in, fan_out) in enumerate(zip(widths, widths[1:]), start=1):
        w = g.param(f"w{i}", (fan_in, fan_out))
        b = g.param(f"b{i}", (fan_out,))
        h = g.add_bias(g.matmul(h, w), b)
        if i < len(widths) - 1:
            h = g.tanh(h)
        s = math.sqrt(6.0 / (fan_in + fan_out))
        init = np.concatenate(
            [init, rng.uniform(-s, s, size=fan_in * fan_out), np.zeros(fan_out)]
        )
    g.mark_logits(h)
    g.set_loss(g.softmax_cross_entropy(h, labels))
    return g, ParameterVector(init, g.layout)


def save_batch_csv(batch: LabeledBatch, path) -> None:
    """Write a dataset as ``f0..f{d-1},label`` rows."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"f{j}" for j in range(batch.dim)] + ["label"])
        feats = batch.features.array
        for i in range(batch.n):
            writer.writerow([repr(float(v)) for v in feats[i]] + [int(batch.labels[i])])


def load_batch_csv(path, class_count: int | None = None) -> LabeledBatch:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if not header or header[-1] != "label" or header[:-1] != [f"f{j}" for j in range(len(header) - 1)]:
            raise ValueError(f"unexpected CSV header in {path}")
        rows = list(reader)
    features = np.array([[float(v) for v in row[:-1]] for row in rows])
    labels = np.array([int(row[-1]) for row in rows], dtype=np.int64)
    if class_count is None:
        class_count = int(labels.max()) + 1
    return LabeledBatch(Tensor.from_array(features), labels, class_count)
