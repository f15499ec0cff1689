"""Dataset handling: IDX ingestion, the embedded 2D benchmark, input
normalization folded into the network, and deterministic batching."""

from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass, field

import numpy as np

from setnn.network import Linear, Network

__all__ = [
    "DataFormatError",
    "Dataset",
    "batches",
    "load_mnist_idx",
    "normalize_into_network",
    "synthetic_2d",
]

_IMAGE_MAGIC = 2051
_LABEL_MAGIC = 2049


class DataFormatError(ValueError):
    """Raised when a dataset file does not match the expected format."""


@dataclass(frozen=True)
class Dataset:
    """Classification dataset with inputs in [0, 1]^d and integer labels."""

    inputs: np.ndarray
    labels: np.ndarray
    num_classes: int
    _targets: np.ndarray | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        inputs = np.asarray(self.inputs, dtype=np.float64)
        labels = np.asarray(self.labels, dtype=np.int64)
        if inputs.ndim != 2:
            raise ValueError(f"inputs must be 2-D (samples, features), got {inputs.shape}")
        if labels.shape != (inputs.shape[0],):
            raise ValueError(
                f"labels shape {labels.shape} does not match {inputs.shape[0]} samples"
            )
        if inputs.size and (inputs.min() < 0.0 or inputs.max() > 1.0):
            raise ValueError("inputs must lie in [0, 1]")
        if labels.size and (labels.min() < 0 or labels.max() >= self.num_classes):
            raise ValueError(f"labels must lie in [0, {self.num_classes})")
        object.__setattr__(self, "inputs", inputs)
        object.__setattr__(self, "labels", labels)

    def __len__(self) -> int:
        return self.inputs.shape[0]

    @property
    def input_dim(self) -> int:
        return self.inputs.shape[1]

    def targets(self) -> np.ndarray:
        """One-hot targets, shape (N, num_classes); computed once and cached."""
        if self._targets is None:
            t = np.zeros((len(self), self.num_classes))
            t[np.arange(len(self)), self.labels] = 1.0
            object.__setattr__(self, "_targets", t)
        return self._targets

    def take(self, indices) -> "Dataset":
        """Sub-dataset at the given sample indices."""
        idx = np.asarray(indices)
        return Dataset(self.inputs[idx], self.labels[idx], self.num_classes)


def _read_exact(f, count: int, what: str) -> bytes:
    data = f.read(count)
    if len(data) != count:
        raise DataFormatError(f"truncated {what}: wanted {count} bytes, got {len(data)}")
    return data


def _open_maybe_gzip(path):
    with open(path, "rb") as f:
        head = f.read(2)
    if head == b"\x1f\x8b":
        return gzip.open(path, "rb")
    return open(path, "rb")


def load_mnist_idx(images_path, labels_path) -> Dataset:
    """Load an IDX image/label file pair (gzip-compressed files accepted).

    Big-endian format: image files start with magic 2051 and dimensions
    (count, rows, cols); label files with magic 2049 and a count. Pixels are
    scaled to [0, 1] by division with 255.
    """
    with _open_maybe_gzip(images_path) as f:
        magic, count, rows, cols = struct.unpack(">IIII", _read_exact(f, 16, "image header"))
        if magic != _IMAGE_MAGIC:
            raise DataFormatError(f"bad image magic {magic}, expected {_IMAGE_MAGIC}")
        payload = _read_exact(f, count * rows * cols, "image payload")
        if f.read(1):
            raise DataFormatError("trailing bytes after image payload")
    images = np.frombuffer(payload, dtype=np.uint8).astype(np.float64) / 255.0
    images = images.reshape(count, rows * cols)

    with _open_maybe_gzip(labels_path) as f:
        magic, lcount = struct.unpack(">II", _read_exact(f, 8, "label header"))
        if magic != _LABEL_MAGIC:
            raise DataFormatError(f"bad label magic {magic}, expected {_LABEL_MAGIC}")
        raw = _read_exact(f, lcount, "label payload")
        if f.read(1):
            raise DataFormatError("trailing bytes after label payload")
    labels = np.frombuffer(raw, dtype=np.uint8).astype(np.int64)

    if count != lcount:
        raise DataFormatError(f"image/label count mismatch: {count} images, {lcount} labels")
    return Dataset(images, labels, num_classes=10)


def synthetic_2d() -> Dataset:
    """The embedded 20-sample binary benchmark on [0, 1]^2.

    Targets are one-hot pairs; (1, 0) is class 0 and (0, 1) is class 1.
    The class balance is 10/10.
    """
    # (x1, x2, class index) with class 0 <-> target (1,0), class 1 <-> (0,1).
    rows = [
        (0.0622, 0.6995, 1),
        (0.6534, 0.9409, 1),
        (0.4759, 0.7163, 0),
        (0.8812, 0.1020, 0),
        (0.5047, 0.4685, 0),
        (0.1470, 0.3275, 0),
        (0.3439, 0.1395, 1),
        (0.9098, 0.5422, 1),
        (0.8588, 0.8696, 1),
        (0.0545, 0.0825, 0),
        (0.6889, 0.4771, 0),
        (0.9329, 0.2857, 1),
        (0.6781, 0.3043, 1),
        (0.4641, 0.3302, 1),
        (0.4575, 0.9487, 1),
        (0.1272, 0.4699, 0),
        (0.6506, 0.7315, 1),
        (0.5207, 0.1229, 0),
        (0.3271, 0.4574, 0),
        (0.6858, 0.0616, 0),
    ]
    inputs = np.array([[r[0], r[1]] for r in rows])
    labels = np.array([r[2] for r in rows], dtype=np.int64)
    return Dataset(inputs, labels, num_classes=2)


def normalize_into_network(mean, std, net: Network) -> Network:
    """Pre-compose the first linear layer with x -> (x - mean) / std.

    Perturbation sets stay in raw [0, 1] input space; normalization becomes
    part of the first affine map and is propagated exactly. mean/std may be
    scalars or per-feature vectors.
    """
    if not net.layers or not isinstance(net.layers[0], Linear):
        raise ValueError("the first layer must be linear to fold normalization into")
    first = net.layers[0]
    d = first.in_dim
    mean = np.broadcast_to(np.asarray(mean, dtype=np.float64), (d,))
    std = np.broadcast_to(np.asarray(std, dtype=np.float64), (d,))
    if np.any(std <= 0.0):
        raise ValueError("std must be positive")
    W = first.weights / std[None, :]
    b = first.bias - W @ mean
    out = net.copy()
    out.layers[0] = Linear(W, b)
    return out


def batches(dataset, batch_size: int, seed: int, epoch: int):
    """Deterministic shuffled mini-batch index iterator.

    The permutation is a pure function of (seed, epoch); the last partial
    batch is kept. dataset may be a Dataset or a sample count.
    """
    if batch_size < 1:
        raise ValueError(f"batch_size must be >= 1, got {batch_size}")
    n = dataset if isinstance(dataset, (int, np.integer)) else len(dataset)
    perm = np.random.default_rng([seed, epoch]).permutation(n)
    for start in range(0, n, batch_size):
        yield perm[start : start + batch_size]
