"""Feed-forward network model: dense and element-wise activation layers,
point-based forward/backward passes, parameter initialization, and a
versioned binary serialization format.

Layers alternate freely; an activation layer preserves its width. The point
backward pass is the reference gradient implementation that the set-based
training must collapse to in the degenerate (epsilon=0, tau=0) case.

Public functions accept single inputs of shape (n,) or batches of shape
(B, n); outputs match the input's batchedness.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "Linear",
    "Activation",
    "Network",
    "ACTIVATIONS",
    "point_forward",
    "point_backward",
    "cross_entropy",
    "cross_entropy_grad",
    "softmax",
    "init_mlp",
    "serialize",
    "deserialize",
    "save_network",
    "load_network",
]


def _relu(x):
    return np.maximum(x, 0.0)


def _relu_prime(x):
    # Derivative at exactly 0 is defined as 0 (subgradient choice).
    return (x > 0).astype(np.float64)


def _tanh_prime(x):
    t = np.tanh(x)
    return 1.0 - t * t


def _sigmoid(x):
    # Stable in both tails: never exponentiates a large positive argument.
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _sigmoid_prime(x):
    s = _sigmoid(x)
    return s * (1.0 - s)


@dataclass(frozen=True)
class ActivationFunction:
    name: str
    phi: Callable[[np.ndarray], np.ndarray]
    phi_prime: Callable[[np.ndarray], np.ndarray]


ACTIVATIONS: dict[str, ActivationFunction] = {
    "relu": ActivationFunction("relu", _relu, _relu_prime),
    "tanh": ActivationFunction("tanh", np.tanh, _tanh_prime),
    "sigmoid": ActivationFunction("sigmoid", _sigmoid, _sigmoid_prime),
}


@dataclass
class Linear:
    """Dense layer h -> W h + b with W of shape (n_out, n_in)."""

    weights: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.weights.ndim != 2:
            raise ValueError(f"weights must be 2-D, got shape {self.weights.shape}")
        if self.bias.shape != (self.weights.shape[0],):
            raise ValueError(
                f"bias shape {self.bias.shape} does not match weight rows "
                f"{self.weights.shape[0]}"
            )

    @property
    def in_dim(self) -> int:
        return self.weights.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weights.shape[0]


@dataclass(frozen=True)
class Activation:
    """Element-wise activation layer of a fixed width."""

    kind: str
    width: int

    def __post_init__(self):
        if self.kind not in ACTIVATIONS:
            raise ValueError(f"unknown activation kind: {self.kind!r}")

    @property
    def in_dim(self) -> int:
        return self.width

    @property
    def out_dim(self) -> int:
        return self.width


Layer = Linear | Activation


@dataclass
class Network:
    """Ordered stack of layers with validated width chaining."""

    layers: list[Layer]

    def __post_init__(self):
        if not self.layers:
            raise ValueError("network needs at least one layer")
        for prev, cur in zip(self.layers, self.layers[1:]):
            if prev.out_dim != cur.in_dim:
                raise ValueError(
                    f"layer width mismatch: {prev.out_dim} feeds {cur.in_dim}"
                )

    @property
    def input_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def output_dim(self) -> int:
        return self.layers[-1].out_dim

    def linear_layers(self) -> list[Linear]:
        return [layer for layer in self.layers if isinstance(layer, Linear)]

    def copy(self) -> "Network":
        out = []
        for layer in self.layers:
            if isinstance(layer, Linear):
                out.append(Linear(layer.weights.copy(), layer.bias.copy()))
            else:
                out.append(layer)
        return Network(out)


def _as_batch(x) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        return x[None, :], True
    if x.ndim == 2:
        return x, False
    raise ValueError(f"expected 1-D or 2-D input, got shape {x.shape}")


def point_forward(net: Network, x) -> tuple[np.ndarray, list[np.ndarray]]:
    """Evaluate the network on a point, retaining per-layer states.

    Returns:
        (y, hidden) where hidden[k] is the input to layer k and
        hidden[-1] = y. For backprop, pass hidden back to point_backward.
    """
    h, single = _as_batch(x)
    if h.shape[1] != net.input_dim:
        raise ValueError(
            f"input dimension {h.shape[1]} does not match network input "
            f"{net.input_dim}"
        )
    hidden = [h]
    for layer in net.layers:
        if isinstance(layer, Linear):
            h = h @ layer.weights.T + layer.bias
        else:
            h = ACTIVATIONS[layer.kind].phi(h)
        hidden.append(h)
    if single:
        return h[0], [s[0] for s in hidden]
    return h, hidden


def point_backward(
    net: Network, hidden: Sequence[np.ndarray], g_out
) -> tuple[list[np.ndarray], list[tuple[np.ndarray, np.ndarray] | None]]:
    """Backpropagate an output gradient through the network.

    Args:
        hidden: per-layer states from point_forward on the same network.
        g_out: gradient of the loss w.r.t. the network output; shape (n_K,)
            or (B, n_K) matching the forward's batchedness. For batched
            inputs the parameter gradients are summed over the batch.

    Returns:
        (gs, grads): gs[k] is the loss gradient w.r.t. the input of layer k
        (gs[0] is the input-space gradient); grads aligns with net.layers and
        holds (dW, db) for linear layers, None for activations.
    """
    if len(hidden) != len(net.layers) + 1:
        raise ValueError(
            f"hidden state count {len(hidden)} does not match layer count "
            f"{len(net.layers)}"
        )
    g, single = _as_batch(g_out)
    states = [np.asarray(h, dtype=np.float64) for h in hidden]
    if single:
        states = [h[None, :] for h in states]
    grads: list[tuple[np.ndarray, np.ndarray] | None] = [None] * len(net.layers)
    gs: list[np.ndarray] = [g]
    for k in range(len(net.layers) - 1, -1, -1):
        layer = net.layers[k]
        h_in = states[k]
        if h_in.shape[1] != layer.in_dim:
            raise ValueError(f"hidden state {k} has width {h_in.shape[1]}, "
                             f"layer expects {layer.in_dim}")
        if isinstance(layer, Linear):
            grads[k] = (g.T @ h_in, g.sum(axis=0))
            g = g @ layer.weights
        else:
            g = g * ACTIVATIONS[layer.kind].phi_prime(h_in)
        gs.append(g)
    gs.reverse()
    if single:
        gs = [v[0] for v in gs]
    return gs, grads


def softmax(y) -> np.ndarray:
    """Softmax along the last axis, shift-stabilized."""
    y = np.asarray(y, dtype=np.float64)
    shifted = y - y.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def cross_entropy(t, y) -> float | np.ndarray:
    """Cross-entropy -sum_i t_i ln softmax(y)_i via log-sum-exp.

    Accepts (n,) vectors (returns a float) or (B, n) batches (returns (B,)).
    """
    t = np.asarray(t, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    shifted = y - y.max(axis=-1, keepdims=True)
    log_p = shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    loss = -(t * log_p).sum(axis=-1)
    return float(loss) if loss.ndim == 0 else loss


def cross_entropy_grad(t, y) -> np.ndarray:
    """Gradient of cross_entropy w.r.t. the logits: softmax(y) - t."""
    return softmax(y) - np.asarray(t, dtype=np.float64)


def init_mlp(dims: Sequence[int], kind: str, seed: int) -> Network:
    """Fully connected network with the given layer widths.

    dims = (n_0, n_1, ..., n_K); an activation of the given kind follows
    every linear layer except the last. Weights are drawn from
    Normal(0, 2/fan_in) deterministically from the seed; biases are zero.
    """
    if len(dims) < 2:
        raise ValueError("need at least input and output dimensions")
    rng = np.random.default_rng(seed)
    layers: list[Layer] = []
    for i in range(len(dims) - 1):
        fan_in = dims[i]
        W = rng.normal(0.0, np.sqrt(2.0 / fan_in), (dims[i + 1], fan_in))
        layers.append(Linear(W, np.zeros(dims[i + 1])))
        if i < len(dims) - 2:
            layers.append(Activation(kind, dims[i + 1]))
    return Network(layers)


# Model file format (little-endian): magic "ZNTN", version u32 = 1,
# layer count u32; per layer one tag byte (0 = linear, 1 = relu, 2 = tanh,
# 3 = sigmoid), then for linear: n_out u32, n_in u32, W row-major f64, b f64;
# for activations: width u32.
_MAGIC = b"ZNTN"
_FORMAT_VERSION = 1
_ACT_TAGS = {"relu": 1, "tanh": 2, "sigmoid": 3}
_TAG_ACTS = {v: k for k, v in _ACT_TAGS.items()}


class ModelFormatError(ValueError):
    """Raised when a model file is malformed."""


def serialize(net: Network) -> bytes:
    parts = [_MAGIC, struct.pack("<II", _FORMAT_VERSION, len(net.layers))]
    for layer in net.layers:
        if isinstance(layer, Linear):
            parts.append(struct.pack("<BII", 0, layer.out_dim, layer.in_dim))
            parts.append(np.ascontiguousarray(layer.weights, dtype="<f8").tobytes())
            parts.append(np.ascontiguousarray(layer.bias, dtype="<f8").tobytes())
        else:
            parts.append(struct.pack("<BI", _ACT_TAGS[layer.kind], layer.width))
    return b"".join(parts)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, count: int) -> bytes:
        if self.pos + count > len(self.data):
            raise ModelFormatError("truncated model file")
        chunk = self.data[self.pos : self.pos + count]
        self.pos += count
        return chunk

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def u8(self) -> int:
        return self.take(1)[0]

    def f64_array(self, shape: tuple[int, ...]) -> np.ndarray:
        count = int(np.prod(shape))
        raw = self.take(count * 8)
        return np.frombuffer(raw, dtype="<f8").reshape(shape).astype(np.float64)


def deserialize(data: bytes) -> Network:
    r = _Reader(data)
    if r.take(4) != _MAGIC:
        raise ModelFormatError("bad magic")
    version = r.u32()
    if version != _FORMAT_VERSION:
        raise ModelFormatError(f"unsupported format version {version}")
    layer_count = r.u32()
    layers: list[Layer] = []
    for _ in range(layer_count):
        tag = r.u8()
        if tag == 0:
            n_out, n_in = r.u32(), r.u32()
            W = r.f64_array((n_out, n_in))
            b = r.f64_array((n_out,))
            layers.append(Linear(W, b))
        elif tag in _TAG_ACTS:
            layers.append(Activation(_TAG_ACTS[tag], r.u32()))
        else:
            raise ModelFormatError(f"unknown layer tag {tag}")
    if r.pos != len(data):
        raise ModelFormatError("trailing bytes after final layer")
    try:
        return Network(layers)
    except ValueError as exc:
        raise ModelFormatError(str(exc)) from exc


def save_network(net: Network, path) -> None:
    with open(path, "wb") as fh:
        fh.write(serialize(net))


def load_network(path) -> Network:
    with open(path, "rb") as fh:
        return deserialize(fh.read())
