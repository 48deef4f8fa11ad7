"""A small dense network with hand-written reverse mode and plain SGD.

Hidden layers use ReLU.  The output head is one of

* ``"softmax"`` -- affine layer followed by a (optionally masked) softmax,
* ``"linear"``  -- affine layer, no activation,
* ``"none"``    -- ReLU on the last layer as well (an encoder trunk).

Inputs may be a single vector ``(d,)`` or a batch ``(B, d)``; gradients of a
batch are summed over rows.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .core import StructuralError, TrainingError

HEADS = ("softmax", "linear", "none")
CHECKPOINT_FORMAT = "tinynet/1"


class DenseNet:
    def __init__(self, layer_dims, head: str = "linear", rng: Optional[np.random.Generator] = None, init: str = "glorot"):
        layer_dims = [int(d) for d in layer_dims]
        if len(layer_dims) < 2 or min(layer_dims) < 1:
            raise StructuralError(f"layer_dims must list at least input and output sizes, got {layer_dims}")
        if head not in HEADS:
            raise StructuralError(f"unknown head {head!r}; expected one of {HEADS}")
        self.layer_dims = layer_dims
        self.head = head
        self.version = 0
        self.weights: list[np.ndarray] = []
        self.biases: list[np.ndarray] = []
        rng = rng if rng is not None else np.random.default_rng(0)
        for fan_in, fan_out in zip(layer_dims[:-1], layer_dims[1:]):
            if init == "zeros":
                w = np.zeros((fan_in, fan_out))
            elif init == "glorot":
                limit = np.sqrt(6.0 / (fan_in + fan_out))
                w = rng.uniform(-limit, limit, size=(fan_in, fan_out))
            else:
                raise StructuralError(f"unknown init {init!r}")
            self.weights.append(w)
            self.biases.append(np.zeros(fan_out))

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    @property
    def n_params(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def params(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def flat(self) -> np.ndarray:
        return np.concatenate([p.ravel() for p in self.params()])

    def set_flat(self, vec: np.ndarray) -> None:
        vec = np.asarray(vec, dtype=np.float64)
        if vec.shape != (self.n_params,):
            raise StructuralError(f"expected {self.n_params} parameters, got shape {vec.shape}")
        pos = 0
        for p in self.params():
            p[...] = vec[pos : pos + p.size].reshape(p.shape)
            pos += p.size
        self.version += 1

    def copy(self) -> DenseNet:
        other = DenseNet.__new__(DenseNet)
        other.layer_dims = list(self.layer_dims)
        other.head = self.head
        other.version = 0
        other.weights = [w.copy() for w in self.weights]
        other.biases = [b.copy() for b in self.biases]
        return other

    def __call__(self, x, mask=None):
        return forward(self, x, mask)[0]


@dataclass
class Tape:
    """Activations cached by :func:`forward` for a matching :func:`backward`."""

    net_id: int
    version: int
    batched: bool
    inputs: list[np.ndarray] = field(default_factory=list)  # input to each layer
    pre: list[np.ndarray] = field(default_factory=list)  # pre-activation of each layer
    output: Optional[np.ndarray] = None
    mask: Optional[np.ndarray] = None


@dataclass
class Gradients:
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def flat(self) -> np.ndarray:
        return np.concatenate([g.ravel() for pair in zip(self.weights, self.biases) for g in pair])

    def norm(self) -> float:
        return float(np.sqrt(sum(np.sum(g * g) for g in self.weights + self.biases)))

    def scaled(self, c: float) -> Gradients:
        return Gradients([c * g for g in self.weights], [c * g for g in self.biases])

    def __add__(self, other: Gradients) -> Gradients:
        return Gradients(
            [a + b for a, b in zip(self.weights, other.weights)],
            [a + b for a, b in zip(self.biases, other.biases)],
        )

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(g)) for g in self.weights + self.biases)


def masked_softmax(logits: np.ndarray, mask: Optional[np.ndarray] = None) -> np.ndarray:
    z = np.array(logits, dtype=np.float64)
    if mask is not None:
        mask = np.broadcast_to(np.asarray(mask, dtype=bool), z.shape)
        if not np.all(mask.any(axis=-1)):
            raise StructuralError("softmax mask leaves a row with no admissible entry")
        z = np.where(mask, z, -np.inf)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def forward(net: DenseNet, x, mask=None) -> tuple[np.ndarray, Tape]:
    x = np.asarray(x, dtype=np.float64)
    batched = x.ndim == 2
    if x.ndim not in (1, 2) or x.shape[-1] != net.layer_dims[0]:
        raise StructuralError(f"input shape {x.shape} does not match input dim {net.layer_dims[0]}")
    h = x if batched else x[None, :]
    tape = Tape(id(net), net.version, batched)
    last = net.n_layers - 1
    for li, (w, b) in enumerate(zip(net.weights, net.biases)):
        tape.inputs.append(h)
        z = h @ w + b
        tape.pre.append(z)
        if li < last or net.head == "none":
            h = np.maximum(z, 0.0)
        else:
            h = z
    if net.head == "softmax":
        if mask is not None:
            mask = np.asarray(mask, dtype=bool)
            mask = mask if mask.ndim == 2 else np.broadcast_to(mask, h.shape)
            tape.mask = mask
        h = masked_softmax(h, mask)
    tape.output = h
    return (h if batched else h[0]), tape


def backward(net: DenseNet, tape: Tape, upstream) -> tuple[Gradients, np.ndarray]:
    """Reverse pass.  ``upstream`` is d(objective)/d(output) with the output's shape.

    Returns parameter gradients and the gradient with respect to the input.
    """
    if tape.net_id != id(net) or tape.version != net.version:
        raise StructuralError("stale tape: the network changed since this forward pass")
    g = np.asarray(upstream, dtype=np.float64)
    g = g if tape.batched else g[None, :]
    if g.shape != tape.output.shape:
        raise StructuralError(f"upstream gradient shape {g.shape} != output shape {tape.output.shape}")
    if net.head == "softmax":
        p = tape.output
        g = p * (g - np.sum(np.where(p > 0, g * p, 0.0), axis=1, keepdims=True))
        g = np.where(p > 0, g, 0.0)
    gw: list[np.ndarray] = [None] * net.n_layers
    gb: list[np.ndarray] = [None] * net.n_layers
    last = net.n_layers - 1
    for li in range(last, -1, -1):
        z = tape.pre[li]
        if li < last or net.head == "none":
            g = g * (z > 0)
        gw[li] = tape.inputs[li].T @ g
        gb[li] = g.sum(axis=0)
        g = g @ net.weights[li].T
    return Gradients(gw, gb), (g if tape.batched else g[0])


def sgd_step(net: DenseNet, grads: Gradients, lr: float, context: str = "") -> DenseNet:
    """In-place ``param -= lr * grad``; returns the same net."""
    if lr < 0:
        raise TrainingError(f"learning rate must be non-negative, got {lr}")
    if not grads.is_finite():
        raise TrainingError(f"non-finite gradients{' (' + context + ')' if context else ''}; grad norm={grads.norm()}")
    for w, b, gw, gb in zip(net.weights, net.biases, grads.weights, grads.biases):
        if gw.shape != w.shape or gb.shape != b.shape:
            raise StructuralError(f"gradient shapes {gw.shape}/{gb.shape} do not match {w.shape}/{b.shape}")
        w -= lr * gw
        b -= lr * gb
    net.version += 1
    return net


def to_checkpoint(net: DenseNet) -> dict:
    return {
        "format": CHECKPOINT_FORMAT,
        "layer_dims": list(net.layer_dims),
        "head": net.head,
        "layers": [
            {"shape": list(w.shape), "weights": w.ravel().tolist(), "bias": b.tolist()}
            for w, b in zip(net.weights, net.biases)
        ],
    }


def from_checkpoint(data: dict) -> DenseNet:
    if data.get("format") != CHECKPOINT_FORMAT:
        raise StructuralError(f"not a {CHECKPOINT_FORMAT} checkpoint: format={data.get('format')!r}")
    net = DenseNet(data["layer_dims"], head=data["head"], init="zeros")
    if len(data["layers"]) != net.n_layers:
        raise StructuralError("checkpoint layer count does not match layer_dims")
    for li, layer in enumerate(data["layers"]):
        shape = tuple(layer["shape"])
        if shape != net.weights[li].shape:
            raise StructuralError(f"layer {li} shape {shape} != expected {net.weights[li].shape}")
        net.weights[li] = np.array(layer["weights"], dtype=np.float64).reshape(shape)
        net.biases[li] = np.array(layer["bias"], dtype=np.float64)
    return net


def save(net: DenseNet, path) -> None:
    with open(path, "w") as fh:
        json.dump(to_checkpoint(net), fh)


def load(path) -> DenseNet:
    with open(path) as fh:
        return from_checkpoint(json.load(fh))
