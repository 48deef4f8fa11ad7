"""Local learners plugged into the FL environment."""

from __future__ import annotations

from typing import Protocol

import numpy as np

from . import tinynet
from .core import StructuralError


class Learner(Protocol):
    def pretrain_isolated(self, epochs: int) -> None: ...
    def local_update(self) -> None: ...
    def evaluate(self) -> float: ...
    def parameters(self) -> np.ndarray: ...
    def set_parameters(self, vec: np.ndarray) -> None: ...
    def last_layer_repr(self) -> np.ndarray: ...
    def sample_count(self) -> int: ...


class SyntheticLearner:
    """Quadratic toy client with an analytic accuracy surrogate.

    One local step moves ``w`` a fraction ``lr`` of the way to the private
    optimum ``o`` (plus optional Gaussian noise); accuracy is
    ``exp(-||w - o||^2 / width)``.
    """

    def __init__(self, w0, optimum, n_samples: int = 100, lr: float = 0.1, noise_scale: float = 0.0, width: float = 1.0, rng=None):
        self.w = np.array(w0, dtype=np.float64)
        self.o = np.array(optimum, dtype=np.float64)
        if self.w.shape != self.o.shape or self.w.ndim != 1:
            raise StructuralError(f"w {self.w.shape} and optimum {self.o.shape} must be equal-length vectors")
        self.n_samples = int(n_samples)
        self.lr = lr
        self.noise_scale = noise_scale
        self.width = width
        self.rng = rng if rng is not None else np.random.default_rng(0)

    def pretrain_isolated(self, epochs: int) -> None:
        for _ in range(epochs):
            self.local_update()

    def local_update(self) -> None:
        self.w = self.w - self.lr * (self.w - self.o)
        if self.noise_scale > 0:
            self.w = self.w + self.noise_scale * self.rng.standard_normal(self.w.shape)

    def distance2(self) -> float:
        return float(np.sum((self.w - self.o) ** 2))

    def evaluate(self) -> float:
        return float(np.exp(-self.distance2() / self.width))

    def parameters(self) -> np.ndarray:
        return self.w.copy()

    def set_parameters(self, vec) -> None:
        vec = np.asarray(vec, dtype=np.float64)
        if vec.shape != self.w.shape:
            raise StructuralError(f"expected {self.w.shape} parameters, got {vec.shape}")
        self.w = vec.copy()

    def last_layer_repr(self) -> np.ndarray:
        return self.w.copy()

    def sample_count(self) -> int:
        return self.n_samples


class MlpLearner:
    """Two-layer ReLU classifier trained with minibatch SGD on local data."""

    def __init__(self, x_train, y_train, x_test, y_test, n_classes: int, hidden: int = 200, lr: float = 0.05,
                 batch_size: int = 32, local_epochs: int = 1, rng=None, init_rng=None):
        self.x_train = np.asarray(x_train, dtype=np.float64)
        self.y_train = np.asarray(y_train, dtype=np.int64)
        self.x_test = np.asarray(x_test, dtype=np.float64)
        self.y_test = np.asarray(y_test, dtype=np.int64)
        if len(self.y_train) == 0:
            raise StructuralError("MLP learner needs at least one training sample")
        self.n_classes = n_classes
        self.lr = lr
        self.batch_size = batch_size
        self.local_epochs = local_epochs
        self.rng = rng if rng is not None else np.random.default_rng(0)
        self.net = tinynet.DenseNet([self.x_train.shape[1], hidden, n_classes], head="linear",
                                    rng=init_rng if init_rng is not None else self.rng)

    def _epoch(self) -> None:
        order = self.rng.permutation(len(self.y_train))
        for start in range(0, len(order), self.batch_size):
            batch = order[start : start + self.batch_size]
            logits, tape = tinynet.forward(self.net, self.x_train[batch])
            p = tinynet.masked_softmax(logits)
            p[np.arange(len(batch)), self.y_train[batch]] -= 1.0
            grads, _ = tinynet.backward(self.net, tape, p / len(batch))
            tinynet.sgd_step(self.net, grads, self.lr, context="local MLP update")

    def pretrain_isolated(self, epochs: int) -> None:
        for _ in range(epochs):
            self._epoch()

    def local_update(self) -> None:
        for _ in range(self.local_epochs):
            self._epoch()

    def predict(self, x) -> np.ndarray:
        return np.argmax(self.net(x), axis=-1)

    def evaluate(self) -> float:
        # tiny partitions may have no held-out samples
        x, y = (self.x_test, self.y_test) if len(self.y_test) else (self.x_train, self.y_train)
        return float(np.mean(self.predict(x) == y))

    def parameters(self) -> np.ndarray:
        return self.net.flat()

    def set_parameters(self, vec) -> None:
        self.net.set_flat(vec)

    def last_layer_repr(self) -> np.ndarray:
        return np.concatenate([self.net.weights[-1].ravel(), self.net.biases[-1]])

    def sample_count(self) -> int:
        return len(self.y_train)
