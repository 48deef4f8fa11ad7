"""Federated-learning environment: goods construction, delivery and measurement."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import data as datamod
from .core import DomainError, MarketError, PerfRecord, StructuralError
from .learners import Learner, MlpLearner, SyntheticLearner


def fedavg_aggregate(models: Sequence[np.ndarray], counts: Sequence[float]) -> np.ndarray:
    """Sample-count weighted mean of parameter vectors."""
    if len(models) == 0 or len(models) != len(counts):
        raise StructuralError(f"{len(models)} models with {len(counts)} counts")
    arrays = [np.asarray(m, dtype=np.float64) for m in models]
    if arrays[0].ndim != 1 or any(a.shape != arrays[0].shape for a in arrays):
        raise StructuralError(f"models must be equal-length vectors, got shapes {[a.shape for a in arrays]}")
    stack = np.stack(arrays)
    counts = np.asarray(counts, dtype=np.float64)
    if np.any(counts <= 0):
        raise StructuralError(f"sample counts must be positive, got {counts.tolist()}")
    weights = counts / counts.sum()
    return weights @ stack


def fit_repr(vec: np.ndarray, d_repr: int) -> np.ndarray:
    """Truncate or zero-pad a representation to ``d_repr`` entries."""
    out = np.zeros(d_repr)
    n = min(d_repr, len(vec))
    out[:n] = vec[:n]
    return out


@dataclass
class StepResult:
    perfs: np.ndarray  # (N,) performance after the step
    deltas: np.ndarray  # (N,) delta gain of the step
    reprs: np.ndarray  # (N, d_repr) representations after the step


class FlEnvironment:
    """A fixed population of learners plus their performance records."""

    def __init__(self, learners: Sequence[Learner], d_repr: int = 64):
        if len(learners) < 2:
            raise StructuralError("an FL market needs at least two clients")
        self.learners = list(learners)
        self.d_repr = d_repr
        self.records: list[PerfRecord] = []

    @property
    def n_clients(self) -> int:
        return len(self.learners)

    def isolated_pretrain(self, epochs: int) -> np.ndarray:
        """Train every client alone; the result is each client's baseline m0."""
        if epochs < 1:
            raise DomainError(f"isolated pretraining needs epochs >= 1, got {epochs}")
        m0 = np.zeros(self.n_clients)
        for i, learner in enumerate(self.learners):
            learner.pretrain_isolated(epochs)
            m0[i] = learner.evaluate()
            if not m0[i] > 0:
                raise DomainError(f"client {i}: isolated accuracy is 0, the gain baseline is undefined; pretrain longer")
        self.records = [PerfRecord(float(m)) for m in m0]
        return m0

    def perfs(self) -> np.ndarray:
        return np.array([r.current for r in self.records])

    def reprs(self) -> np.ndarray:
        return np.stack([fit_repr(l.last_layer_repr(), self.d_repr) for l in self.learners])

    def counts(self) -> np.ndarray:
        return np.array([l.sample_count() for l in self.learners], dtype=np.float64)

    def step(self, won: Sequence[Sequence[int]]) -> StepResult:
        """Deliver aggregated models to buyers, run local updates, measure.

        ``won[i]`` lists the sellers buyer ``i`` won this round.  Aggregation
        reads the models as they stood at the start of the round.
        """
        if not self.records:
            raise StructuralError("environment has not been pretrained")
        if len(won) != self.n_clients:
            raise StructuralError(f"expected {self.n_clients} winner sets, got {len(won)}")
        snapshot = [l.parameters() for l in self.learners]
        counts = self.counts()
        deltas = np.zeros(self.n_clients)
        for i, learner in enumerate(self.learners):
            sellers = sorted(set(won[i]))
            if i in sellers:
                raise StructuralError(f"client {i} cannot buy its own model")
            try:
                if sellers:
                    group = sellers + [i]
                    learner.set_parameters(fedavg_aggregate([snapshot[j] for j in group], counts[group]))
                learner.local_update()
                perf = learner.evaluate()
            except MarketError:
                raise
            except Exception as exc:
                raise MarketError(f"client {i}: learner failed during the environment step: {exc}") from exc
            deltas[i] = self.records[i].record(perf)
        return StepResult(self.perfs(), deltas, self.reprs())


def make_synthetic_env(n_clients: int, rng: np.random.Generator, dim: int = 8, n_clusters: int = 2,
                       cluster_spread: float = 1.0, heterogeneity: float = 0.3, init_scale: float = 0.5,
                       lr: float = 0.1, noise_scale: float = 0.0, width: float = 16.0,
                       samples: tuple[int, int] = (50, 500), d_repr: int = 64) -> FlEnvironment:
    """Clients in ``n_clusters`` groups whose private optima share a centre.

    Every client starts from the same random initial point, so buying from
    same-cluster sellers helps and cross-cluster purchases hurt.
    """
    centres = cluster_spread * rng.standard_normal((n_clusters, dim))
    membership = np.arange(n_clients) % n_clusters
    w0 = init_scale * rng.standard_normal(dim)
    learners = []
    for i in range(n_clients):
        optimum = centres[membership[i]] + heterogeneity * rng.standard_normal(dim)
        n = int(rng.integers(samples[0], samples[1] + 1))
        learners.append(SyntheticLearner(w0, optimum, n_samples=n, lr=lr, noise_scale=noise_scale, width=width,
                                         rng=np.random.default_rng(rng.integers(2**63))))
    return FlEnvironment(learners, d_repr=d_repr)


def make_mlp_env(x, y, n_clients: int, rng: np.random.Generator, alpha: float = 0.1, test_fraction: float = 0.2,
                 hidden: int = 200, lr: float = 0.05, batch_size: int = 32, local_epochs: int = 1,
                 d_repr: int = 64, partition: datamod.DirichletPartition | None = None) -> tuple[FlEnvironment, datamod.DirichletPartition]:
    """MLP clients on a Dirichlet split of (x, y); all start from one shared init."""
    if partition is None:
        partition = datamod.dirichlet_partition(y, n_clients, alpha, rng)
    n_classes = int(y.max()) + 1
    init_seed = int(rng.integers(2**63))
    learners = []
    for i, idx in enumerate(partition.client_index_sets):
        tr, te = datamod.train_test_split(idx, test_fraction, rng)
        learners.append(MlpLearner(x[tr], y[tr], x[te], y[te], n_classes, hidden=hidden, lr=lr,
                                   batch_size=batch_size, local_epochs=local_epochs,
                                   rng=np.random.default_rng([init_seed, i + 1]),
                                   init_rng=np.random.default_rng(init_seed)))
    return FlEnvironment(learners, d_repr=d_repr), partition
