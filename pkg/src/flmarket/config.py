"""Experiment configuration: dataclasses, strict JSON loading and validation."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from typing import Optional

from .bidding import Strategy
from .core import ConfigError
from .mechanism import check_copy_limit, check_seller_ratio

ALLOCATORS = ("rl", "gsp", "random")
LEARNERS = ("synthetic", "mlp")
UTILITY_DISTRIBUTIONS = ("uniform01", "absnormal01")
DATASETS = ("digits", "idx", "csv")
# short names accepted on the command line and in sweep grids
ALIASES = {"k": "copies_k", "ratio": "seller_ratio", "utility": "utility_distribution"}


@dataclass
class SyntheticConfig:
    dim: int = 8
    n_clusters: int = 2
    cluster_spread: float = 1.0
    heterogeneity: float = 0.3
    init_scale: float = 0.5
    lr: float = 0.1
    noise_scale: float = 0.0
    width: float = 16.0
    min_samples: int = 50
    max_samples: int = 500
    pretrain_epochs: int = 2


@dataclass
class MlpConfig:
    dataset: str = "digits"
    images_path: Optional[str] = None
    labels_path: Optional[str] = None
    csv_path: Optional[str] = None
    max_samples: int = 2000
    dirichlet_alpha: float = 0.1
    test_fraction: float = 0.2
    hidden: int = 200
    lr: float = 0.05
    batch_size: int = 32
    local_epochs: int = 1
    pretrain_epochs: int = 5


@dataclass
class SimConfig:
    n_clients: int = 10
    total_rounds: int = 100
    training_rounds: int = 200
    eval_rounds: int = 0
    copies_k: int = 5
    seller_ratio: float = 0.7
    eta: float = 0.005
    utility_distribution: str = "uniform01"
    strategy: str = "stochastic"
    allocator: str = "rl"
    learner: str = "synthetic"
    alpha: float = 5e-4
    beta: float = 5e-4
    exploration_fraction: float = 0.2
    epsilon: float = 0.1
    seeds: tuple = (1, 2, 3)  # train, eval, test
    d_repr: int = 64
    hidden: Optional[list] = None
    synthetic: SyntheticConfig = field(default_factory=SyntheticConfig)
    mlp: MlpConfig = field(default_factory=MlpConfig)

    def __post_init__(self):
        self.seeds = tuple(int(s) for s in self.seeds)

    @property
    def train_seed(self) -> int:
        return self.seeds[0]

    @property
    def eval_seed(self) -> int:
        return self.seeds[1]

    @property
    def test_seed(self) -> int:
        return self.seeds[2]

    def validate(self) -> SimConfig:
        if self.n_clients < 2:
            raise ConfigError(f"n_clients must be >= 2, got {self.n_clients}")
        check_copy_limit(self.copies_k, self.n_clients)
        check_seller_ratio(self.seller_ratio, self.n_clients)
        if self.total_rounds < 1:
            raise ConfigError(f"total_rounds must be >= 1, got {self.total_rounds}")
        if self.training_rounds < 0 or self.eval_rounds < 0:
            raise ConfigError("training_rounds and eval_rounds must be non-negative")
        _choice("allocator", self.allocator, ALLOCATORS)
        _choice("learner", self.learner, LEARNERS)
        _choice("utility_distribution", self.utility_distribution, UTILITY_DISTRIBUTIONS)
        _choice("strategy", self.strategy, tuple(s.value for s in Strategy))
        _choice("mlp.dataset", self.mlp.dataset, DATASETS)
        if len(self.seeds) != 3 or len(set(self.seeds)) != 3:
            raise ConfigError(f"seeds must be three distinct integers (train, eval, test), got {list(self.seeds)}")
        if not 0 <= self.epsilon <= 1:
            raise ConfigError(f"epsilon must lie in [0, 1], got {self.epsilon}")
        if not 0 <= self.exploration_fraction <= 1:
            raise ConfigError(f"exploration_fraction must lie in [0, 1], got {self.exploration_fraction}")
        if self.eta < 0 or self.alpha < 0 or self.beta < 0:
            raise ConfigError("eta, alpha and beta must be non-negative")
        if self.d_repr < 1:
            raise ConfigError(f"d_repr must be >= 1, got {self.d_repr}")
        if self.hidden is not None and (len(self.hidden) < 1 or min(self.hidden) < 1):
            raise ConfigError(f"hidden must list positive layer widths, got {self.hidden}")
        if self.synthetic.pretrain_epochs < 1 or self.mlp.pretrain_epochs < 1:
            raise ConfigError("pretrain_epochs must be >= 1")
        if self.learner == "mlp" and self.mlp.dataset == "idx" and not (self.mlp.images_path and self.mlp.labels_path):
            raise ConfigError("mlp.dataset 'idx' needs mlp.images_path and mlp.labels_path")
        if self.learner == "mlp" and self.mlp.dataset == "csv" and not self.mlp.csv_path:
            raise ConfigError("mlp.dataset 'csv' needs mlp.csv_path")
        return self

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["seeds"] = list(self.seeds)
        return d

    @classmethod
    def from_dict(cls, data: dict) -> SimConfig:
        data = dict(data)
        _reject_unknown(cls, data, "")
        sub = {}
        for key, kind in (("synthetic", SyntheticConfig), ("mlp", MlpConfig)):
            part = data.pop(key, {}) or {}
            if not isinstance(part, dict):
                raise ConfigError(f"{key} must be an object")
            _reject_unknown(kind, part, key + ".")
            sub[key] = kind(**part)
        return cls(**data, **sub).validate()

    def replace(self, **changes) -> SimConfig:
        d = self.to_dict()
        for key, value in changes.items():
            key = ALIASES.get(key, key)
            if "." in key:
                group, name = key.split(".", 1)
                d.setdefault(group, {})[name] = value
            else:
                d[key] = value
        return SimConfig.from_dict(d)


def _choice(name, value, allowed):
    if value not in allowed:
        raise ConfigError(f"{name}={value!r} is not one of {list(allowed)}")


def _reject_unknown(kind, data: dict, prefix: str) -> None:
    known = {f.name for f in dataclasses.fields(kind)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(prefix + k for k in unknown)}")


def load_config(path) -> SimConfig:
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        data = json.loads(text) if text.strip() else {}
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path} is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a JSON object")
    try:
        return SimConfig.from_dict(data)
    except TypeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def save_config(config: SimConfig, path) -> None:
    with open(path, "w") as fh:
        json.dump(config.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
