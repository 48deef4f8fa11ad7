"""Round loop of the auction-based FL market and experiment driver.

One round: authorize sellers, collect bids, build the market state, allocate,
deliver aggregated models, price and settle, compute the shaped reward and,
for the RL allocator in training, take one TD actor-critic step.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import bidding, data as datamod, rl
from .config import SimConfig, save_config
from .core import MarketError, RevenueAccount, RoundLedger, settle_round, write_ledger
from .flenv import FlEnvironment, make_mlp_env, make_synthetic_env
from .mechanism import MechanismParams, allocate_by_scores, allocate_gsp, authorize_sellers

SUMMARY_SCHEMA = "flmarket.summary/1"
METRICS_COLUMNS = ("round", "volume", "mean_accuracy", "reward", "td_error")
CURVE_COLUMNS = ("round", "reward", "td_error", "v_now", "v_next")

# substream tags
_ENV, _CAPS, _BIDS, _RANDOM_PI, _NETS, _DATA = 1, 2, 3, 4, 5, 6


class StageError(MarketError, RuntimeError):
    def __init__(self, round: int, stage: str, exc: Exception):
        super().__init__(f"round {round}, stage '{stage}': {exc}")
        self.round = round
        self.stage = stage


def fairness_threshold(revenues, eta: float) -> float:
    """eta times the best-paid client's revenue this round (0 in an empty round)."""
    r = np.asarray(revenues, dtype=np.float64)
    return float(eta * r.max()) if r.size else 0.0


def bottom_decile_mean(values) -> float:
    v = np.sort(np.asarray(values, dtype=np.float64))
    return float(v[: math.ceil(len(v) / 10)].mean())


@dataclass
class MetricsReport:
    n_clients: int
    volume: list = field(default_factory=list)
    mean_accuracy: list = field(default_factory=list)
    reward: list = field(default_factory=list)
    td_error: list = field(default_factory=list)
    values: list = field(default_factory=list)  # (v_now, v_next) per round, RL only
    client_revenue: list = field(default_factory=list)  # per round, (N,)
    final_accuracy: Optional[np.ndarray] = None

    @property
    def rounds(self) -> int:
        return len(self.volume)

    @property
    def cumulative_volume(self) -> float:
        return float(np.sum(self.volume))

    @property
    def per_client_revenue(self) -> np.ndarray:
        if not self.client_revenue:
            return np.zeros(self.n_clients)
        return np.sum(self.client_revenue, axis=0)

    def summary(self) -> dict:
        if self.rounds == 0:
            return {"rounds": 0}
        return {
            "rounds": self.rounds,
            "cumulative_volume": self.cumulative_volume,
            "final_mean_accuracy": float(np.mean(self.final_accuracy)),
            "bottom10_accuracy": bottom_decile_mean(self.final_accuracy),
            "bottom10_volume": bottom_decile_mean(self.per_client_revenue),
            "per_client_revenue": self.per_client_revenue.tolist(),
        }

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(METRICS_COLUMNS)
            for t in range(self.rounds):
                td = self.td_error[t]
                w.writerow([t, repr(self.volume[t]), repr(self.mean_accuracy[t]), repr(self.reward[t]),
                            "" if td is None else repr(td)])

    def write_training_curve(self, path) -> None:
        """Reward, TD error and value estimates per round (RL runs only)."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(CURVE_COLUMNS)
            for t, (v_now, v_next) in enumerate(self.values):
                w.writerow([t, repr(self.reward[t]), repr(self.td_error[t]), repr(v_now), repr(v_next)])


def build_environment(config: SimConfig, seed: int) -> FlEnvironment:
    rng = np.random.default_rng([seed, _ENV])
    if config.learner == "synthetic":
        s = config.synthetic
        env = make_synthetic_env(config.n_clients, rng, dim=s.dim, n_clusters=s.n_clusters,
                                 cluster_spread=s.cluster_spread, heterogeneity=s.heterogeneity,
                                 init_scale=s.init_scale, lr=s.lr, noise_scale=s.noise_scale, width=s.width,
                                 samples=(s.min_samples, s.max_samples), d_repr=config.d_repr)
        env.isolated_pretrain(s.pretrain_epochs)
        return env
    m = config.mlp
    x, y = load_dataset(config)
    x, y = datamod.subsample(x, y, m.max_samples, np.random.default_rng([seed, _DATA]))
    env, _ = make_mlp_env(x, y, config.n_clients, rng, alpha=m.dirichlet_alpha, test_fraction=m.test_fraction,
                          hidden=m.hidden, lr=m.lr, batch_size=m.batch_size, local_epochs=m.local_epochs,
                          d_repr=config.d_repr)
    env.isolated_pretrain(m.pretrain_epochs)
    return env


def load_dataset(config: SimConfig):
    m = config.mlp
    if m.dataset == "digits":
        return datamod.load_digits_dataset()
    if m.dataset == "idx":
        return datamod.load_idx_dataset(m.images_path, m.labels_path)
    return datamod.load_csv_dataset(m.csv_path)


def make_allocator(config: SimConfig) -> Optional[rl.RLAllocator]:
    if config.allocator != "rl":
        return None
    return rl.RLAllocator(config.n_clients, config.d_repr, alpha=config.alpha, beta=config.beta,
                          hidden=config.hidden, rng=np.random.default_rng([config.train_seed, _NETS]))


class Market:
    """One market environment (train, eval or test) driven by a fixed seed."""

    def __init__(self, config: SimConfig, seed: int, rounds: int, allocator: Optional[rl.RLAllocator] = None,
                 train: bool = False, env: Optional[FlEnvironment] = None):
        self.config = config
        self.seed = seed
        self.rounds = rounds
        self.allocator = allocator
        self.train = train and allocator is not None
        n = config.n_clients
        self.mechanism = MechanismParams(n, config.copies_k, config.seller_ratio, rng_seed=seed)
        self.env = env if env is not None else build_environment(config, seed)
        caps = bidding.sample_utility_caps(n, config.utility_distribution, np.random.default_rng([seed, _CAPS]))
        explore = math.ceil(config.exploration_fraction * rounds)
        self.profiles = [
            bidding.BuyerProfile(i, n, float(caps[i]), config.strategy, config.epsilon, explore) for i in range(n)
        ]
        self.revenue = RevenueAccount(n)
        self.report = MetricsReport(n)
        self.ledgers: list[RoundLedger] = []
        self.diagnostics: list[dict] = []

    def collect_bids(self, t: int, sellers) -> np.ndarray:
        n = self.config.n_clients
        bids = np.zeros((n, n))
        for i, profile in enumerate(self.profiles):
            bids[i] = bidding.bid(profile, sellers, t, np.random.default_rng([self.seed, _BIDS, t, i]))
        return bids

    def run_round(self, t: int) -> tuple[RoundLedger, Optional[rl.TdStep]]:
        cfg = self.config
        stage = "authorize"
        try:
            sellers = authorize_sellers(self.mechanism, t)
            stage = "announce"
            perfs, reprs = self.env.perfs(), self.env.reprs()
            stage = "bid"
            bids = self.collect_bids(t, sellers)
            stage = "state"
            state = tape = None
            if self.allocator is not None:
                state = self.allocator.state(perfs, reprs, sellers, update=self.train)
            stage = "allocate"
            if cfg.allocator == "gsp":
                scores = bids.copy()
                alloc = allocate_gsp(bids, sellers, cfg.copies_k)
            else:
                if cfg.allocator == "rl":
                    pi, tape = self.allocator.policy.forward(state)
                else:
                    pi = rl.random_policy(sellers, cfg.n_clients, np.random.default_rng([self.seed, _RANDOM_PI, t]))
                scores = rl.allocation_scores(bids, pi)
                alloc = allocate_by_scores(bids, scores, sellers, cfg.copies_k)
            stage = "deliver"
            won = [list(np.flatnonzero(alloc.winners[i])) for i in range(cfg.n_clients)]
            step = self.env.step(won)
            stage = "settle"
            settlement = settle_round(alloc.winners, alloc.unit_prices, step.deltas)
            stage = "reward"
            reward = rl.shaped_reward(settlement.revenues, fairness_threshold(settlement.revenues, cfg.eta))
            td = None
            if self.allocator is not None:
                stage = "td"
                state_next = self.allocator.state(step.perfs, step.reprs, sellers, update=False)
                td = rl.td_step(reward, state, state_next, self.allocator.value)
                if self.train:
                    stage = "update"
                    self.diagnostics.append(self.allocator.update(td, alloc.winners, state, tape, round=t))
            stage = "record"
            for i, profile in enumerate(self.profiles):
                bidding.record_outcome(profile, won[i], step.deltas[i])
            ledger = RoundLedger(t, bids, scores, alloc.winners, alloc.unit_prices, settlement.transfers,
                                 step.deltas, settlement.revenues, tuple(sellers))
        except StageError:
            raise
        except Exception as exc:
            raise StageError(t, stage, exc) from exc
        self.revenue.add(settlement.revenues)
        self.ledgers.append(ledger)
        r = self.report
        r.volume.append(float(settlement.transfers.sum()))
        r.mean_accuracy.append(float(step.perfs.mean()))
        r.reward.append(reward)
        r.td_error.append(None if td is None else td.td_error)
        if td is not None:
            r.values.append((td.v_now, td.v_next))
        r.client_revenue.append(settlement.revenues.copy())
        r.final_accuracy = step.perfs.copy()
        return ledger, td

    def run(self) -> MetricsReport:
        for t in range(self.rounds):
            self.run_round(t)
        return self.report


@dataclass
class ExperimentResult:
    config: SimConfig
    train: MetricsReport
    test: MetricsReport
    eval: Optional[MetricsReport] = None
    train_ledgers: list = field(default_factory=list)
    test_ledgers: list = field(default_factory=list)
    allocator: Optional[rl.RLAllocator] = None

    def summary(self) -> dict:
        out = {
            "schema": SUMMARY_SCHEMA,
            "allocator": self.config.allocator,
            "strategy": self.config.strategy,
            "seeds": list(self.config.seeds),
            "test": self.test.summary(),
            "train": self.train.summary(),
        }
        if self.eval is not None:
            out["eval"] = self.eval.summary()
        return out


def run_experiment(config: SimConfig, allocator: Optional[rl.RLAllocator] = None) -> ExperimentResult:
    """Train under the train seed, freeze, then replay a fresh market under the test seed."""
    config.validate()
    if allocator is None:
        allocator = make_allocator(config)
    train_report = MetricsReport(config.n_clients)
    train_ledgers = []
    if allocator is not None and config.training_rounds > 0:
        market = Market(config, config.train_seed, config.training_rounds, allocator, train=True)
        train_report = market.run()
        train_ledgers = market.ledgers
    if allocator is not None:
        allocator.freeze()
    eval_report = None
    if config.eval_rounds > 0:
        eval_report = Market(config, config.eval_seed, config.eval_rounds, allocator).run()
    test_market = Market(config, config.test_seed, config.total_rounds, allocator)
    test_report = test_market.run()
    return ExperimentResult(config, train_report, test_report, eval_report, train_ledgers, test_market.ledgers, allocator)


def write_outputs(result: ExperimentResult, out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_config(result.config, out / "config.json")
    with open(out / "summary.json", "w") as fh:
        json.dump(result.summary(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    result.test.write_csv(out / "metrics_test.csv")
    write_ledger(out / "ledger_test.jsonl", result.test_ledgers)
    if result.train.rounds:
        result.train.write_csv(out / "metrics_train.csv")
        write_ledger(out / "ledger_train.jsonl", result.train_ledgers)
        if result.train.values:
            result.train.write_training_curve(out / "training_curve.csv")
    if result.eval is not None:
        result.eval.write_csv(out / "metrics_eval.csv")
    if result.allocator is not None:
        result.allocator.save(out / "checkpoint.json")
    return out
