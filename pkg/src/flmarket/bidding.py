"""Buyer bidding strategies: Stochastic, Greedy and epsilon-Greedy.

Every emitted bid vector is non-negative, zero on the buyer itself and on
unauthorized sellers, and spends the buyer's whole utility cap.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .core import ConfigError


class Strategy(str, enum.Enum):
    STOCHASTIC = "stochastic"
    GREEDY = "greedy"
    EPS_GREEDY = "eps_greedy"


@dataclass
class BuyerProfile:
    client_id: int
    n_clients: int
    utility_cap: float
    strategy: Strategy = Strategy.STOCHASTIC
    epsilon: float = 0.1
    exploration_rounds: int = 0
    revenue_list: np.ndarray = field(default=None)
    win_counts: np.ndarray = field(default=None)

    def __post_init__(self):
        self.strategy = Strategy(self.strategy)
        if not self.utility_cap > 0:
            raise ConfigError(f"client {self.client_id}: utility cap must be positive, got {self.utility_cap}")
        if not 0 <= self.epsilon <= 1:
            raise ConfigError(f"epsilon must lie in [0, 1], got {self.epsilon}")
        if self.revenue_list is None:
            self.revenue_list = np.zeros(self.n_clients)
        if self.win_counts is None:
            self.win_counts = np.zeros(self.n_clients, dtype=np.int64)


def _eligible(profile: BuyerProfile, authorized: Sequence[int]) -> np.ndarray:
    return np.array(sorted(j for j in authorized if j != profile.client_id), dtype=np.int64)


def stochastic_bid(profile: BuyerProfile, authorized: Sequence[int], rng: np.random.Generator) -> np.ndarray:
    """|N(0,1)| draws on eligible sellers, rescaled to sum to the utility cap."""
    bids = np.zeros(profile.n_clients)
    sellers = _eligible(profile, authorized)
    if len(sellers) == 0:
        return bids
    draw = np.abs(rng.standard_normal(len(sellers)))
    total = draw.sum()
    if total == 0:  # measure-zero, but keep the budget identity
        draw, total = np.ones(len(sellers)), float(len(sellers))
    bids[sellers] = profile.utility_cap * draw / total
    return bids


def greedy_bid(profile: BuyerProfile, authorized: Sequence[int]) -> np.ndarray:
    """Softmax of mean past revenue per win, times the utility cap."""
    bids = np.zeros(profile.n_clients)
    sellers = _eligible(profile, authorized)
    if len(sellers) == 0:
        return bids
    score = profile.revenue_list[sellers] / np.maximum(profile.win_counts[sellers], 1)
    e = np.exp(score - score.max())
    bids[sellers] = profile.utility_cap * e / e.sum()
    return bids


def eps_greedy_bid(profile: BuyerProfile, authorized: Sequence[int], rng: np.random.Generator) -> tuple[np.ndarray, bool]:
    """Greedy when a uniform draw exceeds epsilon, stochastic otherwise.

    Returns the bids and whether the stochastic branch was taken.
    """
    p = rng.uniform()
    if p > profile.epsilon:
        return greedy_bid(profile, authorized), False
    return stochastic_bid(profile, authorized, rng), True


def bid(profile: BuyerProfile, authorized: Sequence[int], round: int, rng: np.random.Generator) -> np.ndarray:
    """Dispatch on strategy; every strategy explores stochastically at first."""
    if profile.strategy is Strategy.STOCHASTIC or round < profile.exploration_rounds:
        return stochastic_bid(profile, authorized, rng)
    if profile.strategy is Strategy.GREEDY:
        return greedy_bid(profile, authorized)
    return eps_greedy_bid(profile, authorized, rng)[0]


def record_outcome(profile: BuyerProfile, won_sellers: Sequence[int], delta: float) -> BuyerProfile:
    """Credit the buyer's positive delta gain to every seller it won this round."""
    won = np.asarray(sorted(won_sellers), dtype=np.int64)
    if len(won):
        profile.win_counts[won] += 1
        profile.revenue_list[won] += max(delta, 0.0)
    return profile


def sample_utility_caps(n: int, distribution: str, rng: np.random.Generator) -> np.ndarray:
    """Utility per unit of gain, one per client."""
    if distribution == "uniform01":
        caps = rng.uniform(0.0, 1.0, size=n)
    elif distribution == "absnormal01":
        caps = np.abs(rng.standard_normal(n))
    else:
        raise ConfigError(f"unknown utility distribution {distribution!r}")
    # U(0,1) is open at 0; a zero cap would mean a client never bids
    return np.maximum(caps, 1e-6)
