"""Broker-side auction primitives.

Seller authorization, per-seller rankings, top-k winner selection, the
generalized second price baseline and critical-bid pricing.  Matrices are
indexed ``[buyer, seller]`` throughout.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from .core import ConfigError, StructuralError


def n_authorized(n_clients: int, seller_ratio: float) -> int:
    # guard against 0.7 * 10 == 7.000000000000001
    return math.ceil(seller_ratio * n_clients - 1e-9)


def check_copy_limit(copies_k: int, n_clients: int) -> None:
    if copies_k < 1:
        raise ConfigError(f"copies_k must be >= 1, got {copies_k}")
    if copies_k >= n_clients:
        raise ConfigError(
            f"copies_k={copies_k} violates the k-copy limit k < N (N={n_clients}): "
            "with unlimited model copies no buyer bids its true valuation"
        )


def check_seller_ratio(seller_ratio: float, n_clients: int) -> None:
    if not 0 < seller_ratio < 1:
        raise ConfigError(
            f"seller_ratio={seller_ratio} violates random seller authorization (need 0 < ratio < 1, m < N): "
            "if all clients are authorized to sell, clients will not bid truthfully"
        )
    m = n_authorized(n_clients, seller_ratio)
    if not 1 <= m < n_clients:
        raise ConfigError(
            f"seller_ratio={seller_ratio} gives m={m} authorized sellers for N={n_clients}; "
            "random seller authorization needs 1 <= m < N, otherwise clients will not bid truthfully"
        )


@dataclass(frozen=True)
class MechanismParams:
    n_clients: int
    copies_k: int = 5
    seller_ratio: float = 0.7
    rng_seed: int = 0

    def __post_init__(self):
        if self.n_clients < 2:
            raise ConfigError(f"a market needs at least 2 clients, got {self.n_clients}")
        check_copy_limit(self.copies_k, self.n_clients)
        check_seller_ratio(self.seller_ratio, self.n_clients)

    @property
    def m(self) -> int:
        return n_authorized(self.n_clients, self.seller_ratio)


def authorize_sellers(params: MechanismParams, round: int) -> tuple[int, ...]:
    """Uniformly random m-subset of clients, reproducible from (seed, round)."""
    rng = np.random.default_rng([params.rng_seed, round, 0xA17])
    chosen = rng.choice(params.n_clients, size=params.m, replace=False)
    return tuple(sorted(int(c) for c in chosen))


class Bidder(NamedTuple):
    buyer: int
    score: float
    bid: float


@dataclass(frozen=True)
class SellerRanking:
    seller: int
    ordered_bidders: tuple[Bidder, ...]

    def __len__(self):
        return len(self.ordered_bidders)


def rank_bidders(seller: int, scores: Sequence[float], bids: Sequence[float]) -> SellerRanking:
    """Rank buyers for one seller by score, ties to the lower buyer id.

    The seller itself, zero scores and zero bids are dropped.
    """
    entries = [
        Bidder(i, float(s), float(b))
        for i, (s, b) in enumerate(zip(scores, bids))
        if i != seller and s > 0 and b > 0
    ]
    entries.sort(key=lambda e: (-e.score, e.buyer))
    return SellerRanking(seller, tuple(entries))


def select_winners(ranking: SellerRanking, copies_k: int) -> list[int]:
    if copies_k < 1:
        raise ConfigError(f"copies_k must be >= 1, got {copies_k}")
    return [e.buyer for e in ranking.ordered_bidders[:copies_k]]


class Price(NamedTuple):
    buyer: int
    unit_price: float
    payment: float


def critical_bid_payment(ranking: SellerRanking, copies_k: int, delta_gains) -> list[Price]:
    """Price the top-k of ``ranking`` against the next-ranked entry.

    unit price of rank i = bid[i+1] * score[i+1] / score[i]; the money paid is
    that times the winner's positive delta gain.  ``delta_gains`` maps buyer
    id to delta gain (an array indexed by id works).  Without a next-ranked
    entry the unit price is 0.
    """
    out = []
    ranked = ranking.ordered_bidders
    for pos, winner in enumerate(ranked[:copies_k]):
        if winner.score <= 0:
            raise StructuralError(f"seller {ranking.seller}: zero score for ranked buyer {winner.buyer}")
        if pos + 1 < len(ranked):
            nxt = ranked[pos + 1]
            price = nxt.bid * nxt.score / winner.score
        else:
            price = 0.0
        gain = float(delta_gains[winner.buyer])
        out.append(Price(winner.buyer, price, price * gain if gain > 0 else 0.0))
    return out


def gsp_allocate(bids_for_seller: Sequence[tuple[int, float]], copies_k: int) -> list[tuple[int, float]]:
    """Generalized second price: the rank-i winner pays the rank-(i+1) bid.

    Returns ``(buyer, unit_price)`` for each winner in rank order.  Zero bids
    abstain; ties go to the lower buyer id.
    """
    ranked = sorted(((b, float(x)) for b, x in bids_for_seller if x > 0), key=lambda e: (-e[1], e[0]))
    out = []
    for pos, (buyer, _) in enumerate(ranked[:copies_k]):
        price = ranked[pos + 1][1] if pos + 1 < len(ranked) else 0.0
        out.append((buyer, price))
    return out


class Allocation(NamedTuple):
    winners: np.ndarray  # (N, N) bool
    unit_prices: np.ndarray  # (N, N)


def allocate_by_scores(bids: np.ndarray, scores: np.ndarray, authorized: Sequence[int], copies_k: int) -> Allocation:
    """Top-k winners per authorized seller with critical-bid unit prices."""
    bids = np.asarray(bids, dtype=np.float64)
    scores = np.asarray(scores, dtype=np.float64)
    n = bids.shape[0]
    if bids.shape != (n, n) or scores.shape != (n, n):
        raise StructuralError(f"bids {bids.shape} and scores {scores.shape} must both be {n}x{n}")
    winners = np.zeros((n, n), dtype=bool)
    prices = np.zeros((n, n))
    no_gain = np.zeros(n)
    for j in sorted(authorized):
        ranking = rank_bidders(j, scores[:, j], bids[:, j])
        for p in critical_bid_payment(ranking, copies_k, no_gain):
            winners[p.buyer, j] = True
            prices[p.buyer, j] = p.unit_price
    return Allocation(winners, prices)


def allocate_gsp(bids: np.ndarray, authorized: Sequence[int], copies_k: int) -> Allocation:
    bids = np.asarray(bids, dtype=np.float64)
    n = bids.shape[0]
    if bids.shape != (n, n):
        raise StructuralError(f"bids must be square, got {bids.shape}")
    winners = np.zeros((n, n), dtype=bool)
    prices = np.zeros((n, n))
    for j in sorted(authorized):
        column = [(i, bids[i, j]) for i in range(n) if i != j]
        for buyer, price in gsp_allocate(column, copies_k):
            winners[buyer, j] = True
            prices[buyer, j] = price
    return Allocation(winners, prices)
