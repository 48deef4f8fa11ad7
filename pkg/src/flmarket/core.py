"""Shared domain model: performance records, round ledgers and revenue accounting."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

LEDGER_FIELDS = ("round", "bids", "scores", "winners", "unit_prices", "transfers", "deltas", "revenues")


class MarketError(Exception):
    """Base class for every error raised by the simulator."""


class ConfigError(MarketError, ValueError):
    pass


class StructuralError(MarketError, ValueError):
    """Shapes, indices or layouts that do not line up."""


class DomainError(MarketError, ValueError):
    pass


class TrainingError(MarketError, RuntimeError):
    pass


def performance_gain(m0: float, mt: float) -> float:
    """Relative improvement of ``mt`` over the isolated-training baseline ``m0``."""
    if m0 == 0:
        raise DomainError("zero baseline performance: gain is undefined when m0 == 0")
    if m0 < 0 or mt < 0:
        raise DomainError(f"performance must be non-negative, got m0={m0}, mt={mt}")
    return (mt - m0) / m0


def delta_gain(g_prev: float, g_now: float) -> float:
    return g_now - g_prev


@dataclass
class PerfRecord:
    """Performance history of one client.

    ``history[0]`` is the baseline ``m0`` and ``gains[0] == deltas[0] == 0``.
    """

    m0: float
    history: list[float] = field(default_factory=list)
    gains: list[float] = field(default_factory=list)
    deltas: list[float] = field(default_factory=list)

    def __post_init__(self):
        if not self.m0 > 0:
            raise DomainError(f"zero baseline performance (m0={self.m0}); pretrain longer")
        if not self.history:
            self.history = [self.m0]
            self.gains = [0.0]
            self.deltas = [0.0]

    def record(self, mt: float) -> float:
        """Append a new measurement and return its delta gain."""
        g = performance_gain(self.m0, mt)
        d = delta_gain(self.gains[-1], g)
        self.history.append(mt)
        self.gains.append(g)
        self.deltas.append(d)
        return d

    @property
    def current(self) -> float:
        return self.history[-1]

    @property
    def last_delta(self) -> float:
        return self.deltas[-1]


class Settlement(NamedTuple):
    transfers: np.ndarray  # (N, N) money moved from buyer row to seller column
    revenues: np.ndarray  # (N,) per-seller income
    outlays: np.ndarray  # (N,) per-buyer spend


def settle_round(winners: np.ndarray, unit_prices: np.ndarray, deltas: np.ndarray) -> Settlement:
    """Turn unit prices into money: buyer ``i`` pays ``price * dG_i`` per won seller.

    Buyers whose delta gain is not positive pay nothing (no gain, no pay).
    """
    winners = np.asarray(winners, dtype=bool)
    unit_prices = np.asarray(unit_prices, dtype=np.float64)
    deltas = np.asarray(deltas, dtype=np.float64)
    if winners.ndim != 2 or winners.shape[0] != winners.shape[1]:
        raise StructuralError(f"winners must be square, got shape {winners.shape}")
    if unit_prices.shape != winners.shape:
        raise StructuralError(f"unit_prices shape {unit_prices.shape} != winners shape {winners.shape}")
    if deltas.shape != (winners.shape[0],):
        raise StructuralError(f"deltas shape {deltas.shape} does not match {winners.shape[0]} buyers")
    gain = np.where(deltas > 0, deltas, 0.0)
    transfers = np.where(winners, unit_prices * gain[:, None], 0.0)
    return Settlement(transfers, transfers.sum(axis=0), transfers.sum(axis=1))


@dataclass(frozen=True)
class RoundLedger:
    """Everything the broker decided and settled in one round.

    Matrices are indexed ``[buyer, seller]``.
    """

    round: int
    bids: np.ndarray
    scores: np.ndarray
    winners: np.ndarray
    unit_prices: np.ndarray
    transfers: np.ndarray
    deltas: np.ndarray
    revenues: np.ndarray
    authorized_sellers: tuple[int, ...] = ()

    def __post_init__(self):
        n = self.bids.shape[0]
        for name in ("bids", "scores", "winners", "unit_prices", "transfers"):
            if getattr(self, name).shape != (n, n):
                raise StructuralError(f"ledger field {name} must be {n}x{n}, got {getattr(self, name).shape}")
        if np.any(np.diag(self.winners)):
            raise StructuralError(f"round {self.round}: a client won its own model")
        for arr in (self.bids, self.scores, self.winners, self.unit_prices, self.transfers, self.deltas, self.revenues):
            arr.setflags(write=False)

    @property
    def n_clients(self) -> int:
        return self.bids.shape[0]

    @property
    def volume(self) -> float:
        return float(self.transfers.sum())

    def to_record(self) -> dict:
        return {
            "round": int(self.round),
            "bids": self.bids.tolist(),
            "scores": self.scores.tolist(),
            "winners": self.winners.astype(bool).tolist(),
            "unit_prices": self.unit_prices.tolist(),
            "transfers": self.transfers.tolist(),
            "deltas": self.deltas.tolist(),
            "revenues": self.revenues.tolist(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_record(), separators=(",", ":"))

    @classmethod
    def from_record(cls, rec: dict) -> RoundLedger:
        if tuple(rec) != LEDGER_FIELDS:
            raise StructuralError(f"ledger record fields {tuple(rec)} != {LEDGER_FIELDS}")
        winners = np.array(rec["winners"], dtype=bool)
        return cls(
            round=rec["round"],
            bids=np.array(rec["bids"], dtype=np.float64),
            scores=np.array(rec["scores"], dtype=np.float64),
            winners=winners,
            unit_prices=np.array(rec["unit_prices"], dtype=np.float64),
            transfers=np.array(rec["transfers"], dtype=np.float64),
            deltas=np.array(rec["deltas"], dtype=np.float64),
            revenues=np.array(rec["revenues"], dtype=np.float64),
        )


def write_ledger(path, ledgers) -> None:
    with open(path, "w") as fh:
        for row in ledgers:
            fh.write(row.to_json())
            fh.write("\n")


def read_ledger(path) -> list[RoundLedger]:
    with open(path) as fh:
        return [RoundLedger.from_record(json.loads(line)) for line in fh if line.strip()]


class RevenueAccount:
    """Per-client seller income over the rounds of one run."""

    def __init__(self, n_clients: int):
        self.n_clients = n_clients
        self.per_round: list[np.ndarray] = []

    def add(self, revenues: np.ndarray) -> None:
        revenues = np.asarray(revenues, dtype=np.float64)
        if revenues.shape != (self.n_clients,):
            raise StructuralError(f"expected {self.n_clients} revenues, got shape {revenues.shape}")
        if np.any(revenues < 0):
            raise DomainError("seller revenue cannot be negative")
        self.per_round.append(revenues.copy())

    @property
    def cumulative(self) -> np.ndarray:
        if not self.per_round:
            return np.zeros(self.n_clients)
        return np.sum(self.per_round, axis=0)

    @property
    def total(self) -> float:
        return float(self.cumulative.sum())
