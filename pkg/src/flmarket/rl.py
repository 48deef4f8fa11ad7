"""TD actor-critic allocator: market state, allocation scores, shaped reward, updates.

State layout: one block per authorized seller ``i`` (ascending id), each

    [ perf_i | repr_i (d) | perf_others (N-1) | repr_others ((N-1) * d) ]

where "others" are all clients except ``i`` in ascending id order, so a
block has ``1 + d + (N-1) + (N-1) * d`` features.  The policy net is shared
across blocks and emits N logits per block (one per buyer, the seller's own
logit masked).  The value net encodes every block with its first layer,
mean-pools, and maps the pooled code to a scalar.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Any, Optional, Sequence

import numpy as np

from . import tinynet
from .core import StructuralError, TrainingError

REFERENCE_HIDDEN = (1024, 256, 64)


def block_dim(n_clients: int, d_repr: int) -> int:
    return 1 + d_repr + (n_clients - 1) + (n_clients - 1) * d_repr


def seller_block(seller: int, perfs: np.ndarray, reprs: np.ndarray) -> np.ndarray:
    others = np.array([j for j in range(len(perfs)) if j != seller], dtype=np.int64)
    return np.concatenate([perfs[seller : seller + 1], reprs[seller], perfs[others], reprs[others].ravel()])


class RunningNorm:
    """Per-feature running z-score (Welford), clipped to +-clip."""

    def __init__(self, dim: int, clip: float = 5.0):
        self.dim = dim
        self.clip = clip
        self.count = 0
        self.mean = np.zeros(dim)
        self.m2 = np.zeros(dim)
        self.frozen = False

    def update(self, rows: np.ndarray) -> None:
        if self.frozen:
            return
        for x in np.atleast_2d(rows):
            self.count += 1
            d = x - self.mean
            self.mean += d / self.count
            self.m2 += d * (x - self.mean)

    @property
    def var(self) -> np.ndarray:
        return self.m2 / self.count if self.count else np.ones(self.dim)

    def normalize(self, rows: np.ndarray) -> np.ndarray:
        var = self.var
        std = np.where(var > 1e-12, np.sqrt(var), 1.0)
        return np.clip((rows - self.mean) / std, -self.clip, self.clip)

    def to_dict(self) -> dict:
        return {"dim": self.dim, "clip": self.clip, "count": self.count,
                "mean": self.mean.tolist(), "m2": self.m2.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> RunningNorm:
        norm = cls(d["dim"], d["clip"])
        norm.count = d["count"]
        norm.mean = np.array(d["mean"], dtype=np.float64)
        norm.m2 = np.array(d["m2"], dtype=np.float64)
        return norm


@dataclass
class MarketState:
    sellers: tuple[int, ...]
    raw: np.ndarray  # (m, block_dim)
    blocks: np.ndarray  # normalized, (m, block_dim)
    n_clients: int


def build_state(perfs, reprs, authorized: Sequence[int], norm: Optional[RunningNorm] = None, update: bool = True) -> MarketState:
    """Concatenate per-seller blocks; statistics are updated before they are applied."""
    perfs = np.asarray(perfs, dtype=np.float64)
    reprs = np.asarray(reprs, dtype=np.float64)
    n = len(perfs)
    if reprs.ndim != 2 or reprs.shape[0] != n:
        raise StructuralError(f"need one representation per client: {n} performances, reprs shape {reprs.shape}")
    for i in range(n):
        if not np.isfinite(perfs[i]) or not np.all(np.isfinite(reprs[i])):
            raise StructuralError(f"missing or non-finite market data for client {i}")
    sellers = tuple(sorted(int(s) for s in authorized))
    if not sellers or sellers[0] < 0 or sellers[-1] >= n:
        raise StructuralError(f"authorized sellers {sellers} out of range for {n} clients")
    raw = np.stack([seller_block(s, perfs, reprs) for s in sellers])
    if norm is None:
        return MarketState(sellers, raw, raw.copy(), n)
    if norm.dim != raw.shape[1]:
        raise StructuralError(f"normalizer expects {norm.dim} features, blocks have {raw.shape[1]}")
    if update:
        norm.update(raw)
    return MarketState(sellers, raw, norm.normalize(raw), n)


def allocation_scores(bids: np.ndarray, pi: np.ndarray) -> np.ndarray:
    """Hadamard product of bids and policy weights.

    ``pi[i, j]`` is seller ``j``'s probability for buyer ``i``; a column is
    either all zero (seller not active) or a distribution.
    """
    bids = np.asarray(bids, dtype=np.float64)
    pi = np.asarray(pi, dtype=np.float64)
    if bids.shape != pi.shape:
        raise StructuralError(f"bids {bids.shape} and policy {pi.shape} differ in shape")
    sums = pi.sum(axis=0)
    active = sums > 0
    if np.any(np.abs(sums[active] - 1.0) > 1e-6):
        raise TrainingError(f"policy columns are not normalized: sums {sums[active].tolist()}")
    return bids * pi


def shaped_reward(revenues, threshold: float) -> float:
    """Total revenue minus a penalty for every client earning below ``threshold``."""
    r = np.asarray(revenues, dtype=np.float64)
    return float(np.sum(r - np.maximum(0.0, threshold - r)))


def hidden_dims(input_dim: int, base=REFERENCE_HIDDEN, floor: int = 4) -> list[int]:
    """The reference widths, shrunk in proportion when the input is narrower."""
    scale = min(1.0, input_dim / base[0])
    return [max(floor, int(round(h * scale))) for h in base]


class PolicyNet:
    def __init__(self, input_dim: int, n_clients: int, hidden=None, rng=None):
        hidden = hidden_dims(input_dim) if hidden is None else list(hidden)
        self.n_clients = n_clients
        self.net = tinynet.DenseNet([input_dim, *hidden, n_clients], head="softmax", rng=rng)

    def forward(self, state: MarketState) -> tuple[np.ndarray, tinynet.Tape]:
        """Returns ``pi`` as an (N, N) [buyer, seller] matrix and the tape."""
        m = len(state.sellers)
        mask = np.ones((m, self.n_clients), dtype=bool)
        mask[np.arange(m), list(state.sellers)] = False
        probs, tape = tinynet.forward(self.net, state.blocks, mask=mask)
        pi = np.zeros((self.n_clients, self.n_clients))
        pi[:, list(state.sellers)] = probs.T
        return pi, tape

    def log_prob_grad(self, tape: tinynet.Tape, state: MarketState, winners: np.ndarray) -> tuple[tinynet.Gradients, float]:
        """Gradient of the summed log-probability of every selected winner."""
        probs = tape.output
        upstream = np.zeros_like(probs)
        logp = 0.0
        for r, seller in enumerate(state.sellers):
            for buyer in np.flatnonzero(winners[:, seller]):
                upstream[r, buyer] += 1.0 / probs[r, buyer]
                logp += float(np.log(probs[r, buyer]))
        grads, _ = tinynet.backward(self.net, tape, upstream)
        return grads, logp


@dataclass
class ValueTape:
    enc: tinynet.Tape
    head: tinynet.Tape
    m: int


class ValueNet:
    def __init__(self, input_dim: int, hidden=None, rng=None, init: str = "glorot"):
        hidden = hidden_dims(input_dim) if hidden is None else list(hidden)
        self.encoder = tinynet.DenseNet([input_dim, hidden[0]], head="none", rng=rng, init=init)
        self.head = tinynet.DenseNet([hidden[0], *hidden[1:], 1], head="linear", rng=rng, init=init)

    def forward(self, blocks: np.ndarray) -> tuple[float, ValueTape]:
        codes, enc_tape = tinynet.forward(self.encoder, np.atleast_2d(blocks))
        out, head_tape = tinynet.forward(self.head, codes.mean(axis=0))
        return float(out[0]), ValueTape(enc_tape, head_tape, codes.shape[0])

    def __call__(self, blocks) -> float:
        return self.forward(blocks)[0]

    def grad(self, tape: ValueTape) -> tuple[tinynet.Gradients, tinynet.Gradients]:
        g_head, d_pooled = tinynet.backward(self.head, tape.head, np.ones(1))
        g_enc, _ = tinynet.backward(self.encoder, tape.enc, np.tile(d_pooled / tape.m, (tape.m, 1)))
        return g_enc, g_head


@dataclass
class TdStep:
    reward: float
    v_now: float
    v_next: float
    td_target: float
    td_error: float
    value_tape: Any = field(default=None, repr=False, compare=False)


def td_step(reward: float, state_now: MarketState, state_next: MarketState, value: ValueNet) -> TdStep:
    """Bootstrapped target r + v(s') and error v(s) - target (undiscounted)."""
    v_now, tape = value.forward(state_now.blocks)
    v_next = value(state_next.blocks)
    if not (np.isfinite(v_now) and np.isfinite(v_next)):
        raise TrainingError(f"value net produced non-finite estimates v_now={v_now}, v_next={v_next}")
    target = reward + v_next
    return TdStep(reward, v_now, v_next, target, v_now - target, tape)


class RLAllocator:
    """Policy net, value net and state normalizer trained together."""

    def __init__(self, n_clients: int, d_repr: int, alpha: float = 5e-4, beta: float = 5e-4, hidden=None,
                 rng: Optional[np.random.Generator] = None):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.n_clients = n_clients
        self.d_repr = d_repr
        self.input_dim = block_dim(n_clients, d_repr)
        self.alpha = alpha
        self.beta = beta
        self.policy = PolicyNet(self.input_dim, n_clients, hidden, rng)
        self.value = ValueNet(self.input_dim, hidden, rng)
        self.norm = RunningNorm(self.input_dim)
        self.training = True

    def freeze(self) -> None:
        self.training = False
        self.norm.frozen = True

    def state(self, perfs, reprs, authorized, update: Optional[bool] = None) -> MarketState:
        return build_state(perfs, reprs, authorized, self.norm, self.training if update is None else update)

    def update(self, td: TdStep, winners: np.ndarray, state: MarketState, policy_tape: tinynet.Tape, round: int = -1) -> dict:
        if not self.training:
            raise TrainingError("allocator is frozen; parameters cannot change outside training")
        return actor_critic_update(td, winners, state, self.policy, policy_tape, self.value, self.alpha, self.beta, round)

    def to_dict(self) -> dict:
        return {
            "n_clients": self.n_clients,
            "d_repr": self.d_repr,
            "alpha": self.alpha,
            "beta": self.beta,
            "policy": tinynet.to_checkpoint(self.policy.net),
            "value_encoder": tinynet.to_checkpoint(self.value.encoder),
            "value_head": tinynet.to_checkpoint(self.value.head),
            "norm": self.norm.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> RLAllocator:
        alloc = cls(d["n_clients"], d["d_repr"], d["alpha"], d["beta"], hidden=[1, 1, 1])
        alloc.policy.net = tinynet.from_checkpoint(d["policy"])
        alloc.value.encoder = tinynet.from_checkpoint(d["value_encoder"])
        alloc.value.head = tinynet.from_checkpoint(d["value_head"])
        alloc.norm = RunningNorm.from_dict(d["norm"])
        if alloc.policy.net.layer_dims[0] != alloc.input_dim:
            raise StructuralError("checkpoint input width does not match n_clients/d_repr")
        return alloc

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def load(cls, path) -> RLAllocator:
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def actor_critic_update(td: TdStep, winners: np.ndarray, state: MarketState, policy: PolicyNet, policy_tape: tinynet.Tape,
                        value: ValueNet, alpha: float, beta: float, round: int = -1) -> dict:
    """theta -= beta * td_error * grad log pi(winners);  omega -= alpha * td_error * grad v(s)."""
    g_pol, logp = policy.log_prob_grad(policy_tape, state, np.asarray(winners, dtype=bool))
    g_enc, g_head = value.grad(td.value_tape)
    diag = {"round": round, "td_error": td.td_error, "log_pi": logp,
            "policy_grad_norm": g_pol.norm(), "value_grad_norm": float(np.hypot(g_enc.norm(), g_head.norm()))}
    if not (np.isfinite(td.td_error) and g_pol.is_finite() and g_enc.is_finite() and g_head.is_finite()):
        raise TrainingError(
            f"non-finite actor-critic update at round {round}: td_error={td.td_error}, "
            f"policy grad norm={diag['policy_grad_norm']}, value grad norm={diag['value_grad_norm']}"
        )
    if td.td_error != 0.0:
        ctx = f"round {round}, td_error {td.td_error:.6g}"
        d = td.td_error
        if beta:
            tinynet.sgd_step(policy.net, g_pol.scaled(d), beta, context=ctx)
        if alpha:
            tinynet.sgd_step(value.encoder, g_enc.scaled(d), alpha, context=ctx)
            tinynet.sgd_step(value.head, g_head.scaled(d), alpha, context=ctx)
    return diag


def random_policy(authorized: Sequence[int], n_clients: int, rng: np.random.Generator) -> np.ndarray:
    """Flat-Dirichlet weights over eligible buyers for each active seller."""
    pi = np.zeros((n_clients, n_clients))
    for j in sorted(authorized):
        buyers = [i for i in range(n_clients) if i != j]
        pi[buyers, j] = rng.dirichlet(np.ones(len(buyers)))
    return pi
