import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from flmarket.core import ConfigError
from flmarket.mechanism import (
    MechanismParams,
    allocate_by_scores,
    allocate_gsp,
    authorize_sellers,
    critical_bid_payment,
    gsp_allocate,
    n_authorized,
    rank_bidders,
    select_winners,
)


def test_authorize_default_ratio():
    sellers = authorize_sellers(MechanismParams(10, 5, 0.7, rng_seed=3), round=0)
    assert len(sellers) == 7 and len(set(sellers)) == 7
    assert all(0 <= s < 10 for s in sellers)


def test_authorize_forced_size():
    assert len(authorize_sellers(MechanismParams(2, 1, 0.5), 4)) == 1


def test_authorize_deterministic_per_seed_and_round():
    p = MechanismParams(10, 5, 0.7, rng_seed=11)
    assert authorize_sellers(p, 5) == authorize_sellers(p, 5)
    assert len({authorize_sellers(p, t) for t in range(20)}) > 1


def test_ratio_rounding_is_exact():
    assert n_authorized(10, 0.7) == 7
    assert n_authorized(100, 0.7) == 70
    assert n_authorized(3, 0.5) == 2


@pytest.mark.parametrize("ratio", [1.0, 1.5, 0.0, 0.95])
def test_seller_ratio_gate(ratio):
    with pytest.raises(ConfigError, match="bid truthfully"):
        MechanismParams(10, 5, ratio)


@pytest.mark.parametrize("k", [10, 11])
def test_copy_limit_gate(k):
    with pytest.raises(ConfigError, match="k < N"):
        MechanismParams(10, k, 0.7)


def test_authorize_uniformity():
    p = MechanismParams(10, 5, 0.7, rng_seed=2024)
    draws = 10_000
    counts = np.zeros(10)
    for t in range(draws):
        counts[list(authorize_sellers(p, t))] += 1
    freq = counts / draws
    q = p.m / p.n_clients
    sigma = np.sqrt(q * (1 - q) / draws)
    assert np.all(np.abs(freq - q) <= 3 * sigma)


def _ranking(seller, rows):
    """rows: (buyer, score, bid) -> SellerRanking through the public builder."""
    n = max(b for b, _, _ in rows) + 1
    n = max(n, seller + 1)
    scores, bids = np.zeros(n), np.zeros(n)
    for b, s, x in rows:
        scores[b], bids[b] = s, x
    return rank_bidders(seller, scores, bids)


def test_select_top_k():
    r = _ranking(0, [(1, 0.9, 1), (2, 0.1, 1), (3, 0.5, 1), (4, 0.7, 1), (5, 0.3, 1)])
    assert select_winners(r, 2) == [1, 4]


def test_select_short_ranking():
    assert select_winners(_ranking(0, [(3, 0.2, 1.0)]), 5) == [3]


def test_tie_break_by_lower_id():
    # exhaustive over both insertion orders
    for order in itertools.permutations([(7, 0.4, 1.0), (3, 0.4, 1.0)]):
        assert select_winners(_ranking(0, list(order)), 2) == [3, 7]


def test_ranking_excludes_self_and_zero_scores():
    r = rank_bidders(1, [0.5, 0.9, 0.0, 0.2], [1.0, 1.0, 1.0, 1.0])
    assert [e.buyer for e in r.ordered_bidders] == [0, 3]


def test_gsp_worked_example():
    bids = list(zip(range(1, 6), [35, 22, 13, 11, 1]))
    assert gsp_allocate(bids, 2) == [(1, 22.0), (2, 13.0)]


def test_gsp_single_bid_pays_zero():
    assert gsp_allocate([(4, 10.0)], 2) == [(4, 0.0)]


def test_gsp_tie_second_price():
    out = gsp_allocate([(2, 5.0), (9, 5.0), (1, 4.0)], 1)
    # brute force: every presentation order gives the same outcome
    for perm in itertools.permutations([(2, 5.0), (9, 5.0), (1, 4.0)]):
        assert gsp_allocate(list(perm), 1) == out
    assert out == [(2, 5.0)]


def test_critical_bid_payment_example():
    r = _ranking(0, [(1, 0.8, 2.0), (2, 0.6, 1.5)])
    deltas = np.array([0.0, 0.1, 0.0])
    [p] = critical_bid_payment(r, 1, deltas)
    assert p.buyer == 1
    assert p.unit_price == pytest.approx(1.5 * 0.6 / 0.8)
    assert p.payment == pytest.approx(0.1 * 1.5 * 0.6 / 0.8) == pytest.approx(0.1125)


def test_critical_bid_no_gain_no_pay():
    r = _ranking(0, [(1, 0.8, 2.0), (2, 0.6, 1.5)])
    [p] = critical_bid_payment(r, 1, np.array([0.0, -0.2, 0.0]))
    assert p.payment == 0.0


def test_critical_bid_sole_bidder():
    [p] = critical_bid_payment(_ranking(0, [(1, 0.8, 2.0)]), 1, np.array([0.0, 0.3]))
    assert p.unit_price == 0.0 and p.payment == 0.0


@st.composite
def bid_matrices(draw):
    n = draw(st.integers(3, 9))
    seed = draw(st.integers(0, 2**32 - 1))
    rng = np.random.default_rng(seed)
    bids = rng.uniform(0, 1, (n, n)) * (rng.random((n, n)) < 0.8)
    np.fill_diagonal(bids, 0)
    pi = rng.dirichlet(np.ones(n), size=n).T
    return bids, pi, draw(st.integers(1, n - 1))


@settings(max_examples=200)
@given(bid_matrices())
def test_unit_price_below_next_bid(case):
    bids, pi, k = case
    scores = bids * pi
    for j in range(len(bids)):
        r = rank_bidders(j, scores[:, j], bids[:, j])
        prices = critical_bid_payment(r, k, np.ones(len(bids)))
        for pos, p in enumerate(prices):
            nxt = r.ordered_bidders[pos + 1].bid if pos + 1 < len(r) else 0.0
            assert p.unit_price <= nxt + 1e-12


@settings(max_examples=200)
@given(bid_matrices(), st.floats(0.01, 10.0))
def test_monotone_allocation(case, raise_by):
    bids, pi, k = case
    n = len(bids)
    sellers = list(range(n))
    alloc = allocate_by_scores(bids, bids * pi, sellers, k)
    for i, j in zip(*np.nonzero(alloc.winners)):
        raised = bids.copy()
        raised[i, j] += raise_by
        again = allocate_by_scores(raised, raised * pi, sellers, k)
        assert again.winners[i, j]


def test_allocation_respects_k_and_no_self_trade():
    rng = np.random.default_rng(0)
    bids = rng.uniform(0, 1, (8, 8))
    np.fill_diagonal(bids, 0)
    alloc = allocate_gsp(bids, [0, 2, 5], 3)
    assert not np.any(np.diag(alloc.winners))
    assert alloc.winners.sum(axis=0).max() <= 3
    assert not alloc.winners[:, [1, 3, 4, 6, 7]].any()
