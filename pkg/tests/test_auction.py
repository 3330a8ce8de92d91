import math
import random
from decimal import Decimal

import numpy as np
import pytest

from src.auction import (AuctionOutcome, Bid, BidSet, derive_seed, expected_revenue, log_weight, optimal_price,
                         price_cdf, price_density, revenue_at_price, revenue_bound, run_auction, run_auctions,
                         sample_price, sample_prices, winner_count)

CDF_TOL = 0.01
SAMPLES = 100_000
EPSILONS = [0.5, 1.0, 2.0, 5.0]
INSTANCES = 200


def bids(*prices, user="u1"):
    return BidSet(user, tuple(Bid(f"agg{i}.net", Decimal(str(p))) for i, p in enumerate(prices)))


def _random_bid_set(rng: random.Random, user="u") -> BidSet:
    n = rng.randint(1, 8)
    return bids(*(Decimal(rng.randint(1, 5000)) / 1000 for _ in range(n)), user=user)


def _uniform_bid_set(rng: random.Random, m: int, user="u") -> BidSet:
    """m bids drawn uniformly from (0, 10], on a micro-unit grid."""
    return bids(*(Decimal(rng.randint(1, 10_000_000)) / 1_000_000 for _ in range(m)), user=user)


# ----------------------------
# Revenue function
# ----------------------------
def test_revenue_at_price_examples():
    b = bids(3, 1)
    assert revenue_at_price(b, Decimal(1)) == 2
    assert revenue_at_price(b, Decimal(3)) == 3
    assert revenue_at_price(b, Decimal(4)) == 0
    assert revenue_at_price(BidSet("u"), Decimal(2)) == 0
    with pytest.raises(ValueError):
        revenue_at_price(b, Decimal(-1))


def test_winner_count_at_float_price_matches_decimal_bid():
    assert winner_count(bids("0.1"), 0.1) == 1
    assert winner_count(bids(3, 1), Decimal("0.8")) == 2
    assert revenue_at_price(bids(3, 1), Decimal("0.8")) == Decimal("1.6")
    assert revenue_at_price(bids(3, 1), Decimal(2)) == 2


@pytest.mark.parametrize("prices,price,opt", [
    ((2, 2, 1), 2, 4),
    ((3, 1), 3, 3),
    ((1, 1, 1), 1, 3),
    ((1, 2), 1, 2),  # tie goes to the lower price
])
def test_optimal_price(prices, price, opt):
    assert optimal_price(bids(*prices)) == (Decimal(price), Decimal(opt))


def test_optimal_price_empty():
    assert optimal_price(BidSet("u")) == (0, 0)


def test_duplicate_bidder_rejected():
    with pytest.raises(ValueError):
        BidSet("u", (Bid("b.com", Decimal(1)), Bid("b.com", Decimal(2))))
    with pytest.raises(ValueError):
        Bid("b.com", Decimal(-1))


def test_zero_bid_abstains():
    b = BidSet("u", (Bid("b.com", Decimal(1)), Bid("c.com", Decimal(0))))
    assert [x.aggregator for x in b.active()] == ["b.com"]
    assert b.replace("c.com", Decimal(2)).prices() == [Decimal(1), Decimal(2)]


# ----------------------------
# Density
# ----------------------------
def test_density_segments():
    d = price_density(bids(1, 3), 0.5)
    assert [(s.lo, s.hi, s.winners) for s in d.segments] == [(0.0, 1.0, 2), (1.0, 3.0, 1)]
    assert [s.slope for s in d.segments] == [1.0, 0.5]
    assert d.probs.sum() == pytest.approx(1.0)


def test_single_bid_one_segment():
    d = price_density(bids(2), 1.0)
    assert len(d.segments) == 1
    assert d.max_price == 2.0


def test_density_requires_positive_bid():
    with pytest.raises(ValueError):
        price_density(BidSet("u", (Bid("b.com", Decimal(0)),)), 1.0)
    with pytest.raises(ValueError):
        price_density(bids(1), 0.0)


def test_cdf_matches_numeric_integration():
    d = price_density(bids("0.5", "1.5", "1.5", "4"), 1.3)
    grid = np.linspace(1e-9, d.max_price, 400_001)
    weights = np.exp([log_weight(d, p) for p in grid])
    cum = np.concatenate([[0.0], np.cumsum((weights[1:] + weights[:-1]) / 2 * np.diff(grid))])
    cum /= cum[-1]
    for p in (0.25, 0.5, 0.75, 1.5, 2.0, 3.9):
        i = int(np.searchsorted(grid, p))
        assert price_cdf(d, float(grid[i])) == pytest.approx(cum[i], abs=1e-4)
    assert price_cdf(d, 0) == 0.0
    assert price_cdf(d, d.max_price) == 1.0


def test_log_weight_outside_support():
    d = price_density(bids(1), 1.0)
    assert log_weight(d, 0) == -math.inf
    assert log_weight(d, 1.5) == -math.inf
    assert log_weight(d, 0.5) == pytest.approx(0.5)


def test_large_epsilon_does_not_overflow():
    d = price_density(bids(1000, 2000), 50.0)
    assert np.isfinite(d.log_norm)
    assert d.probs.sum() == pytest.approx(1.0)


# ----------------------------
# Sampling
# ----------------------------
def _sup_cdf_gap(d, seed) -> float:
    samples = np.sort(sample_prices(d, SAMPLES, seed=seed))
    assert samples.min() > 0 and samples.max() <= d.max_price
    grid = np.linspace(0, d.max_price, 1001)[1:]
    empirical = np.searchsorted(samples, grid, side="right") / SAMPLES
    analytic = np.array([price_cdf(d, p) for p in grid])
    return float(np.max(np.abs(empirical - analytic)))


@pytest.mark.parametrize("k", range(10))
def test_sampler_fidelity_random_bid_sets(k):
    rng = random.Random(4242 + k)
    d = price_density(_uniform_bid_set(rng, rng.randint(1, 5)), rng.choice(EPSILONS))
    assert _sup_cdf_gap(d, seed=11 + k) <= CDF_TOL


@pytest.mark.parametrize("prices,epsilon", [((1,), 1.0), ((1, 3), 0.7), (("0.2", "0.9", "0.9", "2.5"), 3.0)])
def test_sampler_fidelity(prices, epsilon):
    d = price_density(bids(*prices), epsilon)
    assert _sup_cdf_gap(d, seed=11) <= CDF_TOL


def test_sample_price_deterministic():
    d = price_density(bids(3, 1), 1.0)
    assert sample_price(d, 42) == sample_price(d, 42)
    p = sample_price(d, 42)
    assert p == p.quantize(Decimal("0.000001"))
    assert Decimal(0) < p <= Decimal(3)


def test_small_epsilon_is_near_uniform():
    d = price_density(bids(1), 1e-6)
    assert sample_prices(d, SAMPLES, seed=3).mean() == pytest.approx(0.5, abs=0.01)
    assert expected_revenue(bids(1), 1e-6) == pytest.approx(0.5, abs=1e-6)


def test_large_epsilon_concentrates_at_top_bid():
    r10, r100 = expected_revenue(bids(1), 10.0), expected_revenue(bids(1), 100.0)
    assert r10 == pytest.approx(0.9, abs=1e-3)
    assert r10 < r100 < 1.0
    d = price_density(bids(1), 100.0)
    assert sample_prices(d, 10_000, seed=5).mean() == pytest.approx(0.99, abs=0.005)


def test_expected_revenue_matches_monte_carlo():
    b = bids("0.5", "1.5", "1.5", "4")
    d = price_density(b, 1.3)
    ps = sample_prices(d, SAMPLES, seed=17)
    tops = np.array([float(x) for x in b.prices()])
    mc = float(np.mean(ps * (tops[None, :] >= ps[:, None]).sum(axis=1)))
    assert expected_revenue(b, 1.3) == pytest.approx(mc, rel=0.01)


# ----------------------------
# Guarantees
# ----------------------------
@pytest.mark.parametrize("m", [1, 2, 3, 4, 5])
@pytest.mark.parametrize("eps", EPSILONS)
def test_expected_revenue_below_opt_and_above_bound(m, eps):
    rng = random.Random(1000 * m + int(eps * 10))
    for _ in range(INSTANCES):
        b = _uniform_bid_set(rng, m)
        _, opt = optimal_price(b)
        er = expected_revenue(b, eps)
        assert er <= float(opt) + 1e-6
        assert er >= revenue_bound(opt, eps, m) - 1e-6, (b, eps)


def test_bound_with_winner_count_is_tighter_and_still_holds():
    rng = random.Random(99)
    for _ in range(200):
        b = _random_bid_set(rng)
        eps = rng.choice([0.1, 0.5, 1.0, 5.0, 20.0])
        price, opt = optimal_price(b)
        m = winner_count(b, price)
        assert revenue_bound(opt, eps, m) >= revenue_bound(opt, eps, len(b.bids))
        assert expected_revenue(b, eps) >= revenue_bound(opt, eps, m) - 1e-9


def test_one_bid_changes_weight_by_at_most_eps_p():
    rng = random.Random(5)
    for _ in range(100):
        b = _random_bid_set(rng)
        eps = rng.choice([0.5, 1.0, 4.0])
        victim = rng.choice(b.bids).aggregator
        b2 = b.replace(victim, Decimal(rng.randint(1, 5000)) / 1000)
        d1, d2 = price_density(b, eps), price_density(b2, eps)
        top = min(d1.max_price, d2.max_price)
        for p in np.linspace(top / 500, top, 500):
            assert abs(log_weight(d1, p) - log_weight(d2, p)) <= eps * p + 1e-9


# ----------------------------
# Auctions
# ----------------------------
def test_run_auction_empty_bids():
    out = run_auction(BidSet("u"), 1.0, 1)
    assert out.winners == () and out.user_revenue == 0


def test_run_auction_winner_rule():
    b = bids(3, 1, "0.5")
    for seed in range(50):
        out = run_auction(b, 1.0, seed)
        assert out.winners
        expected = tuple(sorted(x.aggregator for x in b.active() if x.max_price >= out.clearing_price))
        assert out.winners == expected
        assert out.user_revenue == out.clearing_price * len(out.winners)
        assert sum(out.payments().values()) == out.user_revenue


def test_paying_tracker_wins_against_abstainer():
    b = BidSet("alice", (Bid("b.com", Decimal("0.40")), Bid("c.com", Decimal(0))))
    out = run_auction(b, 1.0, derive_seed(7, "alice", 0))
    assert out.winners == ("b.com",)
    assert Decimal(0) < out.clearing_price <= Decimal("0.40")


def test_run_auctions_deterministic():
    sets = [bids(3, 1, user="u1"), bids(2, user="u2"), BidSet("u3")]
    a = run_auctions(sets, 1.0, 7, 3)
    assert a == run_auctions(sets, 1.0, 7, 3)
    assert [o.user for o in a] == ["u1", "u2", "u3"]
    assert all(o.period == 3 for o in a)
    assert isinstance(a[0], AuctionOutcome)


def test_derive_seed():
    assert derive_seed(7, "u1", 0) == derive_seed(7, "u1", 0)
    assert derive_seed(7, "u1", 0) != derive_seed(7, "u2", 0)
    assert derive_seed(7, "u1", 0) != derive_seed(7, "u1", 1)
    assert 0 <= derive_seed(7, "u1", 0) < 2 ** 64
