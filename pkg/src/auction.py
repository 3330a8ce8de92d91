# src/auction.py
"""
Per-user access auction using the exponential mechanism.

Every aggregator bids the most it will pay for one period of access to a user.
A clearing price p is drawn with density proportional to exp(eps * R(p)) on
(0, max bid], where R(p) = p * w(p) and w(p) counts bids >= p. Everyone bidding
at least p wins and pays p. Because w is constant between consecutive bids the
density is a piecewise exponential: sample a segment by its mass, then invert
the within-segment CDF.
"""
from __future__ import annotations

import bisect
import hashlib
import math
from dataclasses import dataclass, field
from decimal import ROUND_CEILING, Decimal
from numbers import Real
from typing import Dict, Iterable, List, Tuple

import numpy as np

from .engine import MICRO, Money, as_decimal, to_money

# Below this segment width (in units of 1/slope) the conditional mean uses its series.
SMALL_X = 1e-3

__all__ = [
    "Bid", "BidSet", "AuctionOutcome", "Segment", "PriceDensity",
    "winner_count", "revenue_at_price", "optimal_price", "price_density", "log_weight",
    "price_cdf", "sample_price", "sample_prices", "run_auction", "expected_revenue",
    "revenue_bound", "derive_seed",
]


# ----------------------------
# Bids and outcomes
# ----------------------------
@dataclass(frozen=True)
class Bid:
    aggregator: str
    max_price: Money

    def __post_init__(self) -> None:
        object.__setattr__(self, "max_price", to_money(self.max_price))
        if self.max_price < 0:
            raise ValueError(f"bid of {self.aggregator!r} must be >= 0, got {self.max_price}")


@dataclass(frozen=True)
class BidSet:
    user: str
    bids: Tuple[Bid, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "bids", tuple(self.bids))
        seen = set()
        for b in self.bids:
            if b.aggregator in seen:
                raise ValueError(f"duplicate bid from {b.aggregator!r} on user {self.user!r}")
            seen.add(b.aggregator)

    def active(self) -> List[Bid]:
        """Bids above zero; a zero bid abstains."""
        return [b for b in self.bids if b.max_price > 0]

    def prices(self) -> List[Money]:
        return sorted(b.max_price for b in self.active())

    def replace(self, aggregator: str, max_price: Money) -> "BidSet":
        """Same bid set with one bidder's bid changed (or added)."""
        rest = [b for b in self.bids if b.aggregator != aggregator]
        return BidSet(self.user, tuple(rest) + (Bid(aggregator, max_price),))


@dataclass(frozen=True)
class AuctionOutcome:
    user: str
    clearing_price: Money
    winners: Tuple[str, ...] = ()
    period: int = 0

    @property
    def payment_per_winner(self) -> Money:
        return self.clearing_price

    @property
    def user_revenue(self) -> Money:
        return self.clearing_price * len(self.winners)

    def payments(self) -> Dict[str, Money]:
        return {a: self.clearing_price for a in self.winners}


# ----------------------------
# Revenue function
# ----------------------------
def winner_count(bids: BidSet, p: Real) -> int:
    q = p if isinstance(p, Decimal) else as_decimal(float(p))
    return sum(1 for b in bids.active() if q <= b.max_price)


def revenue_at_price(bids: BidSet, p: Real) -> Real:
    if p < 0:
        raise ValueError(f"price must be >= 0, got {p}")
    return p * winner_count(bids, p)


def optimal_price(bids: BidSet) -> Tuple[Money, Money]:
    """(price, OPT); on ties the lower price wins since it sells to more bidders."""
    best_p, best_r = to_money(0), to_money(0)
    for p in sorted(set(bids.prices())):
        r = revenue_at_price(bids, p)
        if r > best_r:
            best_p, best_r = p, r
    return best_p, to_money(best_r)


# ----------------------------
# Price density
# ----------------------------
@dataclass(frozen=True)
class Segment:
    lo: float
    hi: float
    winners: int
    slope: float

    @property
    def x(self) -> float:
        return self.slope * (self.hi - self.lo)


def _segment_log_mass(seg: Segment) -> float:
    # log of the integral of exp(slope * p) over (lo, hi]
    return seg.slope * seg.hi + math.log(-math.expm1(-seg.x)) - math.log(seg.slope)


def _within_fraction(seg: Segment, p: float) -> float:
    """P(price <= p | price in seg) = expm1(s(p-lo)) / expm1(s(hi-lo))."""
    a = seg.slope * (p - seg.lo)
    if a <= 0:
        return 0.0
    return math.exp(a - seg.x) * (-math.expm1(-a)) / (-math.expm1(-seg.x))


def _within_mean(seg: Segment) -> float:
    # mean of hi - p is width * (1/x - 1/expm1(x))
    x = seg.x
    width = seg.hi - seg.lo
    if x < SMALL_X:
        g = 0.5 - x / 12.0 + x ** 3 / 720.0
    else:
        g = 1.0 / x - 1.0 / math.expm1(x)
    return seg.hi - width * g


@dataclass(frozen=True)
class PriceDensity:
    epsilon: float
    segments: Tuple[Segment, ...]
    log_masses: np.ndarray = field(repr=False, compare=False)
    log_norm: float = 0.0

    @property
    def probs(self) -> np.ndarray:
        return np.exp(self.log_masses - self.log_norm)

    @property
    def his(self) -> List[float]:
        return [s.hi for s in self.segments]

    @property
    def max_price(self) -> float:
        return self.segments[-1].hi

    def segment_at(self, p: float) -> int:
        return min(bisect.bisect_left(self.his, p), len(self.segments) - 1)


def price_density(bids: BidSet, epsilon: float) -> PriceDensity:
    if not epsilon > 0:
        raise ValueError(f"epsilon must be > 0, got {epsilon}")
    prices = bids.prices()
    if not prices:
        raise ValueError(f"user {bids.user!r} has no positive bid; nothing to price")

    segments: List[Segment] = []
    lo = 0.0
    for hi in sorted(set(prices)):
        w = winner_count(bids, hi)
        segments.append(Segment(lo=lo, hi=float(hi), winners=w, slope=float(epsilon) * w))
        lo = float(hi)

    log_masses = np.array([_segment_log_mass(s) for s in segments], dtype=float)
    top = float(np.max(log_masses))
    log_norm = top + float(np.log(np.sum(np.exp(log_masses - top))))
    return PriceDensity(float(epsilon), tuple(segments), log_masses, log_norm)


def log_weight(density: PriceDensity, p: float) -> float:
    """Unnormalised log density eps * R(p); -inf outside the support."""
    if p <= 0 or p > density.max_price:
        return -math.inf
    return density.segments[density.segment_at(p)].slope * p


def price_cdf(density: PriceDensity, p: float) -> float:
    if p <= 0:
        return 0.0
    if p >= density.max_price:
        return 1.0
    j = density.segment_at(p)
    probs = density.probs
    return float(np.sum(probs[:j]) + probs[j] * _within_fraction(density.segments[j], p))


# ----------------------------
# Sampling
# ----------------------------
def _ceil_money(p: float) -> Money:
    # Bids are whole micro-units, so rounding up keeps p inside its segment.
    return as_decimal(p).quantize(MICRO, rounding=ROUND_CEILING)


def sample_prices(density: PriceDensity, n: int, seed) -> np.ndarray:
    """n independent prices: pick a segment by mass, then invert its CDF."""
    rng = np.random.default_rng(seed)
    idx = rng.choice(len(density.segments), size=n, p=density.probs)
    u = rng.random(n)
    lo = np.array([s.lo for s in density.segments])[idx]
    hi = np.array([s.hi for s in density.segments])[idx]
    slope = np.array([s.slope for s in density.segments])[idx]
    x = slope * (hi - lo)
    with np.errstate(over="ignore", invalid="ignore"):
        wide = (x + np.log(u + (1.0 - u) * np.exp(-x))) / slope
        narrow = np.log1p(u * np.expm1(x)) / slope
    offset = np.where(x > 1.0, wide, narrow)
    return np.clip(lo + np.maximum(offset, 0.0), lo, hi)


def sample_price(density: PriceDensity, seed) -> Money:
    p = float(sample_prices(density, 1, seed)[0])
    return min(_ceil_money(p), to_money(density.max_price))


def run_auction(bids: BidSet, epsilon: float, seed, period: int = 0) -> AuctionOutcome:
    if not epsilon > 0:
        raise ValueError(f"epsilon must be > 0, got {epsilon}")
    if not bids.active():
        return AuctionOutcome(bids.user, to_money(0), (), period)
    price = sample_price(price_density(bids, epsilon), seed)
    winners = tuple(sorted(b.aggregator for b in bids.active() if b.max_price >= price))
    return AuctionOutcome(bids.user, price, winners, period)


def run_auctions(bid_sets: Iterable[BidSet], epsilon: float, seed: int, period: int) -> List[AuctionOutcome]:
    """One independent auction per user, each on its own derived seed."""
    return [run_auction(bs, epsilon, derive_seed(seed, bs.user, period), period) for bs in bid_sets]


# ----------------------------
# Revenue guarantees
# ----------------------------
def expected_revenue(bids: BidSet, epsilon: float) -> float:
    """Closed-form integral of R(p) against the price density."""
    density = price_density(bids, epsilon)
    probs = density.probs
    return float(sum(pr * s.winners * _within_mean(s) for pr, s in zip(probs, density.segments)))


def revenue_bound(opt: Real, epsilon: float, m: int) -> float:
    """Lower bound OPT - 3 ln(e + OPT eps^2 m) / eps on the expected revenue."""
    opt = float(opt)
    return opt - 3.0 * math.log(math.e + opt * epsilon ** 2 * m) / epsilon


def derive_seed(seed: int, user: str, period: int) -> int:
    digest = hashlib.sha256(f"{int(seed)}:{user}:{int(period)}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")
