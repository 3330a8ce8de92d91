# src/game.py
"""
Revenue sharing as a cooperative game between the user (u), the aggregator (a)
and, in mediated designs, the market (m).

A coalition's worth is the intent coefficient the aggregator can charge for:
1 (nothing known), impl (covert tracking) or expl (full disclosure). Shares are
the Shapley values of that game; the closed forms below are what the simulator
uses, the enumeration is the reference they are tested against.
"""
from __future__ import annotations

import enum
import itertools
import math
from dataclasses import dataclass
from fractions import Fraction
from numbers import Real
from typing import Callable, Dict, FrozenSet, Iterable, Mapping, Optional

from .engine import CpmParams, MarketType, Money, as_decimal, to_money

MAX_ENUM_PLAYERS = 12

__all__ = [
    "Player", "WorthFunction", "PlayerShares", "Payments", "worth", "players_for",
    "shapley_enumerate", "shapley_closed_form", "user_threshold", "user_gains",
    "data_price", "publisher_share",
]


class Player(str, enum.Enum):
    USER = "u"
    AGGREGATOR = "a"
    MARKET = "m"


def players_for(market_type: MarketType) -> FrozenSet[Player]:
    if MarketType.parse(market_type).mediated:
        return frozenset(Player)
    return frozenset({Player.USER, Player.AGGREGATOR})


def _check_intents(expl: Real, impl: Real) -> None:
    if not impl >= 1:
        raise ValueError(f"implicit intent must be >= 1, got {impl}")
    if expl < impl:
        raise ValueError(f"explicit intent {expl} is below implicit intent {impl}")


# ----------------------------
# Worth functions
# ----------------------------
def worth(market_type: MarketType, expl: Real, impl: Real, coalition: Iterable[Player]) -> Real:
    """Intent coefficient earned when exactly `coalition` cooperates."""
    mt = MarketType.parse(market_type)
    s = frozenset(Player(p) for p in coalition)
    extra = s - players_for(mt)
    if extra:
        raise ValueError(f"{', '.join(sorted(p.value for p in extra))} cannot play in a {mt.value} market")

    if mt.dnt:
        # Publishers honour Do Not Track: nothing beyond the baseline without everyone.
        return expl if s == players_for(mt) else 1

    if mt is MarketType.MEDIATED:
        if s == players_for(mt):
            return expl
        if s == {Player.USER, Player.MARKET}:
            return 1
        return impl

    if s == {Player.USER, Player.AGGREGATOR}:
        return expl
    if s == {Player.USER}:
        return 1
    return impl


@dataclass(frozen=True)
class WorthFunction:
    market_type: MarketType
    expl: Real
    impl: Real = 1

    def __post_init__(self) -> None:
        object.__setattr__(self, "market_type", MarketType.parse(self.market_type))

    @property
    def players(self) -> FrozenSet[Player]:
        return players_for(self.market_type)

    def __call__(self, coalition: Iterable[Player]) -> Real:
        return worth(self.market_type, self.expl, self.impl, coalition)


# ----------------------------
# Shapley values
# ----------------------------
def shapley_enumerate(players: Iterable, value: Callable[[FrozenSet], Real]) -> Dict:
    """
    Average marginal contribution over all orderings of `players`.

    Each coalition is evaluated once; an ordering that puts i right after S
    occurs |S|!(n-|S|-1)! times, which is the weight used below.
    """
    ps = list(dict.fromkeys(players))
    n = len(ps)
    if n > MAX_ENUM_PLAYERS:
        raise ValueError(f"{n} players exceed the enumeration cap of {MAX_ENUM_PLAYERS}")
    if n == 0:
        return {}

    cache: Dict[FrozenSet, Real] = {}

    def v(s: FrozenSet) -> Real:
        if s not in cache:
            cache[s] = value(s)
        return cache[s]

    n_fact = math.factorial(n)
    out: Dict = {}
    for i in ps:
        others = [p for p in ps if p != i]
        acc = 0
        for k in range(n):
            weight = math.factorial(k) * math.factorial(n - k - 1)
            for combo in itertools.combinations(others, k):
                s = frozenset(combo)
                acc += weight * (v(s | {i}) - v(s))
        out[i] = Fraction(acc, n_fact) if isinstance(acc, int) else acc / n_fact
    return out


@dataclass(frozen=True)
class PlayerShares:
    """Surplus shares per player plus the baseline credited to the aggregator."""
    surplus: Mapping[Player, Real]
    baseline: Real

    @property
    def user(self) -> Real:
        return self.surplus[Player.USER]

    @property
    def market(self) -> Optional[Real]:
        return self.surplus.get(Player.MARKET)

    @property
    def aggregator(self) -> Real:
        return self.baseline + self.surplus[Player.AGGREGATOR]

    def total(self) -> Real:
        return self.baseline + sum(self.surplus.values())


def shapley_closed_form(market_type: MarketType, expl: Real, impl: Real) -> PlayerShares:
    mt = MarketType.parse(market_type)
    _check_intents(expl, impl)
    e = expl - 1
    i = impl - 1

    if mt is MarketType.MEDIATED:
        side = (e - i * 3 / 2) / 3
        surplus = {Player.USER: side, Player.MARKET: side, Player.AGGREGATOR: e / 3}
        return PlayerShares(surplus, impl)
    if mt is MarketType.DIRECT:
        surplus = {Player.USER: (e - 2 * i) / 2, Player.AGGREGATOR: e / 2}
        return PlayerShares(surplus, impl)
    if mt is MarketType.DNT_MEDIATED:
        third = e / 3
        return PlayerShares({Player.USER: third, Player.MARKET: third, Player.AGGREGATOR: third}, 0)
    half = e / 2
    return PlayerShares({Player.USER: half, Player.AGGREGATOR: half}, 0)


def user_threshold(market_type: MarketType) -> Optional[Fraction]:
    """Consent lift a user needs to profit; None when any surplus suffices."""
    mt = MarketType.parse(market_type)
    if mt is MarketType.MEDIATED:
        return Fraction(3, 2)
    if mt is MarketType.DIRECT:
        return Fraction(2)
    return None


def user_gains(market_type: MarketType, expl: Real, impl: Real) -> bool:
    return shapley_closed_form(market_type, expl, impl).user > 0


# ----------------------------
# Money
# ----------------------------
@dataclass(frozen=True)
class Payments:
    user: Money
    market: Money
    participates: bool


def data_price(shares: PlayerShares, params: CpmParams, impressions: int,
               retained: Real = 1) -> Payments:
    """
    Turn surplus shares into payments for `impressions` impressions.

    `retained` is the fraction of gross revenue the game is played on; a share
    at or below zero pays nothing and marks the user as not participating.
    """
    if impressions < 0:
        raise ValueError(f"impressions must be >= 0, got {impressions}")
    scale = params.scale(impressions) * as_decimal(retained)
    u = shares.user
    m = shares.market if shares.market is not None else 0
    return Payments(
        user=to_money(as_decimal(u) * scale) if u > 0 else to_money(0),
        market=to_money(as_decimal(m) * scale) if m > 0 else to_money(0),
        participates=u > 0,
    )


def publisher_share(alpha: Real, gross: Money) -> Money:
    a = as_decimal(alpha)
    if not 0 <= a <= 1:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    return to_money((1 - a) * as_decimal(gross))
