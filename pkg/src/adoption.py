# src/adoption.py
"""
Trace-driven market adoption.

Users join when some aggregator would pay them a positive share for their
data; aggregators join when doing so raises their own revenue, given who is
already in the market. Decisions are myopic and made in synchronous rounds:
users first, then aggregators against the state at the start of the round.

Accounting: every trace event is one bundle of `impressions_per_period`
impressions per embedded aggregator, worth S = RON x TQM x impressions / 1000
at intent 1. The publisher keeps (1 - alpha) of the gross; the game is played
on the aggregator's alpha share.
"""
from __future__ import annotations

import csv
import enum
import logging
import math
from collections import defaultdict
from dataclasses import dataclass, field
from decimal import Decimal
from functools import cached_property, lru_cache
from pathlib import Path
from typing import Dict, FrozenSet, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .auction import Bid, BidSet, derive_seed, run_auction
from .engine import (CpmParams, IntentProfile, LiftKind, MarketConfig, MarketType, Money, as_decimal,
                     consent_lift, floor_money, from_micros, to_micros, to_money)
from .game import Player, data_price, publisher_share, shapley_closed_form, user_gains, user_threshold, worth
from .valuation import (AdvertiserSpec, AnonymizedProfile, ClickModel, bid_for_user, derive_intents,
                        normalize_keyword, pseudonym)

logger = logging.getLogger(__name__)

SECONDS_PER_DAY = 86400.0
DAYS_PER_MONTH = 30
HOME_SHARE = 0.6
HOME_SITES = 3
QUANTILES = (0.1, 0.25, 0.5, 0.75, 0.9)

__all__ = [
    "TraceEvent", "Trace", "TraceParams", "generate_trace", "AdoptionState", "SimulationConfig",
    "PricingMode", "Settlement", "RoundStat", "LiftStats", "AdoptionResult", "lift_stats", "compute_intents",
    "user_join_decision", "aggregator_revenue", "aggregator_join_decision", "settle",
    "run_adoption", "report",
]


# ----------------------------
# Traces
# ----------------------------
@dataclass(frozen=True)
class TraceEvent:
    ts: float
    user: str
    publisher: str
    aggregators: Tuple[str, ...] = ()
    keywords: Tuple[str, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "aggregators", tuple(self.aggregators))
        object.__setattr__(self, "keywords", tuple(self.keywords))


class Trace:
    """Ordered events plus the per-user and per-(user, aggregator) views derived from them."""

    def __init__(self, events: Iterable[TraceEvent]):
        self.events: Tuple[TraceEvent, ...] = tuple(events)
        for prev, ev in zip(self.events, self.events[1:]):
            if ev.ts < prev.ts:
                raise ValueError(f"trace timestamps go backwards at {ev.ts} after {prev.ts}")

    def __len__(self) -> int:
        return len(self.events)

    @cached_property
    def users(self) -> Tuple[str, ...]:
        return tuple(sorted({e.user for e in self.events}))

    @cached_property
    def aggregators(self) -> Tuple[str, ...]:
        return tuple(sorted({a for e in self.events for a in e.aggregators}))

    @cached_property
    def bundles(self) -> Dict[str, Dict[str, int]]:
        """user -> aggregator -> number of events where the aggregator was embedded."""
        out: Dict[str, Dict[str, int]] = defaultdict(lambda: defaultdict(int))
        for e in self.events:
            for a in e.aggregators:
                out[e.user][a] += 1
        return {u: dict(v) for u, v in out.items()}

    @cached_property
    def audience(self) -> Dict[str, Tuple[str, ...]]:
        """aggregator -> users it can see."""
        out: Dict[str, set] = defaultdict(set)
        for u, aggs in self.bundles.items():
            for a in aggs:
                out[a].add(u)
        return {a: tuple(sorted(us)) for a, us in out.items()}

    @cached_property
    def span_days(self) -> float:
        if not self.events:
            return 1.0
        return max(1.0, (self.events[-1].ts - self.events[0].ts) / SECONDS_PER_DAY)

    def profile(self, user: str) -> AnonymizedProfile:
        return AnonymizedProfile.from_visits(
            pseudonym(user), ((e.publisher, e.keywords) for e in self.events if e.user == user)
        )

    def profiles(self) -> Dict[str, Tuple[AnonymizedProfile, Dict[str, AnonymizedProfile]]]:
        """user -> (full profile, {aggregator: profile restricted to the sites it is embedded on})."""
        visits: Dict[str, list] = defaultdict(list)
        seen: Dict[str, Dict[str, set]] = defaultdict(lambda: defaultdict(set))
        for e in self.events:
            visits[e.user].append((e.publisher, e.keywords))
            for a in e.aggregators:
                seen[e.user][a].add(e.publisher)
        out = {}
        for u in self.users:
            full = AnonymizedProfile.from_visits(pseudonym(u), visits[u])
            out[u] = (full, {a: full.restrict(sites) for a, sites in sorted(seen[u].items())})
        return out


@dataclass(frozen=True)
class TraceParams:
    users: int
    publishers: int
    aggregators: int
    events: int
    keywords: Tuple[str, ...]
    days: float = 30.0
    popularity_skew: float = 1.1
    embedding_skew: float = 1.2
    max_embedded: int = 4
    ubiquitous: int = 1

    @classmethod
    def from_cfg(cls, cfg: dict, keywords: Iterable[str]) -> "TraceParams":
        return cls(
            users=int(cfg["trace_users"]),
            publishers=int(cfg["trace_publishers"]),
            aggregators=int(cfg["trace_aggregators"]),
            events=int(cfg["trace_events"]),
            keywords=tuple(keywords),
            days=float(cfg["trace_days"]),
            popularity_skew=float(cfg["popularity_skew"]),
            embedding_skew=float(cfg["embedding_skew"]),
            max_embedded=int(cfg["max_embedded"]),
            ubiquitous=int(cfg["trace_ubiquitous"]),
        )


def _power_weights(n: int, skew: float) -> np.ndarray:
    w = 1.0 / np.arange(1, n + 1, dtype=float) ** skew
    return w / w.sum()


def generate_trace(params: TraceParams, seed: int) -> Trace:
    """
    Synthetic browsing: publisher popularity and aggregator embedding follow
    power laws; each user mixes a few home sites with global popularity. The
    first `ubiquitous` aggregators are embedded on every publisher.
    """
    kws = sorted({normalize_keyword(k) for k in params.keywords if normalize_keyword(k)})
    if not kws:
        raise ValueError("keyword catalog is empty")
    if params.users < 1 or params.publishers < 1 or params.events < 1:
        raise ValueError("users, publishers and events must be positive")
    if params.aggregators < 0 or params.max_embedded < 0 or params.days <= 0:
        raise ValueError("aggregators and max_embedded must be >= 0 and days > 0")

    rng = np.random.default_rng(seed)
    n_pub, n_agg = params.publishers, params.aggregators
    pubs = [f"site{j:04d}.com" for j in range(n_pub)]
    aggs = [f"tracker{i:03d}.net" for i in range(n_agg)]
    users = [f"user{i:04d}" for i in range(params.users)]
    pop = _power_weights(n_pub, params.popularity_skew)

    ub = min(max(params.ubiquitous, 0), n_agg)
    tail = n_agg - ub
    emb = _power_weights(tail, params.embedding_skew) if tail else None

    site_kw: List[Tuple[str, ...]] = []
    site_aggs: List[Tuple[str, ...]] = []
    for _ in range(n_pub):
        k = int(rng.integers(1, min(3, len(kws)) + 1))
        site_kw.append(tuple(sorted(kws[i] for i in rng.choice(len(kws), size=k, replace=False))))
        m = int(rng.integers(0, min(params.max_embedded, tail) + 1)) if tail else 0
        picked = [ub + int(i) for i in rng.choice(tail, size=m, replace=False, p=emb)] if m else []
        site_aggs.append(tuple(sorted(aggs[i] for i in list(range(ub)) + picked)))

    h = min(HOME_SITES, n_pub)
    homes = np.array([rng.choice(n_pub, size=h, replace=False, p=pop) for _ in users])
    n = params.events
    who = rng.integers(0, params.users, size=n)
    at_home = rng.random(n) < HOME_SHARE
    home_pick = homes[who, rng.integers(0, h, size=n)]
    global_pick = rng.choice(n_pub, size=n, p=pop)
    where = np.where(at_home, home_pick, global_pick)
    ts = np.round(np.sort(rng.random(n)) * params.days * SECONDS_PER_DAY, 3)

    events = [
        TraceEvent(float(ts[i]), users[who[i]], pubs[where[i]], site_aggs[where[i]], site_kw[where[i]])
        for i in range(n)
    ]
    logger.info("Generated trace: %d events, %d users, %d publishers, %d aggregators.",
                n, params.users, n_pub, n_agg)
    return Trace(events)


def compute_intents(trace: Trace, advertisers: Sequence[AdvertiserSpec], model: ClickModel,
                    beta: float) -> Dict[str, IntentProfile]:
    advertisers = list(advertisers)
    return {
        u: derive_intents(full, visible, beta, advertisers, model)
        for u, (full, visible) in trace.profiles().items()
    }


# ----------------------------
# State + config
# ----------------------------
@dataclass(frozen=True)
class AdoptionState:
    users: FrozenSet[str] = frozenset()
    aggregators: FrozenSet[str] = frozenset()
    round: int = 0

    def with_aggregator(self, a: str) -> "AdoptionState":
        return AdoptionState(self.users, self.aggregators | {a}, self.round)

    def without_aggregator(self, a: str) -> "AdoptionState":
        return AdoptionState(self.users, self.aggregators - {a}, self.round)


class PricingMode(str, enum.Enum):
    SHAPLEY = "shapley"
    AUCTION = "auction"


@dataclass(frozen=True)
class SimulationConfig:
    market: MarketConfig
    cpm: CpmParams
    beta: float = 0.5
    pi_click: float = 0.05
    round_cap: int = 50
    period_days: float = 3.0

    @classmethod
    def from_cfg(cls, cfg: dict) -> "SimulationConfig":
        return cls(
            market=MarketConfig.from_cfg(cfg),
            cpm=CpmParams(Decimal(str(cfg["ron"])), Decimal(str(cfg["tqm"]))),
            beta=float(cfg["beta"]),
            pi_click=float(cfg["pi_click"]),
            round_cap=int(cfg["round_cap"]),
            period_days=float(cfg["period_days"]),
        )

    @property
    def bundle_value(self) -> Decimal:
        return self.cpm.scale(self.market.impressions_per_period)

    def period_of(self, ts: float) -> int:
        return int(ts // (self.period_days * SECONDS_PER_DAY))


# ----------------------------
# Per-bundle money split
# ----------------------------
@dataclass(frozen=True)
class Split:
    intent: float
    gross: Money
    publisher: Money
    user: Money
    market: Money
    aggregator: Money


def _coalition(market_type: MarketType, user_in: bool, agg_in: bool) -> FrozenSet[Player]:
    s = set()
    if user_in:
        s.add(Player.USER)
    if agg_in:
        s.add(Player.AGGREGATOR)
    if market_type.mediated:
        s.add(Player.MARKET)
    return frozenset(s)


@lru_cache(maxsize=None)
def _bundle_split(market_type: MarketType, alpha: Decimal, value: Decimal, expl: float, impl: float,
                  user_in: bool, agg_in: bool) -> Split:
    """One bundle of one (user, aggregator) pair under Shapley pricing."""
    intent = worth(market_type, expl, impl, _coalition(market_type, user_in, agg_in))
    gross = to_money(value * as_decimal(intent))
    pub = publisher_share(alpha, gross)
    retained = gross - pub
    user = market = to_money(0)
    if user_in and agg_in:
        shares = shapley_closed_form(market_type, expl, impl)
        pay = data_price(shares, CpmParams(value, 1), 1000, retained=alpha)
        user, market = pay.user, pay.market
    return Split(float(intent), gross, pub, user, market, retained - user - market)


def _split(u: str, a: str, state: AdoptionState, intents: Mapping[str, IntentProfile],
           config: SimulationConfig) -> Split:
    ip = intents.get(u) or IntentProfile(1.0)
    m = config.market
    return _bundle_split(m.market_type, m.alpha, config.bundle_value, ip.expl, ip.impl_for(a),
                         u in state.users, a in state.aggregators)


# ----------------------------
# Decisions
# ----------------------------
def user_join_decision(user: str, market_type: MarketType, intents: IntentProfile) -> bool:
    """Join iff some aggregator would pay this user a positive share."""
    mt = MarketType.parse(market_type)
    return any(user_gains(mt, intents.expl, impl) for impl in intents.impl.values())


def aggregator_revenue(a: str, state: AdoptionState, trace: Trace, intents: Mapping[str, IntentProfile],
                       config: SimulationConfig) -> Money:
    total = to_money(0)
    for u in trace.audience.get(a, ()):
        total += _split(u, a, state, intents, config).aggregator * trace.bundles[u][a]
    return total


def aggregator_join_decision(a: str, state: AdoptionState, trace: Trace, intents: Mapping[str, IntentProfile],
                             config: SimulationConfig) -> bool:
    joined = aggregator_revenue(a, state.with_aggregator(a), trace, intents, config)
    abstained = aggregator_revenue(a, state.without_aggregator(a), trace, intents, config)
    return joined > abstained


# ----------------------------
# Settlement
# ----------------------------
@dataclass(frozen=True)
class Settlement:
    """Money for one (trace event, embedded aggregator) transaction."""
    index: int
    period: int
    user: str
    aggregator: str
    publisher: str
    intent: float
    gross: Money
    publisher_share: Money
    user_payment: Money
    market_payment: Money
    aggregator_net: Money

    def balanced(self) -> bool:
        return self.gross == self.publisher_share + self.user_payment + self.market_payment + self.aggregator_net


def settle(trace: Trace, state: AdoptionState, intents: Mapping[str, IntentProfile],
           config: SimulationConfig) -> List[Settlement]:
    out: List[Settlement] = []
    for i, e in enumerate(trace.events):
        for a in e.aggregators:
            s = _split(e.user, a, state, intents, config)
            out.append(Settlement(i, config.period_of(e.ts), e.user, a, e.publisher, s.intent,
                                  s.gross, s.publisher, s.user, s.market, s.aggregator))
    return out


def _spread(total: Money, n: int) -> List[Money]:
    """Split an amount over n transactions in micro-units, remainder to the first ones."""
    base, rem = divmod(to_micros(total), n)
    return [from_micros(base + (1 if k < rem else 0)) for k in range(n)]


def settle_auction(trace: Trace, state: AdoptionState, intents: Mapping[str, IntentProfile],
                   config: SimulationConfig, advertisers: Sequence[AdvertiserSpec], seed: int) -> List[Settlement]:
    """
    Per (user in market, period) auction among the joined aggregators that see
    the user that period. Winners track at expl and pay the clearing price,
    spread over their transactions; losers see intent 1.
    """
    m = config.market
    model = ClickModel(config.pi_click)
    value = config.bundle_value
    advertisers = list(advertisers)

    groups: Dict[Tuple[str, int], List[int]] = defaultdict(list)
    for i, e in enumerate(trace.events):
        if e.user in state.users:
            groups[(e.user, config.period_of(e.ts))].append(i)

    won: Dict[Tuple[int, str], Money] = {}
    for (u, t), idx in sorted(groups.items()):
        ip = intents.get(u) or IntentProfile(1.0)
        evs = [trace.events[i] for i in idx]
        profile = AnonymizedProfile.from_visits(pseudonym(u), ((e.publisher, e.keywords) for e in evs))
        tx: Dict[str, List[int]] = defaultdict(list)
        sites: Dict[str, set] = defaultdict(set)
        for i, e in zip(idx, evs):
            for a in e.aggregators:
                if a in state.aggregators:
                    tx[a].append(i)
                    sites[a].add(e.publisher)
        bids = []
        for a in sorted(tx):
            worth_it = floor_money(m.alpha * value * as_decimal(ip.expl - 1) * len(tx[a]))
            offer = bid_for_user(profile, advertisers, model, sites[a], m.currency_scale)
            bids.append(Bid(a, min(offer, worth_it)))
        outcome = run_auction(BidSet(u, tuple(bids)), m.epsilon, derive_seed(seed, u, t), t)
        for a in outcome.winners:
            for i, pay in zip(tx[a], _spread(outcome.clearing_price, len(tx[a]))):
                won[(i, a)] = pay

    out: List[Settlement] = []
    for i, e in enumerate(trace.events):
        for a in e.aggregators:
            if (i, a) in won:
                intent = (intents.get(e.user) or IntentProfile(1.0)).expl
                gross = to_money(value * as_decimal(intent))
                pay = won[(i, a)]
            else:
                # losers on a user in the market are untracked
                view = AdoptionState(state.users, frozenset(), state.round) if e.user in state.users else state
                s = _split(e.user, a, view, intents, config)
                intent, gross, pay = s.intent, s.gross, to_money(0)
            pub = publisher_share(m.alpha, gross)
            out.append(Settlement(i, config.period_of(e.ts), e.user, a, e.publisher, float(intent),
                                  gross, pub, pay, to_money(0), gross - pub - pay))
    return out


# ----------------------------
# Dynamics
# ----------------------------
@dataclass(frozen=True)
class RoundStat:
    round: int
    users_joined: int
    aggregators_joined: int


@dataclass(frozen=True)
class LiftStats:
    """Consent lift over every visible (user, aggregator) pair."""
    pairs: int = 0
    finite: Tuple[float, ...] = ()
    infinite: int = 0
    undefined: int = 0
    above: Tuple[Tuple[float, int], ...] = ()

    def share_above(self, threshold: float) -> float:
        n = dict(self.above).get(float(threshold), 0)
        return n / self.pairs if self.pairs else 0.0

    def quantiles(self) -> List[Tuple[float, float]]:
        if not self.finite:
            return []
        qs = np.quantile(np.array(self.finite), QUANTILES)
        return [(q, float(v)) for q, v in zip(QUANTILES, qs)]

    def rows(self) -> List[Tuple[str, str]]:
        out = [
            ("pairs", str(self.pairs)),
            ("finite", str(len(self.finite))),
            ("infinite", str(self.infinite)),
            ("undefined", str(self.undefined)),
        ]
        out += [(f"share_above_{t:g}", f"{self.share_above(t):.6f}") for t, _ in self.above]
        out += [(f"q{q:g}", f"{v:.6f}") for q, v in self.quantiles()]
        return out


def lift_stats(trace: Trace, intents: Mapping[str, IntentProfile]) -> LiftStats:
    thresholds = [user_threshold(MarketType.MEDIATED), user_threshold(MarketType.DIRECT)]
    finite: List[float] = []
    infinite = undefined = pairs = 0
    counts = [0] * len(thresholds)
    for u, aggs in sorted(trace.bundles.items()):
        ip = intents.get(u) or IntentProfile(1.0)
        for a in sorted(aggs):
            lift = consent_lift(ip.expl, ip.impl_for(a))
            pairs += 1
            if lift.kind is LiftKind.FINITE:
                finite.append(float(lift.value))
            elif lift.kind is LiftKind.INFINITE:
                infinite += 1
            else:
                undefined += 1
            for i, t in enumerate(thresholds):
                counts[i] += lift.exceeds(t)
    return LiftStats(pairs, tuple(finite), infinite, undefined,
                     tuple((float(t), n) for t, n in zip(thresholds, counts)))


@dataclass(frozen=True)
class AdoptionResult:
    market_type: MarketType
    pricing: PricingMode
    users_total: int
    aggregators_total: int
    users_joined: Tuple[str, ...]
    aggregators_joined: Tuple[str, ...]
    network_effect: Tuple[str, ...]
    rounds: Tuple[RoundStat, ...]
    converged: bool
    initial_total: Money
    final_total: Money
    initial_aggregator: Money
    final_aggregator: Money
    final_publisher: Money
    final_users: Money
    final_market: Money
    intent_initial: float
    intent_final: float
    user_monthly: Mapping[str, Money] = field(default_factory=dict)
    lift: LiftStats = field(default_factory=LiftStats)
    settlements: Tuple[Settlement, ...] = field(default=(), repr=False, compare=False)

    @property
    def users_fraction(self) -> float:
        return len(self.users_joined) / self.users_total if self.users_total else 0.0

    @property
    def aggregators_fraction(self) -> float:
        return len(self.aggregators_joined) / self.aggregators_total if self.aggregators_total else 0.0

    @property
    def total_normalized(self) -> float:
        return float(self.final_total / self.initial_total) if self.initial_total else 0.0

    @property
    def aggregator_normalized(self) -> float:
        return float(self.final_aggregator / self.initial_aggregator) if self.initial_aggregator else 0.0

    def monthly_quantiles(self) -> List[Tuple[float, float]]:
        vals = [float(self.user_monthly[u]) for u in self.users_joined if u in self.user_monthly]
        if not vals:
            return []
        qs = np.quantile(np.array(vals), QUANTILES)
        return [(q, round(float(v), 6)) for q, v in zip(QUANTILES, qs)]

    def payouts(self) -> List[Tuple[int, str, str, Money]]:
        """(period, user, aggregator, amount) summed over transactions; positive amounts only."""
        acc: Dict[Tuple[int, str, str], Money] = defaultdict(lambda: to_money(0))
        for s in self.settlements:
            if s.user_payment > 0:
                acc[(s.period, s.user, s.aggregator)] += s.user_payment
        return [(p, u, a, amt) for (p, u, a), amt in sorted(acc.items())]

    def summary_rows(self) -> List[Tuple[str, str]]:
        return [
            ("market_type", self.market_type.value),
            ("pricing", self.pricing.value),
            ("users_total", str(self.users_total)),
            ("users_joined", str(len(self.users_joined))),
            ("users_fraction", f"{self.users_fraction:.6f}"),
            ("aggregators_total", str(self.aggregators_total)),
            ("aggregators_joined", str(len(self.aggregators_joined))),
            ("aggregators_fraction", f"{self.aggregators_fraction:.6f}"),
            ("network_effect_aggregators", str(len(self.network_effect))),
            ("rounds", str(len(self.rounds))),
            ("converged", str(self.converged).lower()),
            ("intent_initial", f"{self.intent_initial:.6f}"),
            ("intent_final", f"{self.intent_final:.6f}"),
        ]

    def revenue_rows(self) -> List[Tuple[str, str, str, str]]:
        def norm(a: Money, b: Money) -> str:
            return f"{float(b / a):.6f}" if a else ""
        return [
            ("total", str(self.initial_total), str(self.final_total),
             norm(self.initial_total, self.final_total)),
            ("aggregators", str(self.initial_aggregator), str(self.final_aggregator),
             norm(self.initial_aggregator, self.final_aggregator)),
            ("publishers", "", str(self.final_publisher), ""),
            ("users", "", str(self.final_users), ""),
            ("market", "", str(self.final_market), ""),
        ]


def _network_effect(joined: Iterable[str], trace: Trace, intents: Mapping[str, IntentProfile],
                    market_type: MarketType) -> Tuple[str, ...]:
    """Joined aggregators with no visible user who would enter the market for them alone."""
    out = []
    for a in joined:
        own = any(
            user_gains(market_type, ip.expl, ip.impl_for(a))
            for ip in (intents.get(u) or IntentProfile(1.0) for u in trace.audience.get(a, ()))
        )
        if not own:
            out.append(a)
    return tuple(sorted(out))


def _sum(settlements: Sequence[Settlement], attr: str) -> Money:
    return sum((getattr(s, attr) for s in settlements), to_money(0))


def run_adoption(trace: Trace, market_type: MarketType, config: SimulationConfig,
                 pricing: PricingMode = PricingMode.SHAPLEY, seed: int = 0,
                 intents: Optional[Mapping[str, IntentProfile]] = None,
                 advertisers: Optional[Sequence[AdvertiserSpec]] = None) -> AdoptionResult:
    mt = MarketType.parse(market_type)
    pricing = PricingMode(pricing)
    m = config.market
    config = SimulationConfig(
        MarketConfig(m.alpha, mt, m.epsilon, m.impressions_per_period, m.currency_scale),
        config.cpm, config.beta, config.pi_click, config.round_cap, config.period_days,
    )
    if intents is None or pricing is PricingMode.AUCTION:
        if advertisers is None:
            raise ValueError("advertiser catalog required to derive intents or run auctions")
    if intents is None:
        intents = compute_intents(trace, advertisers, ClickModel(config.pi_click), config.beta)

    state = AdoptionState()
    rounds: List[RoundStat] = []
    converged = False
    for r in range(1, config.round_cap + 1):
        users = state.users | {
            u for u in trace.users
            if u not in state.users and user_join_decision(u, mt, intents.get(u) or IntentProfile(1.0))
        }
        aggs = state.aggregators | {
            a for a in trace.aggregators
            if a not in state.aggregators and aggregator_join_decision(a, state, trace, intents, config)
        }
        changed = users != state.users or aggs != state.aggregators
        state = AdoptionState(frozenset(users), frozenset(aggs), r)
        rounds.append(RoundStat(r, len(users), len(aggs)))
        logger.info("Round %d: %d users, %d aggregators in market.", r, len(users), len(aggs))
        if not changed:
            converged = True
            break
    if not converged:
        logger.warning("Adoption did not settle within %d rounds.", config.round_cap)

    initial = settle(trace, AdoptionState(), intents, config)
    if pricing is PricingMode.AUCTION:
        final = settle_auction(trace, state, intents, config, advertisers, seed)
    else:
        final = settle(trace, state, intents, config)

    per_user: Dict[str, Money] = {u: to_money(0) for u in trace.users}
    for s in final:
        per_user[s.user] += s.user_payment
    scale = Decimal(DAYS_PER_MONTH) / as_decimal(trace.span_days)
    monthly = {u: to_money(v * scale) for u, v in per_user.items()}

    return AdoptionResult(
        market_type=mt,
        pricing=pricing,
        users_total=len(trace.users),
        aggregators_total=len(trace.aggregators),
        users_joined=tuple(sorted(state.users)),
        aggregators_joined=tuple(sorted(state.aggregators)),
        network_effect=_network_effect(state.aggregators, trace, intents, mt),
        rounds=tuple(rounds),
        converged=converged,
        initial_total=_sum(initial, "gross"),
        final_total=_sum(final, "gross"),
        initial_aggregator=_sum(initial, "aggregator_net"),
        final_aggregator=_sum(final, "aggregator_net"),
        final_publisher=_sum(final, "publisher_share"),
        final_users=_sum(final, "user_payment"),
        final_market=_sum(final, "market_payment"),
        intent_initial=math.fsum(s.intent for s in initial),
        intent_final=math.fsum(s.intent for s in final),
        user_monthly=monthly,
        lift=lift_stats(trace, intents),
        settlements=tuple(final),
    )


# ----------------------------
# Reports
# ----------------------------
def _write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    with path.open("w", encoding="utf-8", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def report(result: Optional[AdoptionResult], out_dir: Path | str) -> List[Path]:
    """Write the adoption_rounds, revenue, user_monthly_quantiles, summary and consent_lift CSVs."""
    d = Path(out_dir)
    d.mkdir(parents=True, exist_ok=True)
    paths = {
        "rounds": d / "adoption_rounds.csv",
        "revenue": d / "revenue.csv",
        "quantiles": d / "user_monthly_quantiles.csv",
        "summary": d / "summary.csv",
        "lift": d / "consent_lift.csv",
    }
    r = result
    _write_csv(paths["rounds"], ["round", "users_joined", "aggregators_joined", "users_fraction",
                                 "aggregators_fraction"],
               [] if r is None else [
                   (s.round, s.users_joined, s.aggregators_joined,
                    f"{s.users_joined / r.users_total:.6f}" if r.users_total else "",
                    f"{s.aggregators_joined / r.aggregators_total:.6f}" if r.aggregators_total else "")
                   for s in r.rounds
               ])
    _write_csv(paths["revenue"], ["metric", "initial", "final", "normalized"],
               [] if r is None else r.revenue_rows())
    _write_csv(paths["quantiles"], ["quantile", "monthly_revenue"],
               [] if r is None else [(f"{q:g}", f"{v:.6f}") for q, v in r.monthly_quantiles()])
    _write_csv(paths["summary"], ["key", "value"], [] if r is None else r.summary_rows())
    _write_csv(paths["lift"], ["metric", "value"], [] if r is None else r.lift.rows())
    logger.info("Wrote reports to %s", d)
    return list(paths.values())
