# src/valuation.py
"""
What a user's browsing is worth to an aggregator.

An aggregator sees an anonymised profile: which sites were visited, how often,
and the keywords of each site. Advertisers match the profile through shared
keywords and pay their keyword's CPC per click. Each of the user's
impressions shows one ad; an advertiser shown n times gets at least one click
with probability 1 - (1 - pi)^n. The aggregator's value is the best expected
click revenue over allocations of those slots, found greedily.
"""
from __future__ import annotations

import hashlib
import heapq
import itertools
import unicodedata
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from decimal import Decimal
from types import MappingProxyType
from typing import TYPE_CHECKING, Dict, FrozenSet, Iterable, List, Mapping, Optional, Set, Tuple

from .auction import Bid, BidSet
from .engine import IntentProfile, Money, as_decimal, to_money

if TYPE_CHECKING:
    from .adoption import TraceEvent

BRUTE_FORCE_MAX_SLOTS = 8
BRUTE_FORCE_MAX_ADVERTISERS = 5

__all__ = [
    "AdvertiserSpec", "AnonymizedProfile", "Allocation", "ClickModel", "normalize_keyword",
    "pseudonym", "relevant_keywords", "allocation_value", "greedy_allocate",
    "brute_force_allocate", "bid_for_user", "derive_intents", "valuate_trace",
]


# -----------------------
# Normalization
# -----------------------
def normalize_keyword(s: str) -> str:
    """NFKC + casefold, with dashes and quotes unified, so catalog and site keywords compare equal."""
    if not s:
        return ""
    s = unicodedata.normalize("NFKC", s)
    s = (
        s.replace("\u2014", "-")
         .replace("\u2013", "-")
         .replace("\u2019", "'")
         .replace("\u2018", "'")
    )
    return " ".join(s.casefold().split())


def pseudonym(user: str) -> str:
    return hashlib.sha256(user.encode("utf-8")).hexdigest()[:12]


# -----------------------
# Types
# -----------------------
@dataclass(frozen=True)
class AdvertiserSpec:
    advertiser: str
    cpc: Mapping[str, Decimal]

    def __post_init__(self) -> None:
        if not self.cpc:
            raise ValueError(f"advertiser {self.advertiser!r} has no keywords")
        clean: Dict[str, Decimal] = {}
        for kw, price in self.cpc.items():
            k = normalize_keyword(kw)
            p = as_decimal(price)
            if p < 0:
                raise ValueError(f"CPC for {self.advertiser!r}/{kw!r} must be >= 0, got {p}")
            if k:
                clean[k] = max(p, clean.get(k, p))
        object.__setattr__(self, "cpc", MappingProxyType(clean))

    @property
    def keywords(self) -> FrozenSet[str]:
        return frozenset(self.cpc)

    def scaled(self, factor) -> "AdvertiserSpec":
        f = as_decimal(factor)
        return AdvertiserSpec(self.advertiser, {k: v * f for k, v in self.cpc.items()})


@dataclass(frozen=True)
class AnonymizedProfile:
    """Per-site visit counts and site keywords under a pseudonymous id."""
    pid: str
    visits: Mapping[str, int] = field(default_factory=dict)
    site_keywords: Mapping[str, FrozenSet[str]] = field(default_factory=dict)

    def __post_init__(self) -> None:
        for site, n in self.visits.items():
            if n < 0:
                raise ValueError(f"visit count for {site!r} must be >= 0, got {n}")
        object.__setattr__(self, "visits", MappingProxyType(dict(self.visits)))
        object.__setattr__(self, "site_keywords", MappingProxyType(
            {s: frozenset(normalize_keyword(k) for k in kws if normalize_keyword(k))
             for s, kws in self.site_keywords.items()}
        ))

    def total(self) -> int:
        return sum(self.visits.values())

    def restrict(self, sites: Iterable[str]) -> "AnonymizedProfile":
        keep = set(sites)
        return AnonymizedProfile(
            self.pid,
            {s: n for s, n in self.visits.items() if s in keep},
            {s: k for s, k in self.site_keywords.items() if s in keep},
        )

    @classmethod
    def from_visits(cls, pid: str, visits: Iterable[Tuple[str, Iterable[str]]]) -> "AnonymizedProfile":
        counts: Counter = Counter()
        kws: Dict[str, Set[str]] = defaultdict(set)
        for site, keywords in visits:
            counts[site] += 1
            kws[site].update(keywords)
        return cls(pid, dict(counts), {s: frozenset(k) for s, k in kws.items()})


@dataclass(frozen=True)
class Allocation:
    slots: Mapping[str, int] = field(default_factory=dict)

    def __post_init__(self) -> None:
        object.__setattr__(self, "slots", MappingProxyType({a: n for a, n in self.slots.items() if n}))

    def total(self) -> int:
        return sum(self.slots.values())


@dataclass(frozen=True)
class ClickModel:
    pi_click: float

    def __post_init__(self) -> None:
        if not 0 <= self.pi_click <= 1:
            raise ValueError(f"pi_click must lie in [0, 1], got {self.pi_click}")


# -----------------------
# Matching
# -----------------------
def relevant_keywords(profile: AnonymizedProfile) -> FrozenSet[str]:
    out: Set[str] = set()
    for site, n in profile.visits.items():
        if n > 0:
            out |= profile.site_keywords.get(site, frozenset())
    return frozenset(out)


def _effective_cpc(advertisers: Iterable[AdvertiserSpec], profile: AnonymizedProfile) -> Dict[str, float]:
    """Advertiser -> CPC of its highest-priced keyword shared with the profile."""
    kws = relevant_keywords(profile)
    out: Dict[str, float] = {}
    for adv in advertisers:
        shared = [adv.cpc[k] for k in adv.keywords & kws]
        if shared:
            out[adv.advertiser] = float(max(shared))
    return out


def _value(slots: Mapping[str, int], cpc: Mapping[str, float], pi: float) -> float:
    miss = 1.0 - pi
    return sum(cpc[a] * (1.0 - miss ** n) for a, n in sorted(slots.items()) if n > 0)


def allocation_value(alloc: Allocation, advertisers: Iterable[AdvertiserSpec], model: ClickModel,
                     profile: AnonymizedProfile) -> float:
    cpc = _effective_cpc(advertisers, profile)
    for a in alloc.slots:
        if a not in cpc:
            raise ValueError(f"advertiser {a!r} shares no keyword with profile {profile.pid!r}")
    return _value(alloc.slots, cpc, model.pi_click)


# -----------------------
# Optimisers
# -----------------------
def greedy_allocate(n: int, advertisers: Iterable[AdvertiserSpec], profile: AnonymizedProfile,
                    model: ClickModel) -> Allocation:
    """
    Give each of the n slots to the advertiser with the largest marginal gain
    CPC * pi * (1 - pi)^n_a. Gains shrink with n_a, so this is optimal.
    Ties go to the smallest advertiser id.
    """
    if n < 0:
        raise ValueError(f"slot count must be >= 0, got {n}")
    cpc = _effective_cpc(advertisers, profile)
    if not cpc or n == 0:
        return Allocation()

    pi = model.pi_click
    miss = 1.0 - pi
    slots: Dict[str, int] = {a: 0 for a in cpc}
    heap = [(-c * pi, a) for a, c in cpc.items()]
    heapq.heapify(heap)
    for _ in range(n):
        _, a = heapq.heappop(heap)
        slots[a] += 1
        heapq.heappush(heap, (-cpc[a] * pi * miss ** slots[a], a))
    return Allocation(slots)


def brute_force_allocate(n: int, advertisers: Iterable[AdvertiserSpec], profile: AnonymizedProfile,
                         model: ClickModel) -> Allocation:
    advertisers = list(advertisers)
    if n > BRUTE_FORCE_MAX_SLOTS or len(advertisers) > BRUTE_FORCE_MAX_ADVERTISERS:
        raise ValueError(
            f"brute force is limited to {BRUTE_FORCE_MAX_SLOTS} slots and "
            f"{BRUTE_FORCE_MAX_ADVERTISERS} advertisers (got {n}, {len(advertisers)})"
        )
    cpc = _effective_cpc(advertisers, profile)
    if not cpc or n <= 0:
        return Allocation()

    best: Optional[Dict[str, int]] = None
    best_val = -1.0
    for combo in itertools.combinations_with_replacement(sorted(cpc), n):
        slots = dict(Counter(combo))
        val = _value(slots, cpc, model.pi_click)
        if val > best_val:
            best, best_val = slots, val
    return Allocation(best or {})


# -----------------------
# Bids and intents
# -----------------------
def _profile_value(profile: AnonymizedProfile, advertisers: List[AdvertiserSpec], model: ClickModel) -> float:
    alloc = greedy_allocate(profile.total(), advertisers, profile, model)
    return _value(alloc.slots, _effective_cpc(advertisers, profile), model.pi_click)


def bid_for_user(profile: AnonymizedProfile, advertisers: Iterable[AdvertiserSpec], model: ClickModel,
                 visible_sites: Optional[Iterable[str]] = None, currency_scale=1) -> Money:
    """Greedy value of the part of the profile this aggregator can see; zero means abstain."""
    view = profile if visible_sites is None else profile.restrict(visible_sites)
    value = _profile_value(view, list(advertisers), model)
    return to_money(as_decimal(value) * as_decimal(currency_scale))


def derive_intents(full_profile: AnonymizedProfile, visible: Mapping[str, AnonymizedProfile], beta: float,
                   advertisers: Iterable[AdvertiserSpec], model: ClickModel) -> IntentProfile:
    """
    expl = 1 + beta * v(full), impl[a] = 1 + beta * v(seen by a), with v the
    greedy value per impression of the full profile. A sub-profile has fewer
    slots and fewer keywords, so impl never exceeds expl.
    """
    if beta < 0:
        raise ValueError(f"beta must be >= 0, got {beta}")
    advertisers = list(advertisers)
    n_full = full_profile.total()
    if n_full == 0:
        return IntentProfile(1.0, {a: 1.0 for a in visible})

    expl = 1.0 + beta * _profile_value(full_profile, advertisers, model) / n_full
    impl = {
        a: min(expl, 1.0 + beta * _profile_value(view, advertisers, model) / n_full)
        for a, view in visible.items()
    }
    return IntentProfile(expl, impl)


def valuate_trace(events: Iterable["TraceEvent"], advertisers: Iterable[AdvertiserSpec], model: ClickModel,
                  whitelists: Optional[Mapping[str, Iterable[str]]] = None,
                  currency_scale=1) -> List[BidSet]:
    """
    One BidSet per user: each aggregator embedded on a whitelisted site bids
    the value of the whitelisted visits it is embedded on. Without whitelists
    every visited publisher counts as whitelisted.
    """
    advertisers = list(advertisers)
    allowed = None if whitelists is None else {u: set(s) for u, s in whitelists.items()}
    visits: Dict[str, List[Tuple[str, FrozenSet[str]]]] = defaultdict(list)
    embeds: Dict[str, Dict[str, Set[str]]] = defaultdict(lambda: defaultdict(set))
    for ev in events:
        if allowed is not None and ev.publisher not in allowed.get(ev.user, ()):
            continue
        visits[ev.user].append((ev.publisher, ev.keywords))
        for agg in ev.aggregators:
            embeds[ev.user][agg].add(ev.publisher)

    out: List[BidSet] = []
    for user in sorted(visits):
        profile = AnonymizedProfile.from_visits(pseudonym(user), visits[user])
        bids = [
            Bid(agg, bid_for_user(profile, advertisers, model, sites, currency_scale))
            for agg, sites in sorted(embeds[user].items())
        ]
        out.append(BidSet(user, tuple(b for b in bids if b.max_price > 0)))
    return out
