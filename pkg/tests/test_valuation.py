import itertools
import random
from decimal import Decimal

import pytest

from src.adoption import TraceEvent
from src.valuation import (AdvertiserSpec, Allocation, AnonymizedProfile, ClickModel, allocation_value,
                           bid_for_user, brute_force_allocate, derive_intents, greedy_allocate, normalize_keyword,
                           pseudonym, relevant_keywords, valuate_trace)


def profile(**sites):
    """profile(a_com=(2, ["k1"])) -> visits {a.com: 2}, keywords {a.com: {k1}}"""
    visits = {s.replace("_", "."): n for s, (n, _) in sites.items()}
    kws = {s.replace("_", "."): frozenset(k) for s, (_, k) in sites.items()}
    return AnonymizedProfile("p1", visits, kws)


def test_normalize_keyword():
    assert normalize_keyword("  Running  Shoes ") == "running shoes"
    assert normalize_keyword("Ｔｒａｖｅｌ") == "travel"
    assert normalize_keyword("e–bikes") == "e-bikes"
    assert normalize_keyword("") == ""


def test_pseudonym_hides_user():
    assert pseudonym("alice") == pseudonym("alice")
    assert pseudonym("alice") != pseudonym("bob")
    assert "alice" not in pseudonym("alice")


def test_relevant_keywords():
    assert relevant_keywords(AnonymizedProfile("p")) == frozenset()
    p = profile(j1_com=(1, ["k1"]), j2_com=(3, ["k1", "k2"]), j3_com=(0, ["k3"]))
    assert relevant_keywords(p) == {"k1", "k2"}


def test_profile_restrict_and_from_visits():
    p = AnonymizedProfile.from_visits("p", [("a.com", ["x"]), ("a.com", ["y"]), ("b.com", ["z"])])
    assert p.visits == {"a.com": 2, "b.com": 1}
    assert p.site_keywords["a.com"] == {"x", "y"}
    assert p.restrict(["b.com"]).total() == 1
    with pytest.raises(ValueError):
        AnonymizedProfile("p", {"a.com": -1})


def test_advertiser_spec_validation():
    spec = AdvertiserSpec("adv", {"Shoes": Decimal("0.5"), "shoes": Decimal("0.7")})
    assert spec.cpc == {"shoes": Decimal("0.7")}
    with pytest.raises(ValueError):
        AdvertiserSpec("adv", {})
    with pytest.raises(ValueError):
        AdvertiserSpec("adv", {"k": Decimal("-1")})


def test_click_model_bounds():
    with pytest.raises(ValueError):
        ClickModel(1.5)


def test_allocation_value_single_advertiser():
    adv = [AdvertiserSpec("a1", {"k": Decimal(1)})]
    p = profile(s_com=(2, ["k"]))
    assert allocation_value(Allocation({"a1": 2}), adv, ClickModel(0.5), p) == pytest.approx(0.75)
    assert allocation_value(Allocation({"a1": 2}), adv, ClickModel(0.0), p) == 0
    assert allocation_value(Allocation({}), adv, ClickModel(0.5), p) == 0


def test_allocation_value_rejects_unmatched_advertiser():
    adv = [AdvertiserSpec("a1", {"k": Decimal(1)}), AdvertiserSpec("a2", {"other": Decimal(1)})]
    with pytest.raises(ValueError):
        allocation_value(Allocation({"a2": 1}), adv, ClickModel(0.5), profile(s_com=(1, ["k"])))


def test_greedy_splits_slots():
    adv = [AdvertiserSpec("a1", {"k": Decimal(1)}), AdvertiserSpec("a2", {"k": Decimal(1)})]
    p = profile(s_com=(2, ["k"]))
    alloc = greedy_allocate(2, adv, p, ClickModel(0.5))
    assert alloc.slots == {"a1": 1, "a2": 1}
    assert allocation_value(alloc, adv, ClickModel(0.5), p) == pytest.approx(1.0)


def test_greedy_prefers_higher_cpc():
    adv = [AdvertiserSpec("cheap", {"k": Decimal(1)}), AdvertiserSpec("dear", {"k": Decimal(2)})]
    alloc = greedy_allocate(1, adv, profile(s_com=(1, ["k"])), ClickModel(0.3))
    assert alloc.slots == {"dear": 1}


def test_greedy_edge_cases():
    adv = [AdvertiserSpec("a1", {"k": Decimal(1)})]
    assert greedy_allocate(0, adv, profile(s_com=(1, ["k"])), ClickModel(0.5)).slots == {}
    assert greedy_allocate(3, adv, profile(s_com=(3, ["nope"])), ClickModel(0.5)).slots == {}
    with pytest.raises(ValueError):
        greedy_allocate(-1, adv, profile(), ClickModel(0.5))


def test_greedy_matches_brute_force():
    rng = random.Random(1234)
    keywords = ["k1", "k2", "k3", "k4"]
    for n_adv, slots, pi in itertools.product(range(1, 6), range(0, 9), (0.05, 0.3, 0.5, 0.9)):
        adv = [
            AdvertiserSpec(f"a{i}", {k: Decimal(rng.randint(1, 300)) / 100
                                     for k in rng.sample(keywords, rng.randint(1, 3))})
            for i in range(n_adv)
        ]
        p = profile(s1_com=(slots, rng.sample(keywords, 2)), s2_com=(1, rng.sample(keywords, 1)))
        model = ClickModel(pi)
        greedy = allocation_value(greedy_allocate(slots, adv, p, model), adv, model, p)
        brute = allocation_value(brute_force_allocate(slots, adv, p, model), adv, model, p)
        assert greedy == pytest.approx(brute, rel=1e-12, abs=1e-12)


def test_brute_force_caps():
    adv = [AdvertiserSpec(f"a{i}", {"k": Decimal(1)}) for i in range(6)]
    with pytest.raises(ValueError):
        brute_force_allocate(2, adv, profile(s_com=(2, ["k"])), ClickModel(0.5))
    with pytest.raises(ValueError):
        brute_force_allocate(9, adv[:1], profile(s_com=(9, ["k"])), ClickModel(0.5))


def test_allocation_value_monotone():
    adv = [AdvertiserSpec("a1", {"k": Decimal(2)}), AdvertiserSpec("a2", {"k": Decimal(1)})]
    p = profile(s_com=(10, ["k"]))
    values = [allocation_value(greedy_allocate(n, adv, p, ClickModel(0.2)), adv, ClickModel(0.2), p)
              for n in range(10)]
    assert values == sorted(values)
    by_pi = [allocation_value(greedy_allocate(4, adv, p, ClickModel(pi)), adv, ClickModel(pi), p)
             for pi in (0.1, 0.2, 0.5, 0.9)]
    assert by_pi == sorted(by_pi)


def test_bid_for_user():
    adv = [AdvertiserSpec("a1", {"k": Decimal(1)})]
    p = profile(s_com=(2, ["k"]), t_com=(5, ["other"]))
    model = ClickModel(0.5)
    assert bid_for_user(p, adv, model, ["s.com"]) == Decimal("0.75")
    assert bid_for_user(p, adv, model, ["t.com"]) == 0
    doubled = bid_for_user(p, [a.scaled(2) for a in adv], model, ["s.com"])
    assert doubled == 2 * bid_for_user(p, adv, model, ["s.com"])
    assert bid_for_user(p, adv, model, ["s.com"], currency_scale=Decimal(10)) == Decimal("7.5")


def test_derive_intents(advertisers):
    full = profile(a_com=(4, ["running"]), b_com=(2, ["travel"]))
    visible = {"x.net": full.restrict(["a.com"]), "y.net": full, "z.net": full.restrict([])}
    ip = derive_intents(full, visible, 0.5, advertisers, ClickModel(0.1))
    assert ip.expl > 1
    assert 1 < ip.impl["x.net"] < ip.expl
    assert ip.impl["y.net"] == ip.expl
    assert ip.impl["z.net"] == 1
    flat = derive_intents(full, visible, 0.0, advertisers, ClickModel(0.1))
    assert flat.expl == 1 and set(flat.impl.values()) == {1}
    with pytest.raises(ValueError):
        derive_intents(full, visible, -1, advertisers, ClickModel(0.1))


def test_derive_intents_monotone_in_visible_sites(advertisers):
    full = profile(a_com=(4, ["running"]), b_com=(2, ["travel"]), c_com=(1, ["shoes"]))
    model = ClickModel(0.1)
    one = derive_intents(full, {"x": full.restrict(["a.com"])}, 0.5, advertisers, model).impl["x"]
    two = derive_intents(full, {"x": full.restrict(["a.com", "b.com"])}, 0.5, advertisers, model).impl["x"]
    assert one <= two


def test_valuate_trace_respects_whitelists(advertisers):
    events = [
        TraceEvent(1.0, "alice", "a.com", ("b.com", "c.com"), ("running",)),
        TraceEvent(2.0, "alice", "d.com", ("c.com",), ("travel",)),
        TraceEvent(3.0, "bob", "a.com", ("b.com",), ("running",)),
    ]
    model = ClickModel(0.1)
    sets = valuate_trace(events, advertisers, model, {"alice": {"a.com"}})
    assert [s.user for s in sets] == ["alice"]
    assert sorted(b.aggregator for b in sets[0].bids) == ["b.com", "c.com"]
    everyone = valuate_trace(events, advertisers, model)
    assert [s.user for s in everyone] == ["alice", "bob"]
    c_bid = {b.aggregator: b.max_price for b in everyone[0].bids}["c.com"]
    b_bid = {b.aggregator: b.max_price for b in everyone[0].bids}["b.com"]
    assert c_bid > b_bid
