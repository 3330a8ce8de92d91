from decimal import Decimal
from fractions import Fraction

import pytest

from src.engine import (CpmParams, IntentProfile, LiftKind, MarketConfig, MarketType, as_decimal, consent_lift,
                        cpm, floor_money, from_micros, to_micros, to_money)


def test_money_quantises_to_micros():
    assert to_money("0.1234565") == Decimal("0.123456")  # half-even
    assert to_money("0.1234575") == Decimal("0.123458")
    assert floor_money("0.9999999") == Decimal("0.999999")
    assert to_money(0.1) == Decimal("0.100000")
    assert as_decimal(Fraction(1, 4)) == Decimal("0.25")


def test_micros_conversion():
    assert to_micros(Decimal("1.5")) == 1_500_000
    assert from_micros(1) == Decimal("0.000001")
    assert from_micros(to_micros(Decimal("12.345678"))) == Decimal("12.345678")


def test_non_finite_amount_rejected():
    with pytest.raises(ValueError):
        as_decimal(float("nan"))


def test_cpm_scales_with_intent():
    params = CpmParams(Decimal("2.0"), Decimal("0.5"))
    assert cpm(params, 1) == Decimal("1.00")
    assert cpm(params, 3) == Decimal("3.00")
    assert params.scale(1000) == Decimal("1")
    with pytest.raises(ValueError):
        cpm(params, 0.5)


def test_cpm_params_reject_negative():
    with pytest.raises(ValueError):
        CpmParams(Decimal("-1"), Decimal(1))


def test_intent_profile_bounds():
    ip = IntentProfile(3.0, {"b.com": 1.5})
    assert ip.impl_for("b.com") == 1.5
    assert ip.impl_for("unseen.net") == 1
    with pytest.raises(ValueError):
        IntentProfile(0.9)
    with pytest.raises(ValueError):
        IntentProfile(2.0, {"b.com": 2.5})


@pytest.mark.parametrize("expl,impl,kind,value", [
    (3, 2, LiftKind.FINITE, 2),
    (3, 1, LiftKind.INFINITE, None),
    (1, 1, LiftKind.UNDEFINED, None),
    (Fraction(5, 2), Fraction(3, 2), LiftKind.FINITE, 3),
])
def test_consent_lift(expl, impl, kind, value):
    lift = consent_lift(expl, impl)
    assert lift.kind is kind
    if value is not None:
        assert lift.value == value


def test_consent_lift_rejects_inverted_intents():
    with pytest.raises(ValueError):
        consent_lift(2, 3)
    with pytest.raises(ValueError):
        consent_lift(2, 0.5)


def test_lift_exceeds():
    assert consent_lift(3, 1).exceeds(1000)
    assert not consent_lift(1, 1).exceeds(0)
    assert consent_lift(4, 2).exceeds(Fraction(3, 2))
    assert not consent_lift(3, 2).exceeds(2)
    assert str(consent_lift(4, 2)) == "3"
    assert str(consent_lift(3, 1)) == "inf"


@pytest.mark.parametrize("raw,expected", [
    ("mediated", MarketType.MEDIATED),
    ("dnt-mediated", MarketType.DNT_MEDIATED),
    ("DNT_direct", MarketType.DNT_DIRECT),
    (MarketType.DIRECT, MarketType.DIRECT),
])
def test_market_type_parse(raw, expected):
    assert MarketType.parse(raw) is expected


def test_market_type_flags():
    assert MarketType.DNT_MEDIATED.mediated and MarketType.DNT_MEDIATED.dnt
    assert not MarketType.DIRECT.mediated and not MarketType.DIRECT.dnt
    with pytest.raises(ValueError):
        MarketType.parse("auction-house")


def test_market_config_validation():
    cfg = MarketConfig("0.7", "direct", 1.0)
    assert cfg.alpha == Decimal("0.7")
    assert cfg.market_type is MarketType.DIRECT
    with pytest.raises(ValueError):
        MarketConfig("1.5", "direct", 1.0)
    with pytest.raises(ValueError):
        MarketConfig("0.5", "direct", 0.0)


def test_market_config_from_cfg():
    cfg = MarketConfig.from_cfg({"alpha": 0.7, "market_type": "dnt-direct", "epsilon": 2.0,
                                 "impressions_per_period": 500, "currency_scale": "1.0"})
    assert cfg.alpha == Decimal("0.7")
    assert cfg.market_type is MarketType.DNT_DIRECT
    assert cfg.impressions_per_period == 500
