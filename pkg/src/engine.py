# src/engine.py
"""
Core value types and revenue primitives shared by every other module.

CPM = ron x tqm x intent. The intent coefficient is 1 when nothing is known
about the user, `impl` when an aggregator tracks covertly and `expl` when the
user sells their browsing through the market.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from decimal import ROUND_DOWN, ROUND_HALF_EVEN, Decimal
from fractions import Fraction
from numbers import Real
from types import MappingProxyType
from typing import Mapping, Optional, Union

Money = Decimal
Number = Union[int, float, Fraction, Decimal]

MICRO = Decimal("0.000001")
MICROS_PER_UNIT = 1_000_000
PER_MILLE = Decimal(1000)

__all__ = [
    "Money", "MICRO", "to_money", "floor_money", "to_micros", "from_micros", "as_decimal",
    "CpmParams", "IntentProfile", "LiftKind", "ConsentLift", "MarketType", "MarketConfig",
    "cpm", "consent_lift",
]


# ----------------------------
# Money
# ----------------------------
def as_decimal(x: Number) -> Decimal:
    """Exact Decimal for ints/Decimals/str; floats go through repr so 0.1 stays 0.1."""
    if isinstance(x, Decimal):
        return x
    if isinstance(x, Fraction):
        return Decimal(x.numerator) / Decimal(x.denominator)
    if isinstance(x, float):
        if not math.isfinite(x):
            raise ValueError(f"non-finite amount {x!r}")
        return Decimal(repr(float(x)))
    return Decimal(x)


def to_money(x: Number) -> Money:
    return as_decimal(x).quantize(MICRO, rounding=ROUND_HALF_EVEN)


def floor_money(x: Number) -> Money:
    return as_decimal(x).quantize(MICRO, rounding=ROUND_DOWN)


def to_micros(amount: Money) -> int:
    return int(to_money(amount) * MICROS_PER_UNIT)


def from_micros(micros: int) -> Money:
    return (Decimal(int(micros)) / MICROS_PER_UNIT).quantize(MICRO)


# ----------------------------
# Domain types
# ----------------------------
@dataclass(frozen=True)
class CpmParams:
    ron: Decimal
    tqm: Decimal

    def __post_init__(self) -> None:
        object.__setattr__(self, "ron", as_decimal(self.ron))
        object.__setattr__(self, "tqm", as_decimal(self.tqm))
        if self.ron < 0:
            raise ValueError(f"ron must be >= 0, got {self.ron}")
        if self.tqm < 0:
            raise ValueError(f"tqm must be >= 0, got {self.tqm}")

    def scale(self, impressions: int) -> Decimal:
        """Money earned by `impressions` impressions at intent 1."""
        return self.ron * self.tqm * Decimal(int(impressions)) / PER_MILLE


@dataclass(frozen=True)
class IntentProfile:
    """Explicit and per-aggregator implicit intent for one user. Unlisted aggregators see nothing (impl 1)."""
    expl: Real
    impl: Mapping[str, Real] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not self.expl >= 1:
            raise ValueError(f"explicit intent must be >= 1, got {self.expl}")
        for agg, val in self.impl.items():
            if not 1 <= val <= self.expl:
                raise ValueError(
                    f"implicit intent for {agg!r} must lie in [1, expl={self.expl}], got {val}"
                )
        object.__setattr__(self, "impl", MappingProxyType(dict(self.impl)))

    def impl_for(self, aggregator: str) -> Real:
        return self.impl.get(aggregator, 1)


class LiftKind(enum.Enum):
    FINITE = "finite"
    INFINITE = "infinite"
    UNDEFINED = "undefined"


@dataclass(frozen=True)
class ConsentLift:
    kind: LiftKind
    value: Optional[Real] = None

    def exceeds(self, threshold: Real) -> bool:
        if self.kind is LiftKind.INFINITE:
            return True
        if self.kind is LiftKind.UNDEFINED:
            return False
        return self.value > threshold

    def __str__(self) -> str:
        if self.kind is LiftKind.FINITE:
            return f"{float(self.value):g}"
        return "inf" if self.kind is LiftKind.INFINITE else "undefined"


class MarketType(str, enum.Enum):
    MEDIATED = "mediated"
    DIRECT = "direct"
    DNT_MEDIATED = "dnt_mediated"
    DNT_DIRECT = "dnt_direct"

    @classmethod
    def parse(cls, value: Union[str, "MarketType"]) -> "MarketType":
        if isinstance(value, MarketType):
            return value
        key = str(value).strip().lower().replace("-", "_").replace(" ", "_")
        try:
            return cls(key)
        except ValueError:
            raise ValueError(
                f"unknown market type {value!r}; expected one of {', '.join(m.value for m in cls)}"
            ) from None

    @property
    def mediated(self) -> bool:
        return self in (MarketType.MEDIATED, MarketType.DNT_MEDIATED)

    @property
    def dnt(self) -> bool:
        return self in (MarketType.DNT_MEDIATED, MarketType.DNT_DIRECT)


@dataclass(frozen=True)
class MarketConfig:
    alpha: Decimal
    market_type: MarketType
    epsilon: float
    impressions_per_period: int = 1000
    currency_scale: Decimal = Decimal(1)

    def __post_init__(self) -> None:
        object.__setattr__(self, "alpha", as_decimal(self.alpha))
        object.__setattr__(self, "currency_scale", as_decimal(self.currency_scale))
        object.__setattr__(self, "market_type", MarketType.parse(self.market_type))
        if not 0 <= self.alpha <= 1:
            raise ValueError(f"alpha must lie in [0, 1], got {self.alpha}")
        if not self.epsilon > 0:
            raise ValueError(f"epsilon must be > 0, got {self.epsilon}")
        if self.impressions_per_period < 0:
            raise ValueError(f"impressions_per_period must be >= 0, got {self.impressions_per_period}")
        if self.currency_scale < 0:
            raise ValueError(f"currency_scale must be >= 0, got {self.currency_scale}")

    @classmethod
    def from_cfg(cls, cfg: dict) -> "MarketConfig":
        return cls(
            alpha=as_decimal(str(cfg["alpha"])),
            market_type=MarketType.parse(cfg["market_type"]),
            epsilon=float(cfg["epsilon"]),
            impressions_per_period=int(cfg["impressions_per_period"]),
            currency_scale=as_decimal(str(cfg["currency_scale"])),
        )


# ----------------------------
# Operations
# ----------------------------
def cpm(params: CpmParams, intent: Number) -> Money:
    """Price per mille impressions at the given intent coefficient."""
    if not intent >= 1:
        raise ValueError(f"intent must be >= 1, got {intent}")
    return params.ron * params.tqm * as_decimal(intent)


def consent_lift(expl: Real, impl: Real) -> ConsentLift:
    """(expl - 1) / (impl - 1), with explicit values for the degenerate cases."""
    if not impl >= 1:
        raise ValueError(f"implicit intent must be >= 1, got {impl}")
    if expl < impl:
        raise ValueError(f"explicit intent {expl} is below implicit intent {impl}")
    if impl == 1:
        return ConsentLift(LiftKind.INFINITE) if expl > 1 else ConsentLift(LiftKind.UNDEFINED)
    return ConsentLift(LiftKind.FINITE, (expl - 1) / (impl - 1))
