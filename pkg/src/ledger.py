# src/ledger.py
"""
Earnings ledger: every payment an aggregator owes a user for a period.

Rows are only ever inserted. Amounts go in as integer micro-units so the
per-user totals and the grand total reconcile exactly.
"""
from __future__ import annotations

import logging
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Tuple

from sqlalchemy import create_engine, text
from sqlalchemy.engine import Engine

from .engine import Money, from_micros, to_micros, to_money
from .models import ensure_schema

logger = logging.getLogger(__name__)

PRICING_MODES = ("shapley", "auction")

__all__ = ["LedgerEntry", "LedgerSummary", "open_ledger", "append_entries", "load_entries", "summarize"]

# ---------- SQL ----------
INSERT_SQL = text("""
INSERT INTO ledger (period, user_id, aggregator, amount_micros, pricing_mode)
VALUES (:period, :user_id, :aggregator, :amount_micros, :pricing_mode)
""")

SELECT_SQL = """
SELECT period, user_id, aggregator, amount_micros, pricing_mode
FROM ledger {where}
ORDER BY id
"""

TOTAL_SQL = text("SELECT COALESCE(SUM(amount_micros), 0) FROM ledger")


@dataclass(frozen=True)
class LedgerEntry:
    period: int
    user: str
    aggregator: str
    amount: Money
    pricing_mode: str

    def __post_init__(self) -> None:
        object.__setattr__(self, "amount", to_money(self.amount))
        if self.amount < 0:
            raise ValueError(f"ledger amount must be >= 0, got {self.amount}")
        if self.period < 0:
            raise ValueError(f"period must be >= 0, got {self.period}")
        if self.pricing_mode not in PRICING_MODES:
            raise ValueError(f"unknown pricing mode {self.pricing_mode!r}")


@dataclass(frozen=True)
class LedgerSummary:
    per_user: Tuple[Tuple[str, Money, int], ...]
    total: Money
    raw_total: Money

    @property
    def reconciles(self) -> bool:
        return sum((t for _, t, _ in self.per_user), to_money(0)) == self.raw_total == self.total


def open_ledger(url: str) -> Engine:
    """Engine for `url`, creating the SQLite parent directory and the schema when missing."""
    if url.startswith("sqlite:///") and not url.startswith("sqlite:///:memory:"):
        Path(url[len("sqlite:///"):]).parent.mkdir(parents=True, exist_ok=True)
    engine = create_engine(url, pool_pre_ping=True, future=True)
    ensure_schema(engine)
    return engine


def append_entries(engine: Engine, entries: Iterable[LedgerEntry]) -> int:
    rows = [
        {
            "period": int(e.period),
            "user_id": e.user,
            "aggregator": e.aggregator,
            "amount_micros": to_micros(e.amount),
            "pricing_mode": e.pricing_mode,
        }
        for e in entries
    ]
    if not rows:
        return 0
    with engine.begin() as con:
        con.execute(INSERT_SQL, rows)
    logger.info("Ledger: appended %d entries", len(rows))
    return len(rows)


def load_entries(engine: Engine, user: Optional[str] = None) -> List[LedgerEntry]:
    if user is None:
        q, params = text(SELECT_SQL.format(where="")), {}
    else:
        q, params = text(SELECT_SQL.format(where="WHERE user_id = :user")), {"user": user}
    with engine.connect() as con:
        return [LedgerEntry(p, u, a, from_micros(m), mode) for p, u, a, m, mode in con.execute(q, params)]


def summarize(engine: Engine) -> LedgerSummary:
    """Per-user totals from the entries, checked against the database's own SUM."""
    micros: Dict[str, int] = defaultdict(int)
    counts: Dict[str, int] = defaultdict(int)
    for e in load_entries(engine):
        micros[e.user] += to_micros(e.amount)
        counts[e.user] += 1
    with engine.connect() as con:
        raw = con.execute(TOTAL_SQL).scalar_one()
    per_user = tuple((u, from_micros(micros[u]), counts[u]) for u in sorted(micros))
    summary = LedgerSummary(per_user, from_micros(sum(micros.values())), from_micros(int(raw)))
    if not summary.reconciles:
        logger.error("Ledger totals do not reconcile: entries=%s sum=%s", summary.total, summary.raw_total)
    return summary
