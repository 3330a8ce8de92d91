from decimal import Decimal

import pytest
from sqlalchemy import create_engine, text

from src.ledger import LedgerEntry, append_entries, load_entries, open_ledger, summarize
from src.models import ensure_schema


@pytest.fixture
def engine(tmp_path):
    eng = open_ledger(f"sqlite:///{tmp_path / 'db' / 'ledger.db'}")
    yield eng
    eng.dispose()


def test_open_ledger_creates_file_and_schema(tmp_path):
    eng = open_ledger(f"sqlite:///{tmp_path / 'nested' / 'ledger.db'}")
    try:
        assert (tmp_path / "nested" / "ledger.db").exists()
        # second open is a no-op on the schema
        open_ledger(f"sqlite:///{tmp_path / 'nested' / 'ledger.db'}").dispose()
        with eng.connect() as con:
            assert con.execute(text("SELECT COUNT(*) FROM ledger")).scalar_one() == 0
    finally:
        eng.dispose()


def test_schema_is_idempotent_and_indexed(tmp_path):
    eng = create_engine(f"sqlite:///{tmp_path / 'ledger.db'}", future=True)
    try:
        ensure_schema(eng)
        ensure_schema(eng)
        with eng.connect() as con:
            names = set(con.execute(text("SELECT name FROM sqlite_master WHERE tbl_name = 'ledger'")).scalars())
            cols = [row[1] for row in con.execute(text("PRAGMA table_info(ledger)"))]
        assert {"ledger", "idx_ledger_user", "idx_ledger_period"} <= names
        assert cols == ["id", "period", "user_id", "aggregator", "amount_micros", "pricing_mode", "created"]
    finally:
        eng.dispose()


def test_empty_ledger_summary(engine):
    summary = summarize(engine)
    assert summary.per_user == () and summary.total == 0 and summary.reconciles


def test_two_half_payments_sum_exactly(engine):
    n = append_entries(engine, [
        LedgerEntry(1, "alice", "b.com", Decimal("0.5"), "auction"),
        LedgerEntry(2, "alice", "b.com", Decimal("0.5"), "auction"),
    ])
    assert n == 2
    summary = summarize(engine)
    assert summary.per_user == (("alice", Decimal("1"), 2),)
    assert summary.total == Decimal("1") and summary.reconciles


def test_micro_amounts_do_not_drift(engine):
    append_entries(engine, [LedgerEntry(0, "bob", "c.com", Decimal("0.1"), "shapley") for _ in range(10)])
    append_entries(engine, [LedgerEntry(0, "carol", "c.com", Decimal("0.000001"), "shapley")])
    summary = summarize(engine)
    assert dict((u, t) for u, t, _ in summary.per_user) == {"bob": Decimal("1"), "carol": Decimal("0.000001")}
    assert summary.raw_total == Decimal("1.000001") and summary.reconciles


def test_load_entries_filters_by_user(engine):
    entries = [
        LedgerEntry(0, "alice", "b.com", Decimal("0.25"), "auction"),
        LedgerEntry(0, "bob", "b.com", Decimal("0.75"), "shapley"),
    ]
    append_entries(engine, entries)
    assert load_entries(engine) == entries
    assert load_entries(engine, "bob") == entries[1:]
    assert load_entries(engine, "nobody") == []


def test_append_nothing(engine):
    assert append_entries(engine, []) == 0


def test_entry_rounds_to_micros():
    assert LedgerEntry(0, "u", "a", Decimal("0.0000005"), "shapley").amount == 0
    assert LedgerEntry(0, "u", "a", Decimal("0.1234567"), "shapley").amount == Decimal("0.123457")


@pytest.mark.parametrize("kwargs", [
    {"amount": Decimal("-0.01")},
    {"period": -1},
    {"pricing_mode": "barter"},
])
def test_entry_validation(kwargs):
    base = {"period": 0, "user": "u", "aggregator": "a", "amount": Decimal(1), "pricing_mode": "auction"}
    with pytest.raises(ValueError):
        LedgerEntry(**{**base, **kwargs})


def test_corrupt_row_is_rejected_on_load(engine):
    append_entries(engine, [LedgerEntry(0, "alice", "b.com", Decimal(1), "auction")])
    with engine.begin() as con:
        con.execute(text("UPDATE ledger SET amount_micros = -5"))
    with pytest.raises(ValueError):
        summarize(engine)
