# src/models.py
from sqlalchemy import text

# --- Tables ---
# Append-only: amounts are integer micro-units, one row per (period, user, aggregator) payment.
# {id} is the dialect's auto-increment key; ordering by id is insertion order.
DDL_LEDGER = """
CREATE TABLE IF NOT EXISTS ledger (
  id             {id},
  period         INTEGER      NOT NULL,
  user_id        VARCHAR(255) NOT NULL,
  aggregator     VARCHAR(255) NOT NULL,
  amount_micros  BIGINT       NOT NULL,
  pricing_mode   VARCHAR(16)  NOT NULL,
  created        TIMESTAMP WITH TIME ZONE NOT NULL DEFAULT CURRENT_TIMESTAMP
);
"""

ID_COLUMN = {
    "postgresql": "BIGSERIAL PRIMARY KEY",
    "sqlite": "INTEGER PRIMARY KEY AUTOINCREMENT",
}

# --- Indexes (idempotent) ---
IDX_SQL = [
    "CREATE INDEX IF NOT EXISTS idx_ledger_user ON ledger (user_id);",
    "CREATE INDEX IF NOT EXISTS idx_ledger_period ON ledger (period);",
]


def ensure_schema(engine) -> None:
    """Create tables and indexes if they do not exist (idempotent)."""
    id_col = ID_COLUMN.get(engine.dialect.name, "INTEGER PRIMARY KEY")
    with engine.begin() as con:
        con.execute(text(DDL_LEDGER.format(id=id_col)))
        for stmt in IDX_SQL:
            con.execute(text(stmt))
