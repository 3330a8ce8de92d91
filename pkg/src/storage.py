# src/storage.py
"""
Line-delimited record files.

  trace.jsonl     {ts, user, publisher, aggregators[], keywords[]}
  bids.jsonl      {user, aggregator, max_price}
  outcomes.jsonl  {user, period, clearing_price, winners[], user_revenue}
  grants.jsonl    {period} header, then {user, aggregator, period}
  catalog.jsonl   {advertiser, keyword, cpc}
  whitelists/<user>.txt   one root domain per line

Money is written as a decimal string. Keys are sorted so equal data gives
byte-identical files.
"""
from __future__ import annotations

import json
import logging
from collections import defaultdict
from decimal import Decimal, InvalidOperation
from pathlib import Path
from typing import Any, Callable, Dict, Iterable, Iterator, List, Mapping, Optional, Set, Tuple, TypeVar

from .adoption import Trace, TraceEvent
from .auction import AuctionOutcome, Bid, BidSet
from .settings import lines_of
from .valuation import AdvertiserSpec

logger = logging.getLogger(__name__)

T = TypeVar("T")

__all__ = [
    "RecordError", "iter_records", "write_records", "read_trace", "write_trace", "read_bids", "write_bids",
    "read_outcomes", "write_outcomes", "read_grants", "read_grant_table", "write_grants", "read_catalog",
    "read_whitelists", "write_whitelist", "read_credentials",
]


class RecordError(ValueError):
    """A record file line that cannot be used; names the file and line."""

    def __init__(self, path: Path | str, lineno: int, msg: str):
        super().__init__(f"{path}:{lineno}: {msg}")
        self.path = str(path)
        self.lineno = lineno


# ----------------------------
# Generic jsonl
# ----------------------------
def iter_records(path: Path | str) -> Iterator[Tuple[int, Dict[str, Any]]]:
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"record file not found: {p}")
    with p.open("r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            s = line.strip()
            if not s or s.startswith("#"):
                continue
            try:
                rec = json.loads(s)
            except json.JSONDecodeError as e:
                raise RecordError(p, lineno, f"invalid JSON ({e.msg})") from None
            if not isinstance(rec, dict):
                raise RecordError(p, lineno, "record must be a JSON object")
            yield lineno, rec


def write_records(path: Path | str, records: Iterable[Mapping[str, Any]]) -> int:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    n = 0
    with p.open("w", encoding="utf-8", newline="\n") as f:
        for rec in records:
            f.write(json.dumps(rec, sort_keys=True, ensure_ascii=False, default=str) + "\n")
            n += 1
    return n


_REQUIRED = object()


def _field(rec: Mapping[str, Any], key: str, path, lineno: int, conv: Callable[[Any], T],
           default: Any = _REQUIRED) -> T:
    if key not in rec:
        if default is not _REQUIRED:
            return default
        raise RecordError(path, lineno, f"missing field {key!r}")
    try:
        return conv(rec[key])
    except (TypeError, ValueError, InvalidOperation) as e:
        raise RecordError(path, lineno, f"bad {key!r}: {rec[key]!r} ({e})") from None


def _money(x: Any) -> Decimal:
    if isinstance(x, bool) or not isinstance(x, (str, int, float)):
        raise TypeError("expected a decimal string or number")
    d = Decimal(str(x))
    if not d.is_finite() or d < 0:
        raise ValueError("must be a finite amount >= 0")
    return d


def _name(x: Any) -> str:
    s = str(x).strip() if x is not None else ""
    if not s:
        raise ValueError("must be non-empty")
    return s


def _str_list(x: Any) -> List[str]:
    if not isinstance(x, list):
        raise TypeError("expected a list")
    return [str(v).strip() for v in x if str(v).strip()]


def _count(x: Any) -> int:
    if isinstance(x, bool):
        raise TypeError("expected an integer")
    n = int(x)
    if n < 0 or n != x:
        raise ValueError("must be a whole number >= 0")
    return n


# ----------------------------
# Bids / outcomes / grants
# ----------------------------
def read_bids(path: Path | str) -> List[BidSet]:
    by_user: Dict[str, Dict[str, Bid]] = defaultdict(dict)
    for lineno, rec in iter_records(path):
        user = _field(rec, "user", path, lineno, _name)
        agg = _field(rec, "aggregator", path, lineno, _name)
        price = _field(rec, "max_price", path, lineno, _money)
        if agg in by_user[user]:
            raise RecordError(path, lineno, f"second bid from {agg!r} on user {user!r}")
        by_user[user][agg] = Bid(agg, price)
    return [BidSet(u, tuple(bids[a] for a in sorted(bids))) for u, bids in sorted(by_user.items())]


def write_bids(path: Path | str, bid_sets: Iterable[BidSet]) -> int:
    return write_records(path, (
        {"user": bs.user, "aggregator": b.aggregator, "max_price": str(b.max_price)}
        for bs in bid_sets for b in bs.bids
    ))


def write_outcomes(path: Path | str, outcomes: Iterable[AuctionOutcome]) -> int:
    return write_records(path, (
        {
            "user": o.user,
            "period": o.period,
            "clearing_price": str(o.clearing_price),
            "winners": list(o.winners),
            "user_revenue": str(o.user_revenue),
        }
        for o in outcomes
    ))


def read_outcomes(path: Path | str) -> List[AuctionOutcome]:
    out: List[AuctionOutcome] = []
    for lineno, rec in iter_records(path):
        out.append(AuctionOutcome(
            user=_field(rec, "user", path, lineno, _name),
            clearing_price=_field(rec, "clearing_price", path, lineno, _money),
            winners=tuple(_field(rec, "winners", path, lineno, _str_list)),
            period=_field(rec, "period", path, lineno, _count),
        ))
    return out


def grants_from_outcomes(outcomes: Iterable[AuctionOutcome]) -> List[Tuple[str, str, int]]:
    return [(o.user, a, o.period) for o in outcomes for a in o.winners]


def write_grants(path: Path | str, grants: Iterable[Tuple[str, str, int]], period: Optional[int] = None) -> int:
    """Grant rows, preceded by a {period} header so an empty table still names its period."""
    header = [] if period is None else [{"period": int(period)}]
    rows = [{"user": u, "aggregator": a, "period": int(p)} for u, a, p in sorted(grants)]
    return write_records(path, header + rows) - len(header)


def read_grant_table(path: Path | str) -> Tuple[Optional[int], List[Tuple[str, str, int]]]:
    """(header period or None, grant rows); a missing file is an empty table with no period."""
    if not Path(path).exists():
        return None, []
    period: Optional[int] = None
    rows: List[Tuple[str, str, int]] = []
    for lineno, rec in iter_records(path):
        if set(rec) == {"period"}:
            if period is not None or rows:
                raise RecordError(path, lineno, "period header must come first and only once")
            period = _field(rec, "period", path, lineno, _count)
            continue
        rows.append((
            _field(rec, "user", path, lineno, _name),
            _field(rec, "aggregator", path, lineno, _name),
            _field(rec, "period", path, lineno, _count),
        ))
    return period, rows


def read_grants(path: Path | str) -> List[Tuple[str, str, int]]:
    return read_grant_table(path)[1]


# ----------------------------
# Catalog
# ----------------------------
def read_catalog(path: Path | str) -> List[AdvertiserSpec]:
    by_adv: Dict[str, Dict[str, Decimal]] = defaultdict(dict)
    for lineno, rec in iter_records(path):
        adv = _field(rec, "advertiser", path, lineno, _name)
        kw = _field(rec, "keyword", path, lineno, _name)
        cpc = _field(rec, "cpc", path, lineno, _money)
        by_adv[adv][kw] = max(cpc, by_adv[adv].get(kw, cpc))
    specs = [AdvertiserSpec(a, kws) for a, kws in sorted(by_adv.items())]
    logger.debug("Catalog %s: %d advertisers", path, len(specs))
    return specs


# ----------------------------
# Whitelists / credentials
# ----------------------------
def read_whitelists(directory: Path | str) -> Dict[str, Set[str]]:
    """whitelists/<user>.txt -> {user: {root domains}}; a missing directory means nobody whitelisted."""
    d = Path(directory)
    if not d.is_dir():
        return {}
    return {p.stem: set(lines_of(p)) for p in sorted(d.glob("*.txt"))}


def write_whitelist(directory: Path | str, user: str, domains: Iterable[str]) -> Path:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    p = d / f"{user}.txt"
    p.write_text("".join(f"{x}\n" for x in sorted(set(domains))), encoding="utf-8")
    return p


def read_credentials(path: Path | str) -> Optional[Dict[str, str]]:
    """user:password lines; None when the file does not exist."""
    p = Path(path)
    if not p.exists():
        return None
    creds: Dict[str, str] = {}
    for lineno, line in enumerate(lines_of(p), start=1):
        user, sep, password = line.partition(":")
        if not sep or not user.strip():
            logger.warning("%s: skipping malformed credentials entry %d", p, lineno)
            continue
        creds[user.strip()] = password
    return creds


# ----------------------------
# Traces
# ----------------------------
def _timestamp(x: Any) -> float:
    if isinstance(x, bool):
        raise TypeError("expected a number")
    ts = float(x)
    if ts != ts or ts < 0:
        raise ValueError("must be a number >= 0")
    return ts


def read_trace(path: Path | str) -> Trace:
    events: List[TraceEvent] = []
    for lineno, rec in iter_records(path):
        events.append(TraceEvent(
            ts=_field(rec, "ts", path, lineno, _timestamp),
            user=_field(rec, "user", path, lineno, _name),
            publisher=_field(rec, "publisher", path, lineno, _name),
            aggregators=tuple(sorted(set(_field(rec, "aggregators", path, lineno, _str_list, [])))),
            keywords=tuple(_field(rec, "keywords", path, lineno, _str_list, [])),
        ))
    # stable sort keeps file order among equal timestamps
    events.sort(key=lambda e: e.ts)
    logger.info("Loaded trace %s: %d events", path, len(events))
    return Trace(events)


def write_trace(path: Path | str, trace: Trace) -> int:
    return write_records(path, (
        {
            "ts": e.ts,
            "user": e.user,
            "publisher": e.publisher,
            "aggregators": list(e.aggregators),
            "keywords": list(e.keywords),
        }
        for e in trace.events
    ))
