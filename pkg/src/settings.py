# src/settings.py
from __future__ import annotations

import os
import logging
from pathlib import Path
from typing import Any, Dict, List

import yaml

logger = logging.getLogger(__name__)

ROOT = Path(__file__).resolve().parents[1]

# --- Config path (can be overridden via MARKET_YAML env) ---
MARKET_YAML: str = os.getenv("MARKET_YAML", str(ROOT / "config" / "market.yaml"))

MARKET_TYPES = ("mediated", "direct", "dnt_mediated", "dnt_direct")

# Documented keys and their defaults. Anything not listed here is ignored.
DEFAULTS: Dict[str, Any] = {
    "market_type": "mediated",
    "alpha": 0.7,
    "epsilon": 1.0,
    "beta": 0.5,
    "pi_click": 0.05,
    "ron": "1.0",
    "tqm": "1.0",
    "impressions_per_period": 1000,
    "currency_scale": "1.0",
    "period_days": 3.0,
    "round_cap": 50,
    "seed": 7,
    "catalog_path": "config/catalog.jsonl",
    "cdn_allowlist_path": "config/cdn_allowlist.txt",
    "state_dir": "state",
    "ledger_url": "sqlite:///state/ledger.db",
    "proxy_listen": "127.0.0.1:8899",
    "proxy_timeout": 20.0,
    "proxy_connect_retries": 1,
    "trace_users": 1000,
    "trace_publishers": 200,
    "trace_aggregators": 50,
    "trace_events": 20000,
    "trace_days": 30.0,
    "popularity_skew": 1.1,
    "embedding_skew": 1.2,
    "max_embedded": 4,
    "trace_ubiquitous": 1,
}


# ----------------------------
# Small sanitization utilities
# ----------------------------
def _as_float(raw: dict, key: str, lo: float | None = None, hi: float | None = None,
              strict_lo: bool = False) -> float:
    default = float(DEFAULTS[key])
    try:
        val = float(raw.get(key, default))
    except (TypeError, ValueError):
        logger.warning("%s=%r invalid; defaulting to %s.", key, raw.get(key), default)
        return default
    too_low = lo is not None and (val <= lo if strict_lo else val < lo)
    if too_low or (hi is not None and val > hi):
        logger.warning("%s=%r out of range; defaulting to %s.", key, val, default)
        return default
    return val


def _as_int(raw: dict, key: str, lo: int | None = None) -> int:
    default = int(DEFAULTS[key])
    try:
        val = int(raw.get(key, default))
    except (TypeError, ValueError):
        logger.warning("%s=%r invalid; defaulting to %d.", key, raw.get(key), default)
        return default
    if lo is not None and val < lo:
        logger.warning("%s=%d below %d; defaulting to %d.", key, val, lo, default)
        return default
    return val


def _as_decimal_str(raw: dict, key: str) -> str:
    """Money-like values stay strings so Decimal sees the literal, not a float."""
    default = str(DEFAULTS[key])
    val = str(raw.get(key, default)).strip()
    try:
        if float(val) < 0:
            raise ValueError(val)
    except ValueError:
        logger.warning("%s=%r invalid; defaulting to %s.", key, val, default)
        return default
    return val


def _as_str(raw: dict, key: str) -> str:
    val = raw.get(key, DEFAULTS[key])
    s = str(val).strip() if val is not None else ""
    return s or str(DEFAULTS[key])


def normalize_market_type(value: Any) -> str:
    s = str(value or "").strip().lower().replace("-", "_").replace(" ", "_")
    if s not in MARKET_TYPES:
        raise ValueError(f"unknown market type {value!r}; expected one of {', '.join(MARKET_TYPES)}")
    return s


def _as_mapping_str(x: Any, label: str) -> Dict[str, str]:
    if x is None:
        return {}
    if not isinstance(x, dict):
        logger.warning("%s must be a mapping; got %r. Using empty.", label, type(x).__name__)
        return {}
    return {str(k).strip().lower(): str(v).strip() for k, v in x.items() if str(k).strip()}


def resolve_path(p: str | Path) -> Path:
    """Relative paths in the config are relative to the repository root."""
    path = Path(p)
    return path if path.is_absolute() else ROOT / path


# ----------------------------
# Main loader + sanitizer
# ----------------------------
def load_cfg(path: str | Path = MARKET_YAML) -> dict:
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"market.yaml not found at: {p.resolve()}")

    with p.open("r", encoding="utf-8") as f:
        raw = yaml.safe_load(f) or {}
    if not isinstance(raw, dict):
        raise ValueError(f"{p}: top level must be a mapping of key: value lines.")

    unknown = sorted(set(raw) - set(DEFAULTS) - {"resolve"})
    for key in unknown:
        logger.warning("Ignoring unknown config key %r", key)

    cfg: dict = {}

    try:
        cfg["market_type"] = normalize_market_type(raw.get("market_type", DEFAULTS["market_type"]))
    except ValueError as e:
        logger.warning("%s; defaulting to %r.", e, DEFAULTS["market_type"])
        cfg["market_type"] = DEFAULTS["market_type"]

    # Economic parameters
    cfg["alpha"] = _as_float(raw, "alpha", 0.0, 1.0)
    cfg["epsilon"] = _as_float(raw, "epsilon", 0.0, strict_lo=True)
    cfg["beta"] = _as_float(raw, "beta", 0.0)
    cfg["pi_click"] = _as_float(raw, "pi_click", 0.0, 1.0)
    cfg["ron"] = _as_decimal_str(raw, "ron")
    cfg["tqm"] = _as_decimal_str(raw, "tqm")
    cfg["currency_scale"] = _as_decimal_str(raw, "currency_scale")
    cfg["impressions_per_period"] = _as_int(raw, "impressions_per_period", 0)
    cfg["period_days"] = _as_float(raw, "period_days", 0.0, strict_lo=True)
    cfg["round_cap"] = _as_int(raw, "round_cap", 1)
    cfg["seed"] = _as_int(raw, "seed", 0)

    # Files and services
    for key in ("catalog_path", "cdn_allowlist_path", "state_dir", "proxy_listen"):
        cfg[key] = _as_str(raw, key)
    cfg["ledger_url"] = (os.getenv("LEDGER_URL") or "").strip() or _as_str(raw, "ledger_url")
    cfg["proxy_timeout"] = _as_float(raw, "proxy_timeout", 0.0, strict_lo=True)
    cfg["proxy_connect_retries"] = _as_int(raw, "proxy_connect_retries", 0)
    cfg["resolve"] = _as_mapping_str(raw.get("resolve"), "resolve")

    # Synthetic trace generator
    for key in ("trace_users", "trace_publishers", "trace_events", "max_embedded"):
        cfg[key] = _as_int(raw, key, 1)
    cfg["trace_aggregators"] = _as_int(raw, "trace_aggregators", 0)
    cfg["trace_ubiquitous"] = _as_int(raw, "trace_ubiquitous", 0)
    cfg["trace_days"] = _as_float(raw, "trace_days", 0.0, strict_lo=True)
    cfg["popularity_skew"] = _as_float(raw, "popularity_skew", 0.0)
    cfg["embedding_skew"] = _as_float(raw, "embedding_skew", 0.0)

    return cfg


def apply_overrides(cfg: dict, overrides: Dict[str, Any]) -> dict:
    """Return a copy of cfg with non-None overrides applied (CLI flags win)."""
    out = dict(cfg)
    for key, val in overrides.items():
        if val is None:
            continue
        if key == "market_type":
            val = normalize_market_type(val)
        out[key] = val
    return out


def lines_of(path: str | Path) -> List[str]:
    """Non-empty, non-comment lines of a small text file (allowlists, whitelists)."""
    p = Path(path)
    if not p.exists():
        return []
    out: List[str] = []
    for line in p.read_text(encoding="utf-8").splitlines():
        s = line.split("#", 1)[0].strip()
        if s:
            out.append(s)
    return out


__all__ = ["MARKET_YAML", "DEFAULTS", "load_cfg", "apply_overrides", "normalize_market_type",
           "resolve_path", "lines_of"]
