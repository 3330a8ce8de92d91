# src/cli.py
"""
Command-line entry points.

  python -m src.cli trace gen   --users 100 --seed 7 --out state/trace.jsonl
  python -m src.cli valuate     --trace state/trace.jsonl --whitelists state/whitelists --out state/bids.jsonl
  python -m src.cli auction run --bids state/bids.jsonl --period 3
  python -m src.cli shapley     --market mediated --impl 2 --expl 4
  python -m src.cli simulate    --trace state/trace.jsonl --out reports/
  python -m src.cli proxy       --listen 127.0.0.1:8899
  python -m src.cli report

Flags override config/market.yaml; LEDGER_URL overrides ledger_url.
Exit codes: 0 ok, 2 bad input or config, 1 runtime or database failure.
"""
from __future__ import annotations

import argparse
import logging
import os
import signal
import sys
import threading
from fractions import Fraction
from pathlib import Path
from typing import Callable, List, Optional

from dotenv import find_dotenv, load_dotenv
from sqlalchemy.exc import SQLAlchemyError

from .adoption import PricingMode, SimulationConfig, TraceParams, generate_trace, report, run_adoption
from .auction import run_auctions
from .engine import MarketType, consent_lift
from .game import shapley_closed_form, user_threshold
from .ledger import LedgerEntry, append_entries, open_ledger, summarize
from .policy import PolicyState
from .proxy import GrantBoard, GrantUpdate, ProxyConfig, serve
from .settings import MARKET_YAML, ROOT, apply_overrides, lines_of, load_cfg, resolve_path
from .storage import (RecordError, grants_from_outcomes, read_bids, read_catalog, read_credentials, read_grant_table,
                      read_trace, read_whitelists, write_bids, write_grants, write_outcomes, write_trace)
from .valuation import ClickModel, valuate_trace

LOG_LEVEL = os.getenv("LOG_LEVEL", "INFO").upper()
logger = logging.getLogger(__name__)

EXIT_OK, EXIT_RUNTIME, EXIT_INPUT = 0, 1, 2


# ----------------------------
# Helpers
# ----------------------------
def load_env() -> None:
    explicit = ROOT / ".env"
    if explicit.exists():
        load_dotenv(dotenv_path=explicit)
    else:
        env_path = find_dotenv(usecwd=True)
        if env_path:
            load_dotenv(env_path)


def _config(args: argparse.Namespace, **overrides) -> dict:
    return apply_overrides(load_cfg(args.config), overrides)


def _state_path(cfg: dict, arg: Optional[str], name: str) -> Path:
    return Path(arg) if arg else resolve_path(cfg["state_dir"]) / name


def _ledger_url(cfg: dict, arg: Optional[str] = None) -> str:
    url = arg or cfg["ledger_url"]
    prefix = "sqlite:///"
    if url.startswith(prefix) and not url.startswith(prefix + ":memory:"):
        path = Path(url[len(prefix):])
        if not path.is_absolute():
            return prefix + str(resolve_path(path))
    return url


def _fmt(x) -> str:
    return str(float(x))


# ----------------------------
# Commands
# ----------------------------
def cmd_trace_gen(args: argparse.Namespace) -> int:
    cfg = _config(args, trace_users=args.users, trace_publishers=args.publishers,
                  trace_aggregators=args.aggs, trace_events=args.events, trace_days=args.days,
                  seed=args.seed)
    catalog = read_catalog(resolve_path(cfg["catalog_path"]))
    keywords = sorted({k for spec in catalog for k in spec.keywords})
    trace = generate_trace(TraceParams.from_cfg(cfg, keywords), int(cfg["seed"]))
    out = _state_path(cfg, args.out, "trace.jsonl")
    n = write_trace(out, trace)
    logger.info("Wrote %d events to %s", n, out)
    return EXIT_OK


def cmd_valuate(args: argparse.Namespace) -> int:
    cfg = _config(args)
    sim = SimulationConfig.from_cfg(cfg)
    trace = read_trace(args.trace or _state_path(cfg, None, "trace.jsonl"))
    events = trace.events
    if args.period is not None:
        events = tuple(e for e in events if sim.period_of(e.ts) == args.period)
    whitelists = None if args.all_sites else read_whitelists(_state_path(cfg, args.whitelists, "whitelists"))
    catalog = read_catalog(args.catalog or resolve_path(cfg["catalog_path"]))
    bid_sets = valuate_trace(events, catalog, ClickModel(sim.pi_click), whitelists,
                             sim.market.currency_scale)
    out = _state_path(cfg, args.out, "bids.jsonl")
    n = write_bids(out, bid_sets)
    logger.info("Wrote %d bids for %d users to %s", n, len(bid_sets), out)
    return EXIT_OK


def cmd_auction_run(args: argparse.Namespace) -> int:
    cfg = _config(args, epsilon=args.epsilon, seed=args.seed)
    bid_sets = read_bids(args.bids or _state_path(cfg, None, "bids.jsonl"))
    outcomes = run_auctions(bid_sets, float(cfg["epsilon"]), int(cfg["seed"]), args.period)
    write_outcomes(_state_path(cfg, args.out, "outcomes.jsonl"), outcomes)
    grants = grants_from_outcomes(outcomes)
    write_grants(_state_path(cfg, args.grants, "grants.jsonl"), grants, args.period)

    entries = [
        LedgerEntry(o.period, o.user, agg, amount, PricingMode.AUCTION.value)
        for o in outcomes for agg, amount in sorted(o.payments().items()) if amount > 0
    ]
    if args.no_ledger:
        logger.info("Ledger skipped (%d payments).", len(entries))
    else:
        engine = open_ledger(_ledger_url(cfg, args.ledger_url))
        try:
            append_entries(engine, entries)
        finally:
            engine.dispose()
    logger.info("Auction period %d: %d users, %d grants", args.period, len(outcomes), len(grants))
    return EXIT_OK


def cmd_shapley(args: argparse.Namespace) -> int:
    mt = MarketType.parse(args.market)
    expl, impl = Fraction(args.expl), Fraction(args.impl)
    shares = shapley_closed_form(mt, expl, impl)
    parts = [f"u={_fmt(shares.user)}"]
    if shares.market is not None:
        parts.append(f"m={_fmt(shares.market)}")
    parts.append(f"a={_fmt(shares.aggregator)}")
    print(" ".join(parts))
    threshold = user_threshold(mt)
    print(f"lift={consent_lift(expl, impl)} threshold={_fmt(threshold) if threshold is not None else 'none'}")
    return EXIT_OK


def cmd_simulate(args: argparse.Namespace) -> int:
    cfg = _config(args, market_type=args.market, seed=args.seed, round_cap=args.round_cap)
    sim = SimulationConfig.from_cfg(cfg)
    trace = read_trace(args.trace or _state_path(cfg, None, "trace.jsonl"))
    catalog = read_catalog(resolve_path(cfg["catalog_path"]))
    result = run_adoption(trace, MarketType.parse(cfg["market_type"]), sim, PricingMode(args.pricing),
                          int(cfg["seed"]), advertisers=catalog)
    report(result, Path(args.out))
    for key, value in result.summary_rows():
        logger.info("%s = %s", key, value)

    if args.ledger:
        entries = [LedgerEntry(p, u, a, amt, result.pricing.value) for p, u, a, amt in result.payouts()]
        engine = open_ledger(_ledger_url(cfg, args.ledger_url))
        try:
            append_entries(engine, entries)
        finally:
            engine.dispose()
    return EXIT_OK


def _grant_update(path: Path) -> Optional[GrantUpdate]:
    """The grant file as one update; files without a period header take their newest row's period."""
    period, grants = read_grant_table(path)
    if period is None and not grants:
        return None
    return GrantUpdate.from_records(grants, period)


def _policy_state(cfg: dict, state_dir: Path, update: Optional[GrantUpdate] = None) -> PolicyState:
    return PolicyState(
        whitelists=read_whitelists(state_dir / "whitelists"),
        grants=update.table() if update else {},
        cdn_allowlist=frozenset(lines_of(resolve_path(cfg["cdn_allowlist_path"]))),
    )


def open_board(cfg: dict, state_dir: Path, period: Optional[int] = None) -> GrantBoard:
    update = _grant_update(state_dir / "grants.jsonl")
    if period is None:
        period = update.period if update else 0
    return GrantBoard(_policy_state(cfg, state_dir, update), period)


def reload_board(cfg: dict, state_dir: Path, board: GrantBoard) -> None:
    try:
        update = _grant_update(state_dir / "grants.jsonl")
        board.reload(_policy_state(cfg, state_dir), update)
    except (RecordError, OSError, ValueError) as e:
        logger.error("Reload failed, keeping current state: %s", e)


def install_reload_handler(cfg: dict, state_dir: Path, board: GrantBoard) -> bool:
    """Reload whitelists and grants on SIGHUP, off the signal handler's thread."""
    if not hasattr(signal, "SIGHUP"):
        return False

    def on_hup(signum, frame) -> None:
        logger.info("SIGHUP: reloading whitelists and grants from %s", state_dir)
        threading.Thread(target=reload_board, args=(cfg, state_dir, board), daemon=True).start()

    signal.signal(signal.SIGHUP, on_hup)
    return True


def cmd_proxy(args: argparse.Namespace) -> int:
    cfg = _config(args, proxy_listen=args.listen, state_dir=args.state_dir)
    state_dir = resolve_path(cfg["state_dir"])
    board = open_board(cfg, state_dir, args.period)
    config = ProxyConfig.from_cfg(cfg, read_credentials(state_dir / "credentials.txt"))
    install_reload_handler(cfg, state_dir, board)

    pid_file = state_dir / "proxy.pid"
    state_dir.mkdir(parents=True, exist_ok=True)
    pid_file.write_text(f"{os.getpid()}\n", encoding="utf-8")
    try:
        serve(config, board)
    finally:
        pid_file.unlink(missing_ok=True)
    return EXIT_OK


def cmd_report(args: argparse.Namespace) -> int:
    cfg = _config(args)
    engine = open_ledger(_ledger_url(cfg, args.ledger_url))
    try:
        summary = summarize(engine)
    finally:
        engine.dispose()
    print("user,entries,total")
    for user, total, n in summary.per_user:
        print(f"{user},{n},{total}")
    print(f"TOTAL,{sum(n for _, _, n in summary.per_user)},{summary.total}")
    if not summary.reconciles:
        logger.error("Ledger sum %s does not match per-user total %s", summary.raw_total, summary.total)
        return EXIT_RUNTIME
    return EXIT_OK


# ----------------------------
# Parser
# ----------------------------
def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="python -m src.cli", description="Information market for browsing data.")
    parser.add_argument("--config", default=MARKET_YAML, help="Path to market.yaml (default: MARKET_YAML or config/market.yaml)")
    sub = parser.add_subparsers(dest="command", required=True)

    trace = sub.add_parser("trace", help="Synthetic browsing traces")
    trace_sub = trace.add_subparsers(dest="trace_command", required=True)
    gen = trace_sub.add_parser("gen", help="Generate a synthetic trace")
    gen.add_argument("--users", type=int)
    gen.add_argument("--publishers", type=int)
    gen.add_argument("--aggs", type=int)
    gen.add_argument("--events", type=int)
    gen.add_argument("--days", type=float)
    gen.add_argument("--seed", type=int)
    gen.add_argument("--out", help="Output trace file (default: <state_dir>/trace.jsonl)")
    gen.set_defaults(func=cmd_trace_gen)

    val = sub.add_parser("valuate", help="Bids from a trace, whitelists and the catalog")
    val.add_argument("--trace")
    val.add_argument("--whitelists", help="Directory of <user>.txt whitelists")
    val.add_argument("--all-sites", action="store_true", help="Treat every visited site as whitelisted")
    val.add_argument("--catalog")
    val.add_argument("--period", type=int, help="Only events of this auction period")
    val.add_argument("--out")
    val.set_defaults(func=cmd_valuate)

    auction = sub.add_parser("auction", help="Per-user access auctions")
    auction_sub = auction.add_subparsers(dest="auction_command", required=True)
    run = auction_sub.add_parser("run", help="Run one period of auctions")
    run.add_argument("--bids")
    run.add_argument("--epsilon", type=float)
    run.add_argument("--seed", type=int)
    run.add_argument("--period", type=int, default=0)
    run.add_argument("--out", help="Outcome file (default: <state_dir>/outcomes.jsonl)")
    run.add_argument("--grants", help="Grant file for the proxy (default: <state_dir>/grants.jsonl)")
    run.add_argument("--ledger-url")
    run.add_argument("--no-ledger", action="store_true")
    run.set_defaults(func=cmd_auction_run)

    sh = sub.add_parser("shapley", help="Shapley shares for one (expl, impl) pair")
    sh.add_argument("--market", default="mediated")
    sh.add_argument("--impl", required=True)
    sh.add_argument("--expl", required=True)
    sh.set_defaults(func=cmd_shapley)

    simp = sub.add_parser("simulate", help="Trace-driven adoption dynamics")
    simp.add_argument("--trace")
    simp.add_argument("--market")
    simp.add_argument("--pricing", choices=[m.value for m in PricingMode], default=PricingMode.SHAPLEY.value)
    simp.add_argument("--seed", type=int)
    simp.add_argument("--round-cap", type=int)
    simp.add_argument("--out", default="reports")
    simp.add_argument("--ledger", action="store_true", help="Append simulated user payments to the ledger")
    simp.add_argument("--ledger-url")
    simp.set_defaults(func=cmd_simulate)

    px = sub.add_parser("proxy", help="Run the privacy-preserving proxy")
    px.add_argument("--listen")
    px.add_argument("--state-dir")
    px.add_argument("--period", type=int, help="Current auction period (default: newest in grants file)")
    px.set_defaults(func=cmd_proxy)

    rep = sub.add_parser("report", help="Per-user earnings from the ledger")
    rep.add_argument("--ledger-url")
    rep.set_defaults(func=cmd_report)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    load_env()
    logging.basicConfig(level=LOG_LEVEL, format="%(asctime)s | %(levelname)s | %(message)s")
    args = build_parser().parse_args(argv)
    func: Callable[[argparse.Namespace], int] = args.func
    try:
        return func(args)
    except (RecordError, FileNotFoundError, ValueError) as e:
        logger.error("%s", e)
        return EXIT_INPUT
    except SQLAlchemyError as e:
        logger.error("Database error: %s", e)
        return EXIT_RUNTIME
    except OSError as e:
        logger.error("I/O error: %s", e)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
