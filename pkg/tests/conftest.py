"""Shared fixtures: repository root on sys.path, small catalogs, loopback helpers."""
from __future__ import annotations

import sys
import threading
from decimal import Decimal
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

import pytest

ROOT = Path(__file__).resolve().parents[1]
if str(ROOT) not in sys.path:
    sys.path.insert(0, str(ROOT))

from src.adoption import SimulationConfig  # noqa: E402
from src.engine import CpmParams, MarketConfig  # noqa: E402
from src.valuation import AdvertiserSpec  # noqa: E402

FIXTURES = Path(__file__).resolve().parent / "fixtures"
SNAPSHOTS = Path(__file__).resolve().parent / "snapshots"


@pytest.fixture
def fixtures_dir() -> Path:
    return FIXTURES


@pytest.fixture
def advertisers():
    return [
        AdvertiserSpec("adv-a", {"running": Decimal("1.20"), "shoes": Decimal("0.80")}),
        AdvertiserSpec("adv-b", {"travel": Decimal("2.00")}),
        AdvertiserSpec("adv-c", {"shoes": Decimal("0.50"), "travel": Decimal("0.30")}),
    ]


@pytest.fixture
def sim_config():
    def make(market_type="direct", alpha="1", impressions=1000, round_cap=50):
        return SimulationConfig(
            market=MarketConfig(Decimal(alpha), market_type, 1.0, impressions),
            cpm=CpmParams(Decimal(1), Decimal(1)),
            round_cap=round_cap,
        )
    return make


class StubServer:
    """A ThreadingHTTPServer on an ephemeral loopback port, served from a background thread."""

    def __init__(self, handler: type[BaseHTTPRequestHandler]):
        self.httpd = ThreadingHTTPServer(("127.0.0.1", 0), handler)
        self.httpd.daemon_threads = True
        self.thread = threading.Thread(target=self.httpd.serve_forever, daemon=True)

    @property
    def port(self) -> int:
        return self.httpd.server_address[1]

    def __enter__(self) -> "StubServer":
        self.thread.start()
        return self

    def __exit__(self, *exc) -> None:
        self.httpd.shutdown()
        self.httpd.server_close()
        self.thread.join(timeout=5)


@pytest.fixture
def stub_server():
    return StubServer
