# src/proxy.py
"""
HTTP/1.1 forward proxy that applies the tracking policy to every transaction.

Clients authenticate with Proxy-Authorization: Basic; the user name attributes
the request. Plain HTTP requests are forwarded through a pooled requests
session with the policy's header strips applied in both directions; bodies
pass untouched. CONNECT is tunnelled opaquely. Grants are swapped in whole
when the auction publishes a new period.
"""
from __future__ import annotations

import base64
import binascii
import hmac
import json
import logging
import select
import socket
import threading
import urllib.parse
from dataclasses import dataclass, field
from datetime import datetime, timezone
from http.cookiejar import DefaultCookiePolicy
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Dict, Iterable, List, Mapping, Optional, Tuple

import requests
from requests.adapters import HTTPAdapter, Retry
from urllib3.exceptions import HTTPError as Urllib3Error
from urllib3.util import SKIP_HEADER

from .policy import (Decision, Header, PolicyState, RequestMeta, ResponseMeta, decide, transform_request,
                     transform_response)

logger = logging.getLogger(__name__)
access_log = logging.getLogger(__name__ + ".access")

HOP_BY_HOP = frozenset({
    "connection", "keep-alive", "proxy-authorization", "proxy-authenticate", "proxy-connection",
    "te", "trailer", "transfer-encoding", "upgrade",
})
NO_BODY_STATUS = frozenset({204, 304})
RELAY_CHUNK = 65536

__all__ = [
    "ProxyConfig", "GrantUpdate", "StaleGrantError", "GrantBoard", "apply_grants",
    "strip_hop_by_hop", "make_session", "make_server", "serve",
]


# ----------------------------
# Grants
# ----------------------------
@dataclass(frozen=True)
class GrantUpdate:
    """Full replacement grant table for one period: (user, aggregator, grant period) rows."""
    period: int
    grants: Tuple[Tuple[str, str, int], ...] = ()

    def table(self) -> Dict[str, Dict[str, int]]:
        out: Dict[str, Dict[str, int]] = {}
        for user, agg, p in self.grants:
            out.setdefault(user, {})[agg] = int(p)
        return out

    @classmethod
    def from_records(cls, records: Iterable[Tuple[str, str, int]], period: Optional[int] = None) -> "GrantUpdate":
        rows = tuple(sorted((u, a, int(p)) for u, a, p in records))
        if period is None:
            if not rows:
                raise ValueError("cannot infer the period of an empty grant table")
            period = max(p for _, _, p in rows)
        return cls(int(period), rows)


class StaleGrantError(ValueError):
    pass


class GrantBoard:
    """Current (period, PolicyState); readers take one snapshot per transaction."""

    def __init__(self, state: PolicyState, period: int = 0):
        self._lock = threading.Lock()
        self._snap: Tuple[int, PolicyState] = (int(period), state)

    def snapshot(self) -> Tuple[int, PolicyState]:
        return self._snap

    @property
    def period(self) -> int:
        return self._snap[0]

    def _install(self, state: PolicyState, update: GrantUpdate) -> None:
        period = self._snap[0]
        if update.period <= period:
            raise StaleGrantError(f"grant update for period {update.period} is not newer than {period}")
        self._snap = (update.period, state.with_grants(update.table()))

    def apply(self, update: GrantUpdate) -> int:
        with self._lock:
            self._install(self._snap[1], update)
        logger.info("Grants for period %d applied (%d rows).", update.period, len(update.grants))
        return update.period

    def reload(self, state: PolicyState, update: Optional[GrantUpdate] = None) -> int:
        """
        Swap whitelists/allowlist and, when `update` is newer, the grant table in
        one step. Otherwise only grants bought for the current period survive.
        """
        with self._lock:
            period, old = self._snap
            if update is not None and update.period > period:
                self._install(state, update)
            else:
                current = {u: {a: p for a, p in g.items() if p == period} for u, g in old.grants.items()}
                self._snap = (period, state.with_grants({u: g for u, g in current.items() if g}))
        if update is not None and update.period < period:
            logger.warning("Grant file is for period %d, board is at %d; grants kept.", update.period, period)
        logger.info("Reloaded policy state for period %d.", self._snap[0])
        return self._snap[0]


def apply_grants(board: GrantBoard, update: GrantUpdate) -> int:
    return board.apply(update)


# ----------------------------
# Config + HTTP plumbing
# ----------------------------
@dataclass(frozen=True)
class ProxyConfig:
    host: str = "127.0.0.1"
    port: int = 8899
    timeout: float = 20.0
    connect_retries: int = 1
    resolve: Mapping[str, str] = field(default_factory=dict)
    credentials: Optional[Mapping[str, str]] = None

    @classmethod
    def from_cfg(cls, cfg: dict, credentials: Optional[Mapping[str, str]] = None) -> "ProxyConfig":
        host, _, port = str(cfg["proxy_listen"]).rpartition(":")
        return cls(
            host=host or "127.0.0.1",
            port=int(port),
            timeout=float(cfg["proxy_timeout"]),
            connect_retries=int(cfg["proxy_connect_retries"]),
            resolve=dict(cfg.get("resolve") or {}),
            credentials=credentials,
        )

    def target(self, host: str, port: int) -> Tuple[str, int]:
        """Static resolution table (host or host:port -> ip:port), else the name itself."""
        for key in (f"{host}:{port}".lower(), host.lower()):
            if key in self.resolve:
                h, _, p = self.resolve[key].rpartition(":")
                return (h or self.resolve[key]), int(p) if p.isdigit() else port
        return host, port


def make_session(retries: int = 1) -> requests.Session:
    s = requests.Session()
    s.headers.clear()
    s.trust_env = False
    # The proxy forwards cookies, it never keeps them.
    s.cookies.set_policy(DefaultCookiePolicy(allowed_domains=[]))
    retry = Retry(total=retries, connect=retries, read=0, status=0, redirect=0, raise_on_status=False)
    s.mount("http://", HTTPAdapter(max_retries=retry, pool_connections=32, pool_maxsize=32))
    return s


def strip_hop_by_hop(headers: Iterable[Header]) -> List[Header]:
    hs = list(headers)
    named = set(HOP_BY_HOP)
    for k, v in hs:
        if k.lower() == "connection":
            named.update(t.strip().lower() for t in v.split(",") if t.strip())
    return [(k, v) for k, v in hs if k.lower() not in named]


def _merge_for_requests(headers: Iterable[Header]) -> Dict[str, str]:
    """
    requests takes a dict: repeated request headers are joined, Cookie with '; '.
    Client order is kept, and urllib3's default User-Agent and Accept-Encoding
    are suppressed when the client sent none.
    """
    out: Dict[str, str] = {}
    lower: Dict[str, str] = {}
    for k, v in headers:
        key = lower.get(k.lower())
        if key is None:
            lower[k.lower()] = k
            out[k] = v
        else:
            out[key] = f"{out[key]}{'; ' if k.lower() == 'cookie' else ', '}{v}"
    for name in ("User-Agent", "Accept-Encoding"):
        if name.lower() not in lower:
            out[name] = SKIP_HEADER
    return out


def _basic_user(value: Optional[str], credentials: Optional[Mapping[str, str]]) -> Optional[str]:
    if not value:
        return None
    scheme, _, token = value.strip().partition(" ")
    if scheme.lower() != "basic":
        return None
    try:
        raw = base64.b64decode(token.strip(), validate=True).decode("utf-8")
    except (binascii.Error, UnicodeDecodeError):
        return None
    user, _, password = raw.partition(":")
    if not user:
        return None
    if credentials is None:
        return user
    expected = credentials.get(user)
    if expected is None or not hmac.compare_digest(expected.encode(), password.encode()):
        return None
    return user


def _log_access(user: Optional[str], method: str, host: str, party: str, passed: bool,
                stripped: Iterable[str], status: int) -> None:
    access_log.info(json.dumps({
        "ts": datetime.now(timezone.utc).isoformat(timespec="milliseconds"),
        "user": user,
        "method": method,
        "host": host,
        "party": party,
        "pass_tracking": passed,
        "stripped": list(stripped),
        "status": status,
    }, sort_keys=True))


# ----------------------------
# Handler
# ----------------------------
class MarketProxyHandler(BaseHTTPRequestHandler):
    protocol_version = "HTTP/1.1"
    server_version = "market-proxy"

    server: "MarketProxyServer"

    def log_message(self, format: str, *args) -> None:  # noqa: A002
        logger.debug("%s - %s", self.address_string(), format % args)

    def log_error(self, format: str, *args) -> None:  # noqa: A002
        logger.error("%s - %s", self.address_string(), format % args)

    # --- small writers ---
    def _reply(self, status: int, reason: str, extra: Iterable[Header] = (), body: bytes = b"") -> None:
        self.send_response_only(status, reason)
        for k, v in extra:
            self.send_header(k, v)
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        if body and self.command != "HEAD":
            self.wfile.write(body)

    def _bad_gateway(self, user: str, host: str, decision: Decision, body: bytes) -> None:
        self._reply(502, "Bad Gateway", body=body)
        self.close_connection = True
        _log_access(user, self.command, host, decision.party.value, decision.pass_tracking, decision.stripped, 502)

    def _authenticate(self) -> Optional[str]:
        user = _basic_user(self.headers.get("Proxy-Authorization"), self.server.config.credentials)
        if user is None:
            self._reply(407, "Proxy Authentication Required",
                        [("Proxy-Authenticate", 'Basic realm="market"')], b"proxy authentication required\n")
            _log_access(None, self.command, "", "", False, (), 407)
            self.close_connection = True
        return user

    def _read_body(self) -> Optional[bytes]:
        te = (self.headers.get("Transfer-Encoding") or "").lower()
        if "chunked" in te:
            chunks: List[bytes] = []
            while True:
                size_line = self.rfile.readline(65537)
                size = int(size_line.split(b";", 1)[0].strip() or b"0", 16)
                if size == 0:
                    # trailers end with a blank line
                    while self.rfile.readline(65537) not in (b"\r\n", b"\n", b""):
                        pass
                    break
                chunks.append(self.rfile.read(size))
                self.rfile.readline(3)
            return b"".join(chunks)
        length = self.headers.get("Content-Length")
        if length is not None:
            return self.rfile.read(int(length))
        return None

    # --- plain HTTP ---
    def _forward(self) -> None:
        user = self._authenticate()
        if user is None:
            return

        url = self.path
        if url.startswith("/"):
            url = f"http://{self.headers.get('Host', '')}{url}"
        parts = urllib.parse.urlsplit(url)
        if parts.scheme.lower() != "http" or not parts.hostname:
            self._reply(400, "Bad Request", body=b"absolute http:// URL required\n")
            return
        host = parts.hostname
        port = parts.port or 80

        try:
            body = self._read_body()
        except ValueError:
            self._reply(400, "Bad Request", body=b"malformed request body\n")
            self.close_connection = True
            return

        period, state = self.server.board.snapshot()
        req = RequestMeta.from_headers(user, host, strip_hop_by_hop(self.headers.items()))
        decision = decide(req, state, period)
        # a de-chunked body gets its Content-Length from requests; a client one keeps its place
        out_headers = transform_request(req, decision)

        ip, tport = self.server.config.target(host, port)
        target = urllib.parse.urlunsplit(("http", f"{ip}:{tport}", parts.path or "/", parts.query, ""))
        try:
            resp = self.server.session.request(
                self.command, target,
                headers=_merge_for_requests(out_headers),
                data=body,
                stream=True,
                allow_redirects=False,
                timeout=self.server.config.timeout,
            )
        except requests.RequestException as e:
            logger.warning("Upstream %s:%d failed for %s: %s", host, port, user, e)
            self._bad_gateway(user, host, decision, b"upstream connection failed\n")
            return

        try:
            raw_headers = strip_hop_by_hop(resp.raw.headers.iteritems())
            resp_headers = transform_response(ResponseMeta(tuple(raw_headers)), decision)
            no_body = self.command == "HEAD" or resp.status_code in NO_BODY_STATUS or resp.status_code < 200
            payload = b"" if no_body else resp.raw.read(decode_content=False)
        except (requests.RequestException, Urllib3Error, OSError) as e:
            logger.warning("Upstream %s:%d broke off the response for %s: %s", host, port, user, e)
            self._bad_gateway(user, host, decision, b"upstream response incomplete\n")
            return
        finally:
            resp.close()

        _log_access(user, self.command, host, decision.party.value, decision.pass_tracking,
                    decision.stripped, resp.status_code)
        self.send_response_only(resp.status_code, resp.reason)
        for k, v in resp_headers:
            if not no_body and k.lower() == "content-length":
                continue
            self.send_header(k, v)
        if not no_body:
            self.send_header("Content-Length", str(len(payload)))
        self.end_headers()
        if payload:
            self.wfile.write(payload)

    do_GET = do_HEAD = do_POST = do_PUT = do_DELETE = do_PATCH = do_OPTIONS = _forward

    # --- tunnels ---
    def do_CONNECT(self) -> None:
        user = self._authenticate()
        if user is None:
            return
        host, _, port = self.path.rpartition(":")
        host = host.strip("[]") or self.path
        port_n = int(port) if port.isdigit() else 443
        ip, tport = self.server.config.target(host, port_n)
        try:
            upstream = socket.create_connection((ip, tport), timeout=self.server.config.timeout)
        except OSError as e:
            logger.warning("Tunnel to %s:%d failed for %s: %s", host, port_n, user, e)
            self._reply(502, "Bad Gateway", body=b"upstream connection failed\n")
            _log_access(user, "CONNECT", host, "tunnel", False, (), 502)
            return

        self.send_response_only(200, "Connection established")
        self.end_headers()
        _log_access(user, "CONNECT", host, "tunnel", False, (), 200)
        self.close_connection = True
        try:
            self._relay(self.connection, upstream)
        finally:
            upstream.close()

    def _relay(self, client: socket.socket, upstream: socket.socket) -> None:
        socks = [client, upstream]
        while True:
            ready, _, broken = select.select(socks, [], socks, self.server.config.timeout)
            if broken or not ready:
                return
            for s in ready:
                try:
                    data = s.recv(RELAY_CHUNK)
                except OSError:
                    return
                if not data:
                    return
                (upstream if s is client else client).sendall(data)


class MarketProxyServer(ThreadingHTTPServer):
    daemon_threads = True

    def __init__(self, config: ProxyConfig, board: GrantBoard):
        self.config = config
        self.board = board
        self.session = make_session(config.connect_retries)
        super().__init__((config.host, config.port), MarketProxyHandler)

    def server_close(self) -> None:
        super().server_close()
        self.session.close()


def make_server(config: ProxyConfig, board: GrantBoard) -> MarketProxyServer:
    return MarketProxyServer(config, board)


def serve(config: ProxyConfig, board: GrantBoard) -> None:
    """Run until interrupted."""
    server = make_server(config, board)
    host, port = server.server_address[:2]
    logger.info("Proxy listening on %s:%d (period %d)", host, port, board.period)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        logger.info("Proxy shutting down.")
    finally:
        server.server_close()
