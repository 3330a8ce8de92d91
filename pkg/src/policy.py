# src/policy.py
"""
Per-request tracking policy.

A request is third-party when the root domain of its Host differs from the
root domain of its Referer. Third-party tracking headers pass only when
(a) the user whitelisted the referring site and (b) the requesting aggregator
holds a grant for the current auction period. Otherwise Cookie, Referer and
If-None-Match are removed from the request and Set-Cookie and Etag from the
response. Nothing is ever blocked.
"""
from __future__ import annotations

import enum
import ipaddress
import urllib.parse
from dataclasses import dataclass, field
from functools import lru_cache
from types import MappingProxyType
from typing import FrozenSet, Iterable, List, Mapping, Optional, Sequence, Tuple

import tldextract

Header = Tuple[str, str]

STRIP_REQUEST: Tuple[str, ...] = ("Cookie", "Referer", "If-None-Match")
STRIP_RESPONSE: Tuple[str, ...] = ("Set-Cookie", "Etag")

# Bundled public-suffix snapshot only; never fetched at runtime.
_EXTRACT = tldextract.TLDExtract(suffix_list_urls=())

__all__ = [
    "Party", "RequestMeta", "ResponseMeta", "PolicyState", "Decision", "Header",
    "STRIP_REQUEST", "STRIP_RESPONSE", "split_host", "root_domain", "classify", "decide",
    "transform_request", "transform_response",
]


# -----------------------
# Domains
# -----------------------
def split_host(host: str) -> str:
    """Drop port and brackets from a Host value."""
    h = (host or "").strip().lower()
    if h.startswith("["):
        return h[1:h.find("]")] if "]" in h else h[1:]
    if h.count(":") == 1:
        h = h.split(":", 1)[0]
    return h.rstrip(".")


@lru_cache(maxsize=65536)
def root_domain(host: str) -> str:
    """Registrable domain (eTLD+1); IP literals and bare suffixes come back as given."""
    h = split_host(host)
    if not h:
        raise ValueError("empty host")
    try:
        ipaddress.ip_address(h)
        return h
    except ValueError:
        pass
    ext = _EXTRACT(h)
    if ext.domain and ext.suffix:
        return f"{ext.domain}.{ext.suffix}"
    return h


def _referer_root(referer: Optional[str]) -> Optional[str]:
    if not referer:
        return None
    netloc = urllib.parse.urlsplit(referer.strip()).netloc
    host = netloc.rsplit("@", 1)[-1]
    if not split_host(host):
        return None
    return root_domain(host)


# -----------------------
# Types
# -----------------------
class Party(str, enum.Enum):
    FIRST = "first"
    THIRD = "third"


def _header(headers: Sequence[Header], name: str) -> Optional[str]:
    key = name.lower()
    for k, v in headers:
        if k.lower() == key:
            return v
    return None


@dataclass(frozen=True)
class RequestMeta:
    user: str
    host: str
    referer: Optional[str] = None
    headers: Tuple[Header, ...] = ()

    def __post_init__(self) -> None:
        if not split_host(self.host):
            raise ValueError("request host must be non-empty")
        object.__setattr__(self, "headers", tuple((str(k), str(v)) for k, v in self.headers))

    @classmethod
    def from_headers(cls, user: str, host: str, headers: Iterable[Header]) -> "RequestMeta":
        hs = tuple(headers)
        return cls(user, host, _header(hs, "Referer"), hs)

    @property
    def cookie(self) -> Optional[str]:
        return _header(self.headers, "Cookie")

    @property
    def if_none_match(self) -> Optional[str]:
        return _header(self.headers, "If-None-Match")


@dataclass(frozen=True)
class ResponseMeta:
    headers: Tuple[Header, ...] = ()

    @property
    def set_cookies(self) -> List[str]:
        return [v for k, v in self.headers if k.lower() == "set-cookie"]

    @property
    def etag(self) -> Optional[str]:
        return _header(self.headers, "Etag")


@dataclass(frozen=True)
class PolicyState:
    """Per-user whitelists and grants; replaced whole, never edited in place."""
    whitelists: Mapping[str, FrozenSet[str]] = field(default_factory=dict)
    grants: Mapping[str, Mapping[str, int]] = field(default_factory=dict)
    cdn_allowlist: FrozenSet[str] = frozenset()

    def __post_init__(self) -> None:
        object.__setattr__(self, "whitelists", MappingProxyType(
            {u: frozenset(root_domain(d) for d in ds) for u, ds in self.whitelists.items()}
        ))
        object.__setattr__(self, "grants", MappingProxyType(
            {u: MappingProxyType({root_domain(a): int(p) for a, p in g.items()})
             for u, g in self.grants.items()}
        ))
        object.__setattr__(self, "cdn_allowlist", frozenset(root_domain(d) for d in self.cdn_allowlist))

    def whitelisted(self, user: str, root: Optional[str]) -> bool:
        return root is not None and root in self.whitelists.get(user, frozenset())

    def granted(self, user: str, root: str, period: int) -> bool:
        """Grants are bought for one period and are inert in every other."""
        return self.grants.get(user, {}).get(root) == period

    def with_grants(self, grants: Mapping[str, Mapping[str, int]]) -> "PolicyState":
        return PolicyState(dict(self.whitelists), grants, self.cdn_allowlist)


@dataclass(frozen=True)
class Decision:
    party: Party
    pass_tracking: bool
    strip_request: Tuple[str, ...] = ()
    strip_response: Tuple[str, ...] = ()

    @property
    def stripped(self) -> Tuple[str, ...]:
        return self.strip_request + self.strip_response


# -----------------------
# Decisions
# -----------------------
def classify(req: RequestMeta, cdn_allowlist: Iterable[str] = ()) -> Party:
    ref = _referer_root(req.referer)
    if ref is None:
        return Party.FIRST
    host = root_domain(req.host)
    if host == ref or host in {root_domain(d) for d in cdn_allowlist}:
        return Party.FIRST
    return Party.THIRD


def decide(req: RequestMeta, state: PolicyState, current_period: int) -> Decision:
    party = classify(req, state.cdn_allowlist)
    passes = (
        state.whitelisted(req.user, _referer_root(req.referer))
        and state.granted(req.user, root_domain(req.host), current_period)
    )
    # first party is never stripped, whatever the grant table says
    if passes or party is Party.FIRST:
        return Decision(party, passes)
    return Decision(party, False, STRIP_REQUEST, STRIP_RESPONSE)


def _strip(headers: Iterable[Header], names: Sequence[str]) -> List[Header]:
    drop = {n.lower() for n in names}
    return [(k, v) for k, v in headers if k.lower() not in drop]


def transform_request(req: RequestMeta, decision: Decision) -> List[Header]:
    return _strip(req.headers, decision.strip_request)


def transform_response(resp: ResponseMeta, decision: Decision) -> List[Header]:
    return _strip(resp.headers, decision.strip_response)
