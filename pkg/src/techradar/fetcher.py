"""Site retrieval: polite breadth-first crawling of a company's website,
either live over HTTP or from a local page archive.

Archive mode is the primary path for tests and offline runs: a directory
holding a ``manifest.ndjson`` (fields url, file, status, optional
location for redirects) plus the stored HTML files. Both transports go
through the same crawl logic, so page sets are identical given identical
content.
"""

from __future__ import annotations

import datetime as dt
import json
import logging
import re
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Protocol
from urllib.parse import urljoin, urlsplit, urlunsplit

from .registry import CompanyRecord

log = logging.getLogger(__name__)

USER_AGENT_TOKEN = "techradar-crawler"
MAX_REDIRECTS = 5

# Minimal set of two-level public suffixes so that e.g. example.co.uk and
# shop.example.co.uk share a registrable domain. Not a full PSL; documented
# approximation sufficient for same-site checks.
_TWO_LEVEL_SUFFIXES = {
    "co.uk", "org.uk", "ac.uk", "gov.uk", "me.uk", "net.uk",
    "com.au", "net.au", "org.au", "co.nz", "org.nz",
    "co.jp", "ne.jp", "or.jp", "com.br", "com.mx", "com.ar",
    "co.in", "co.za", "com.cn", "com.tw", "com.tr", "com.pl",
    "co.kr", "com.sg", "com.hk",
}


@dataclass(frozen=True)
class CrawlPolicy:
    max_depth: int = 2
    max_pages_per_site: int = 50
    per_host_delay_ms: int = 1000
    global_concurrency: int = 4
    obey_robots: bool = True
    timeout_ms: int = 10000

    def __post_init__(self) -> None:
        if self.max_depth < 0:
            raise ValueError("max_depth must be >= 0")
        if self.max_pages_per_site < 1:
            raise ValueError("max_pages_per_site must be >= 1")
        if self.global_concurrency < 1:
            raise ValueError("global_concurrency must be >= 1")
        if self.timeout_ms <= 0:
            raise ValueError("timeout must be positive")
        if self.per_host_delay_ms < 0:
            raise ValueError("per_host_delay must be >= 0")


@dataclass(frozen=True)
class WebPage:
    company_id: str
    page_url: str
    fetched_at: str  # ISO-8601 UTC
    status: int
    body: str
    depth: int

    def to_json(self) -> dict:
        return {
            "company_id": self.company_id,
            "page_url": self.page_url,
            "fetched_at": self.fetched_at,
            "status": self.status,
            "body": self.body,
            "depth": self.depth,
        }

    @classmethod
    def from_json(cls, d: dict) -> "WebPage":
        return cls(
            company_id=d["company_id"],
            page_url=d["page_url"],
            fetched_at=d["fetched_at"],
            status=d["status"],
            body=d["body"],
            depth=d["depth"],
        )


@dataclass(frozen=True)
class FetchError:
    url: str
    kind: str  # "status" | "timeout" | "connect" | "off_domain" | "redirects" | "missing"
    status: Optional[int] = None

    def __str__(self) -> str:
        return f"{self.kind}({self.status}) {self.url}" if self.status else f"{self.kind} {self.url}"


@dataclass
class CrawlLogEntry:
    url: str
    host: str
    started_monotonic: float
    depth: int
    status: Optional[int] = None
    error: Optional[str] = None


@dataclass
class CrawlLog:
    company_id: str
    entries: list[CrawlLogEntry] = field(default_factory=list)
    site_error: Optional[str] = None
    robots_blocked: int = 0


@dataclass(frozen=True)
class TransportResponse:
    status: int
    body: bytes
    charset: Optional[str] = None
    location: Optional[str] = None  # redirect target, unresolved
    fetched_at: Optional[str] = None  # archive snapshot time; None = now


class Transport(Protocol):
    def get(self, url: str, timeout_ms: int) -> TransportResponse: ...


class TransportFailure(Exception):
    """Connection-level failure (DNS, refused, timeout)."""

    def __init__(self, kind: str, message: str = ""):
        super().__init__(message or kind)
        self.kind = kind


class ArchiveTransport:
    """Serve responses from an on-disk archive with an NDJSON manifest."""

    def __init__(self, directory: str | Path):
        self.directory = Path(directory)
        manifest = self.directory / "manifest.ndjson"
        if not manifest.exists():
            raise FileNotFoundError(f"archive manifest not found: {manifest}")
        self.entries: dict[str, dict] = {}
        with open(manifest, encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if line:
                    entry = json.loads(line)
                    self.entries[_strip_fragment(entry["url"])] = entry

    def get(self, url: str, timeout_ms: int) -> TransportResponse:
        entry = self.entries.get(_strip_fragment(url))
        if entry is None:
            raise TransportFailure("missing", f"not in archive: {url}")
        status = int(entry.get("status", 200))
        location = entry.get("location")
        body = b""
        if entry.get("file"):
            body = (self.directory / entry["file"]).read_bytes()
        # a stable timestamp keeps archive-mode artifacts bit-reproducible
        fetched_at = entry.get("fetched_at", "1970-01-01T00:00:00+00:00")
        return TransportResponse(status=status, body=body, location=location, fetched_at=fetched_at)


class LiveTransport:
    """requests-backed transport; redirects are surfaced, not followed,
    so the crawler can enforce the same-domain rule per hop."""

    def __init__(self, version: str = "0.1.0", contact_url: str = ""):
        import requests

        self.session = requests.Session()
        ua = f"{USER_AGENT_TOKEN}/{version}"
        if contact_url:
            ua += f" (+{contact_url})"
        self.session.headers["User-Agent"] = ua

    def get(self, url: str, timeout_ms: int) -> TransportResponse:
        import requests

        try:
            resp = self.session.get(
                url, timeout=timeout_ms / 1000.0, allow_redirects=False
            )
        except requests.Timeout as exc:
            raise TransportFailure("timeout", str(exc)) from exc
        except requests.RequestException as exc:
            raise TransportFailure("connect", str(exc)) from exc
        return TransportResponse(
            status=resp.status_code,
            body=resp.content,
            charset=resp.encoding,
            location=resp.headers.get("Location"),
        )


def registrable_domain(host: str) -> str:
    """Approximate eTLD+1: last two labels, or three for known
    two-level suffixes (co.uk and friends)."""
    host = host.lower().strip(".").split(":")[0]
    labels = host.split(".")
    if len(labels) <= 2:
        return host
    if ".".join(labels[-2:]) in _TWO_LEVEL_SUFFIXES:
        return ".".join(labels[-3:])
    return ".".join(labels[-2:])


def same_site(url_a: str, url_b: str) -> bool:
    return registrable_domain(urlsplit(url_a).netloc) == registrable_domain(
        urlsplit(url_b).netloc
    )


def _strip_fragment(url: str) -> str:
    parts = urlsplit(url)
    return urlunsplit((parts.scheme, parts.netloc, parts.path, parts.query, ""))


_CHARSET_RE = re.compile(
    rb"""<meta[^>]+charset=["']?\s*([a-zA-Z0-9_\-]+)""", re.IGNORECASE
)


def decode_body(raw: bytes, declared: Optional[str] = None) -> str:
    """Decode HTML bytes to text: declared charset, then sniffed
    <meta charset>, then strict UTF-8, then forgiving fallbacks."""
    candidates: list[str] = []
    if declared:
        candidates.append(declared)
    m = _CHARSET_RE.search(raw[:4096])
    if m:
        candidates.append(m.group(1).decode("ascii", "ignore"))
    candidates.append("utf-8")
    for enc in candidates:
        try:
            return raw.decode(enc)
        except (LookupError, UnicodeDecodeError):
            continue
    try:
        return raw.decode("cp1252")
    except UnicodeDecodeError:
        return raw.decode("utf-8", errors="replace")


class HostThrottle:
    """Serializes requests per host and enforces the inter-request delay."""

    def __init__(self, delay_ms: int):
        self.delay = delay_ms / 1000.0
        self._lock = threading.Lock()
        self._host_locks: dict[str, threading.Lock] = {}
        self._last_start: dict[str, float] = {}

    def _lock_for(self, host: str) -> threading.Lock:
        with self._lock:
            if host not in self._host_locks:
                self._host_locks[host] = threading.Lock()
            return self._host_locks[host]

    def wait_turn(self, host: str) -> float:
        """Block until this host may issue a request; returns the start time."""
        with self._lock_for(host):
            now = time.monotonic()
            last = self._last_start.get(host)
            if last is not None and self.delay > 0:
                wait = last + self.delay - now
                if wait > 0:
                    time.sleep(wait)
                    now = time.monotonic()
            self._last_start[host] = now
            return now


def fetch_page(
    url: str,
    policy: CrawlPolicy,
    transport: Transport,
    *,
    company_id: str = "",
    depth: int = 0,
    throttle: Optional[HostThrottle] = None,
    crawl_log: Optional[CrawlLog] = None,
) -> WebPage | FetchError:
    """Fetch one URL, following up to 5 same-site redirects.

    Every attempt (including each redirect hop) is recorded in the crawl
    log when one is supplied.
    """
    current = _strip_fragment(url)
    for _hop in range(MAX_REDIRECTS + 1):
        host = urlsplit(current).netloc
        started = throttle.wait_turn(host) if throttle else time.monotonic()
        entry = CrawlLogEntry(url=current, host=host, started_monotonic=started, depth=depth)
        if crawl_log is not None:
            crawl_log.entries.append(entry)
        try:
            resp = transport.get(current, policy.timeout_ms)
        except TransportFailure as exc:
            entry.error = exc.kind
            return FetchError(url=current, kind=exc.kind)
        entry.status = resp.status
        if 300 <= resp.status < 400 and resp.location:
            target = _strip_fragment(urljoin(current, resp.location))
            if not same_site(current, target):
                entry.error = "off_domain"
                return FetchError(url=target, kind="off_domain", status=resp.status)
            current = target
            continue
        if not 200 <= resp.status < 300:
            entry.error = "status"
            return FetchError(url=current, kind="status", status=resp.status)
        body = decode_body(resp.body, resp.charset)
        fetched_at = resp.fetched_at or dt.datetime.now(dt.timezone.utc).isoformat()
        return WebPage(
            company_id=company_id,
            page_url=current,
            fetched_at=fetched_at,
            status=resp.status,
            body=body,
            depth=depth,
        )
    return FetchError(url=current, kind="redirects")


_HREF_RE = re.compile(r"""<a\s[^>]*?href\s*=\s*("([^"]*)"|'([^']*)'|([^\s>]+))""", re.IGNORECASE)


def extract_links(body: str, base_url: str) -> list[str]:
    """Anchor hrefs resolved against the page URL; fragments stripped,
    query strings kept, http(s) only. Sorted unique."""
    found: set[str] = set()
    for m in _HREF_RE.finditer(body):
        href = m.group(2) or m.group(3) or m.group(4) or ""
        href = href.strip()
        if not href or href.startswith(("javascript:", "mailto:", "tel:", "#")):
            continue
        absolute = _strip_fragment(urljoin(base_url, href))
        if urlsplit(absolute).scheme in ("http", "https"):
            found.add(absolute)
    return sorted(found)


class RobotsRules:
    """Longest-match Allow/Disallow rules for one host (RFC 9309 style)."""

    def __init__(self, rules: list[tuple[str, bool]]):
        # (path_prefix, allowed); longest prefix wins, Allow wins ties
        self.rules = rules

    def allowed(self, url: str) -> bool:
        path = urlsplit(url).path or "/"
        best_len = -1
        best_allow = True
        for prefix, allow in self.rules:
            if path.startswith(prefix) and len(prefix) >= best_len:
                if len(prefix) > best_len or allow:
                    best_allow = allow
                best_len = len(prefix)
        return best_allow

    @classmethod
    def parse(cls, text: str, agent_token: str = USER_AGENT_TOKEN) -> "RobotsRules":
        groups: dict[str, list[tuple[str, bool]]] = {}
        current_agents: list[str] = []
        last_was_agent = False
        for raw in text.splitlines():
            line = raw.split("#", 1)[0].strip()
            if not line or ":" not in line:
                continue
            key, value = line.split(":", 1)
            key = key.strip().lower()
            value = value.strip()
            if key == "user-agent":
                agent = value.lower()
                if not last_was_agent:
                    current_agents = []
                current_agents.append(agent)
                groups.setdefault(agent, [])
                last_was_agent = True
            elif key in ("allow", "disallow"):
                last_was_agent = False
                if not value and key == "disallow":
                    continue  # empty Disallow means allow all
                for agent in current_agents:
                    groups.setdefault(agent, []).append((value, key == "allow"))
            else:
                last_was_agent = False
        token = agent_token.lower()
        for candidate in (token, "*"):
            if candidate in groups:
                return cls(groups[candidate])
        return cls([])


def _load_robots(
    site_url: str,
    policy: CrawlPolicy,
    transport: Transport,
    throttle: Optional[HostThrottle] = None,
) -> RobotsRules:
    parts = urlsplit(site_url)
    robots_url = urlunsplit((parts.scheme, parts.netloc, "/robots.txt", "", ""))
    if throttle is not None:
        throttle.wait_turn(parts.netloc)
    try:
        resp = transport.get(robots_url, policy.timeout_ms)
    except TransportFailure:
        return RobotsRules([])
    if resp.status != 200:
        return RobotsRules([])
    return RobotsRules.parse(decode_body(resp.body))


def crawl_site(
    company: CompanyRecord,
    policy: CrawlPolicy,
    transport: Transport,
    throttle: Optional[HostThrottle] = None,
) -> tuple[list[WebPage], CrawlLog]:
    """Breadth-first crawl of one company's site.

    Traversal starts at the landing page, follows same-registrable-domain
    links only, visits URLs of one depth level in lexicographic order, and
    stops at max_depth / max_pages_per_site. Every fetch attempt lands in
    the crawl log.
    """
    crawl_log = CrawlLog(company_id=company.company_id)
    if throttle is None:
        throttle = HostThrottle(policy.per_host_delay_ms)

    robots = RobotsRules([])
    if policy.obey_robots:
        robots = _load_robots(company.url, policy, transport, throttle)

    landing = _strip_fragment(company.url)
    pages: list[WebPage] = []
    visited: set[str] = set()
    level: list[str] = [landing]
    depth = 0

    while level and len(pages) < policy.max_pages_per_site:
        next_level: set[str] = set()
        for url in level:
            if len(pages) >= policy.max_pages_per_site:
                break
            if url in visited:
                continue
            visited.add(url)
            if policy.obey_robots and not robots.allowed(url):
                crawl_log.robots_blocked += 1
                log.debug("robots: skipping %s", url)
                continue
            result = fetch_page(
                url, policy, transport,
                company_id=company.company_id, depth=depth,
                throttle=throttle, crawl_log=crawl_log,
            )
            if isinstance(result, FetchError):
                if depth == 0 and url == landing:
                    crawl_log.site_error = str(result)
                continue
            if result.page_url != url and result.page_url in visited:
                continue  # redirect landed on an already-visited page
            visited.add(result.page_url)
            pages.append(result)
            if depth < policy.max_depth:
                for link in extract_links(result.body, result.page_url):
                    if link not in visited and same_site(link, company.url):
                        next_level.add(link)
        level = sorted(next_level)
        depth += 1
        if depth > policy.max_depth:
            break

    if not pages and crawl_log.site_error is None:
        crawl_log.site_error = "landing page unreachable or empty"
    return pages, crawl_log
