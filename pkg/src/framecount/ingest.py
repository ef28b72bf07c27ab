"""Post archives, link resolution and page text extraction.

Archives are JSON Lines, one post per line. Linked pages are resolved through
an injected fetcher (live HTTP or a replay fixture) and cached on disk, keyed
by the requested URL.
"""

from __future__ import annotations

import csv
import enum
import hashlib
import html
import io
import json
import logging
import re
import threading
import urllib.error
import urllib.request
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import date, datetime, timezone
from html.parser import HTMLParser
from pathlib import Path
from typing import IO, Iterable, Mapping, Protocol
from urllib.parse import urljoin, urlsplit

logger = logging.getLogger(__name__)

DEFAULT_UNPARSABLE_THRESHOLD = 50
DEFAULT_MAX_REDIRECTS = 10
DEFAULT_FETCH_WORKERS = 8


class Party(str, enum.Enum):
    DEM = "DEM"
    REP = "REP"


@dataclass(frozen=True)
class Post:
    id: str
    created_at: datetime
    account: str
    party: Party
    text: str
    reshare_count: int
    is_reshare: bool
    urls: tuple[str, ...] = ()

    def __post_init__(self):
        if self.reshare_count < 0:
            raise ValueError(f"post {self.id}: negative reshare_count")
        if self.created_at.tzinfo is None:
            raise ValueError(f"post {self.id}: created_at must be timezone-aware")


@dataclass(frozen=True)
class AccountInfo:
    account: str
    party: Party
    followers: int
    harvest_date: date

    def __post_init__(self):
        if self.followers < 1:
            raise ValueError(f"account {self.account}: followers must be >= 1")


@dataclass(frozen=True)
class LineError:
    """A malformed archive line; parsing continues past it."""

    line: int
    reason: str


# ---------------------------------------------------------------------------
# archive parsing
# ---------------------------------------------------------------------------

_REQUIRED = ("id", "created_at", "account", "party", "text", "retweet_count", "is_retweet")


def parse_timestamp(value: str) -> datetime:
    """Parse an ISO-8601 timestamp with an explicit offset into UTC."""
    if not isinstance(value, str):
        raise ValueError("timestamp must be a string")
    text = value.strip()
    if text.endswith(("Z", "z")):
        text = text[:-1] + "+00:00"
    ts = datetime.fromisoformat(text)
    if ts.tzinfo is None:
        raise ValueError(f"timestamp {value!r} has no UTC offset")
    return ts.astimezone(timezone.utc)


def format_timestamp(ts: datetime) -> str:
    ts = ts.astimezone(timezone.utc)
    if ts.microsecond:
        return ts.strftime("%Y-%m-%dT%H:%M:%S.%fZ")
    return ts.strftime("%Y-%m-%dT%H:%M:%SZ")


def _post_from_record(rec: Mapping) -> Post:
    if not isinstance(rec, dict):
        raise ValueError("line is not a JSON object")
    missing = [k for k in _REQUIRED if k not in rec]
    if missing:
        raise ValueError(f"missing field(s): {', '.join(missing)}")
    for key in ("id", "account", "text"):
        if not isinstance(rec[key], str):
            raise ValueError(f"field {key!r} must be a string")
    count = rec["retweet_count"]
    if isinstance(count, bool) or not isinstance(count, int) or count < 0:
        raise ValueError("retweet_count must be a non-negative integer")
    if not isinstance(rec["is_retweet"], bool):
        raise ValueError("is_retweet must be a boolean")
    try:
        party = Party(rec["party"])
    except ValueError:
        raise ValueError(f"unknown party {rec['party']!r}") from None
    return Post(
        id=rec["id"],
        created_at=parse_timestamp(rec["created_at"]),
        account=rec["account"],
        party=party,
        text=rec["text"],
        reshare_count=count,
        is_reshare=rec["is_retweet"],
        urls=tuple(extract_urls(rec["text"])),
    )


def parse_archive(stream: IO[bytes] | Iterable[bytes]) -> tuple[list[Post], list[LineError]]:
    """Parse a JSON Lines post archive.

    Returns the posts from all well-formed lines in input order together with
    one :class:`LineError` per malformed line. Blank lines are skipped.
    """
    posts: list[Post] = []
    errors: list[LineError] = []
    for lineno, raw in enumerate(stream, start=1):
        if isinstance(raw, bytes):
            raw = raw.decode("utf-8", errors="replace")
        if not raw.strip():
            continue
        try:
            posts.append(_post_from_record(json.loads(raw)))
        except (ValueError, TypeError) as exc:
            errors.append(LineError(lineno, str(exc)))
    return posts, errors


def post_to_record(post: Post) -> dict:
    return {
        "id": post.id,
        "created_at": format_timestamp(post.created_at),
        "account": post.account,
        "party": post.party.value,
        "text": post.text,
        "retweet_count": post.reshare_count,
        "is_retweet": post.is_reshare,
    }


def dump_archive(posts: Iterable[Post]) -> bytes:
    """Serialize posts to JSON Lines (the inverse of :func:`parse_archive`)."""
    lines = [json.dumps(post_to_record(p), ensure_ascii=False) for p in posts]
    return ("\n".join(lines) + "\n").encode("utf-8") if lines else b""


# ---------------------------------------------------------------------------
# URL extraction
# ---------------------------------------------------------------------------

_URL_RE = re.compile(r"https?://[^\s<>\"'`]+", re.IGNORECASE)
_TRAILING = ".,;:!?*'\"…"
_PAIRS = {")": "(", "]": "[", "}": "{"}


def _trim_url(candidate: str) -> str:
    while candidate:
        last = candidate[-1]
        if last in _TRAILING:
            candidate = candidate[:-1]
        elif last in _PAIRS and candidate.count(last) > candidate.count(_PAIRS[last]):
            candidate = candidate[:-1]
        else:
            break
    return candidate


def is_absolute_url(url: str) -> bool:
    parts = urlsplit(url)
    return parts.scheme.lower() in ("http", "https") and bool(parts.hostname)


def extract_urls(text: str) -> list[str]:
    """Return every http(s) URL in ``text`` in order of appearance.

    Sentence punctuation and unbalanced closing brackets are trimmed from the
    end of each match; shortener links are kept verbatim.
    """
    urls = []
    for match in _URL_RE.finditer(text):
        url = _trim_url(match.group(0))
        if is_absolute_url(url):
            urls.append(url)
    return urls


# ---------------------------------------------------------------------------
# fetching
# ---------------------------------------------------------------------------


class FetchStatus(str, enum.Enum):
    OK = "Ok"
    HTTP_ERROR = "HttpError"
    TIMEOUT = "Timeout"
    TOO_MANY_REDIRECTS = "TooManyRedirects"


@dataclass(frozen=True)
class FetchResult:
    requested_url: str
    final_url: str
    status: FetchStatus
    http_code: int | None = None
    body: bytes | None = field(default=None, repr=False)

    def __post_init__(self):
        if (self.body is not None) != (self.status is FetchStatus.OK):
            raise ValueError("body must be present exactly when status is Ok")

    @property
    def ok(self) -> bool:
        return self.status is FetchStatus.OK

    @property
    def status_label(self) -> str:
        if self.status is FetchStatus.HTTP_ERROR:
            return f"HttpError({self.http_code})"
        return self.status.value


_HTTP_ERROR_RE = re.compile(r"HttpError\((\d{3})\)")


def parse_status_label(label: str) -> tuple[FetchStatus, int | None]:
    m = _HTTP_ERROR_RE.fullmatch(label)
    if m:
        return FetchStatus.HTTP_ERROR, int(m.group(1))
    return FetchStatus(label), None


@dataclass(frozen=True)
class Response:
    """One HTTP hop as seen by a fetcher (no redirect following)."""

    status_code: int
    location: str | None = None
    body: bytes | None = None


class Fetcher(Protocol):
    def fetch(self, url: str) -> Response:
        """Fetch exactly one hop; raise ``OSError`` on network failure."""


class DictFetcher:
    """In-memory fetcher: ``url -> (status_code, location_or_body)``."""

    def __init__(self, table: Mapping[str, tuple[int, str | bytes | None]]):
        self.table = dict(table)
        self.calls = 0
        self._lock = threading.Lock()

    def fetch(self, url: str) -> Response:
        with self._lock:
            self.calls += 1
        if url not in self.table:
            raise TimeoutError(f"no route to {url}")
        code, payload = self.table[url]
        if 300 <= code < 400:
            return Response(code, location=payload)
        if isinstance(payload, str):
            payload = payload.encode("utf-8")
        return Response(code, body=payload)


class ReplayFetcher:
    """Serve hops from a recorded ``pages.csv`` directory instead of the network.

    Each row ``requested_url -> final_url`` is replayed as a single 301 hop
    followed by the final status. URLs absent from the fixture behave like a
    network failure.
    """

    def __init__(self, directory: str | Path):
        self.directory = Path(directory)
        self.calls = 0
        self._lock = threading.Lock()
        self._hops: dict[str, Response] = {}
        self._failures: set[str] = set()
        for row in read_pages_index(self.directory / "pages.csv"):
            status, code = parse_status_label(row["status"])
            requested, final = row["requested_url"], row["final_url"]
            if status is FetchStatus.TIMEOUT:
                self._failures.add(requested)
                continue
            if status is FetchStatus.TOO_MANY_REDIRECTS:
                self._hops[requested] = Response(301, location=requested)
                continue
            if final != requested:
                self._hops[requested] = Response(301, location=final)
            if status is FetchStatus.OK:
                body = (self.directory / row["body_file"]).read_bytes()
                self._hops[final] = Response(200, body=body)
            else:
                self._hops[final] = Response(code)

    def fetch(self, url: str) -> Response:
        with self._lock:
            self.calls += 1
        if url in self._failures or url not in self._hops:
            raise TimeoutError(f"{url} not in replay fixture")
        return self._hops[url]


class _NoRedirect(urllib.request.HTTPRedirectHandler):
    def redirect_request(self, req, fp, code, msg, headers, newurl):
        return None


class HttpFetcher:
    """Live single-hop fetcher built on urllib."""

    def __init__(self, timeout: float = 20.0, user_agent: str = "framecount/0.1"):
        self.timeout = timeout
        self.user_agent = user_agent
        self.calls = 0
        self._lock = threading.Lock()
        self._opener = urllib.request.build_opener(_NoRedirect)

    def fetch(self, url: str) -> Response:
        with self._lock:
            self.calls += 1
        req = urllib.request.Request(url, headers={"User-Agent": self.user_agent})
        try:
            with self._opener.open(req, timeout=self.timeout) as resp:
                return Response(resp.status, body=resp.read())
        except urllib.error.HTTPError as exc:
            if 300 <= exc.code < 400:
                return Response(exc.code, location=exc.headers.get("Location"))
            return Response(exc.code)
        except urllib.error.URLError as exc:
            raise TimeoutError(str(exc.reason)) from exc


PAGES_COLUMNS = ("requested_url", "final_url", "status", "body_file")


def read_pages_index(path: Path) -> list[dict[str, str]]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


class PageCache:
    """Write-once on-disk cache of :class:`FetchResult` keyed by requested URL.

    Bodies live in ``bodies/<sha256>`` next to a ``pages.csv`` index.
    """

    def __init__(self, directory: str | Path):
        self.directory = Path(directory)
        self._entries: dict[str, FetchResult] = {}
        self._lock = threading.Lock()
        index = self.directory / "pages.csv"
        if index.exists():
            for row in read_pages_index(index):
                status, code = parse_status_label(row["status"])
                body = (self.directory / row["body_file"]).read_bytes() if row["body_file"] else None
                self._entries[row["requested_url"]] = FetchResult(
                    row["requested_url"], row["final_url"], status, code, body
                )

    def __contains__(self, url: str) -> bool:
        return url in self._entries

    def __len__(self) -> int:
        return len(self._entries)

    def get(self, url: str) -> FetchResult | None:
        return self._entries.get(url)

    def put(self, result: FetchResult) -> FetchResult:
        """Store ``result`` unless the URL is cached; return the stored entry."""
        with self._lock:
            return self._entries.setdefault(result.requested_url, result)

    def save(self) -> None:
        bodies = self.directory / "bodies"
        bodies.mkdir(parents=True, exist_ok=True)
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(PAGES_COLUMNS)
        for url in sorted(self._entries):
            res = self._entries[url]
            body_file = ""
            if res.body is not None:
                body_file = f"bodies/{hashlib.sha256(res.body).hexdigest()}"
                target = self.directory / body_file
                if not target.exists():
                    target.write_bytes(res.body)
            writer.writerow([res.requested_url, res.final_url, res.status_label, body_file])
        (self.directory / "pages.csv").write_text(buf.getvalue(), encoding="utf-8")


def resolve_and_fetch(
    url: str,
    fetcher: Fetcher,
    max_redirects: int = DEFAULT_MAX_REDIRECTS,
    cache: PageCache | None = None,
) -> FetchResult:
    """Follow ``url`` through its redirect chain and fetch the final page.

    Parameters
    ----------
    url : str
        The link as it appears in the post (possibly a shortener).
    fetcher : Fetcher
        Single-hop fetcher; ``OSError`` from it is reported as a timeout.
    max_redirects : int
        Longest redirect chain accepted. Revisiting a URL counts as a loop.
    cache : PageCache, optional
        Consulted first; the result is stored on a miss.
    """
    if max_redirects < 0:
        raise ValueError("max_redirects must be >= 0")
    if cache is not None:
        hit = cache.get(url)
        if hit is not None:
            return hit

    current, seen, hops = url, set(), 0
    while True:
        if current in seen:
            result = FetchResult(url, current, FetchStatus.TOO_MANY_REDIRECTS)
            break
        seen.add(current)
        try:
            resp = fetcher.fetch(current)
        except OSError as exc:
            logger.debug("fetch failed for %s: %s", current, exc)
            result = FetchResult(url, current, FetchStatus.TIMEOUT)
            break
        code = resp.status_code
        if 300 <= code < 400 and resp.location:
            hops += 1
            nxt = urljoin(current, resp.location)
            if hops > max_redirects:
                result = FetchResult(url, nxt, FetchStatus.TOO_MANY_REDIRECTS)
                break
            current = nxt
            continue
        if 200 <= code < 300:
            result = FetchResult(url, current, FetchStatus.OK, body=resp.body or b"")
        else:
            result = FetchResult(url, current, FetchStatus.HTTP_ERROR, http_code=code)
        break

    if cache is not None:
        result = cache.put(result)
    return result


def fetch_all(
    urls: Iterable[str],
    fetcher: Fetcher,
    cache: PageCache,
    max_redirects: int = DEFAULT_MAX_REDIRECTS,
    workers: int = DEFAULT_FETCH_WORKERS,
) -> dict[str, FetchResult]:
    """Resolve every distinct URL once, with bounded parallelism.

    The returned mapping is keyed by requested URL and independent of the order
    in which fetches complete.
    """
    distinct = sorted(set(urls))
    if workers <= 1:
        results = [resolve_and_fetch(u, fetcher, max_redirects, cache) for u in distinct]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(lambda u: resolve_and_fetch(u, fetcher, max_redirects, cache), distinct))
    return dict(zip(distinct, results))


# ---------------------------------------------------------------------------
# text extraction
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ExtractedPage:
    final_url: str
    text: str
    parsable: bool
    token_estimate: int


SKIP_TAGS = frozenset(
    {"script", "style", "nav", "noscript", "template", "svg", "iframe", "object", "canvas", "head"}
)
_KEEP_IN_SKIPPED = frozenset({"title"})

_BINARY_MAGIC = (
    b"\xff\xd8\xff",  # JPEG
    b"\x89PNG\r\n\x1a\n",
    b"GIF87a",
    b"GIF89a",
    b"%PDF",
    b"RIFF",
    b"\x00\x00\x01\x00",  # ICO
    b"PK\x03\x04",
)


class _TextCollector(HTMLParser):
    def __init__(self):
        super().__init__(convert_charrefs=True)
        self.chunks: list[str] = []
        self._skip = 0
        self._keep = 0

    def handle_starttag(self, tag, attrs):
        if tag in SKIP_TAGS:
            self._skip += 1
        elif tag in _KEEP_IN_SKIPPED:
            self._keep += 1

    def handle_startendtag(self, tag, attrs):
        pass

    def handle_endtag(self, tag):
        if tag in SKIP_TAGS and self._skip:
            self._skip -= 1
        elif tag in _KEEP_IN_SKIPPED and self._keep:
            self._keep -= 1

    def handle_data(self, data):
        if not self._skip or self._keep:
            self.chunks.append(data)


def _looks_binary(body: bytes) -> bool:
    if body.startswith(_BINARY_MAGIC):
        return True
    head = body[:4096]
    if b"\x00" in head:
        return True
    decoded = head.decode("utf-8", errors="replace")
    return bool(decoded) and decoded.count("�") / len(decoded) > 0.05


def _unescape_fixed(text: str) -> str:
    # repeated unescaping makes the output stable under another extraction pass
    while True:
        nxt = html.unescape(text)
        if nxt == text:
            return text
        text = nxt


def visible_text(markup: str) -> str:
    parser = _TextCollector()
    parser.feed(markup)
    parser.close()
    text = " ".join(parser.chunks)
    text = _unescape_fixed(text).replace("<", " ").replace(">", " ")
    return " ".join(text.split())


def extract_text(
    body: bytes,
    unparsable_threshold: int = DEFAULT_UNPARSABLE_THRESHOLD,
    final_url: str = "",
) -> ExtractedPage:
    """Strip markup from a fetched page and flag pages with too little text.

    Script, style, navigation and head content (except the title) is dropped.
    The page is parsable when its whitespace-token count reaches
    ``unparsable_threshold``. Binary payloads such as images yield empty text.
    """
    if _looks_binary(body):
        return ExtractedPage(final_url, "", False, 0)
    text = visible_text(body.decode("utf-8", errors="replace"))
    n_tokens = len(text.split())
    return ExtractedPage(final_url, text, n_tokens >= unparsable_threshold, n_tokens)
