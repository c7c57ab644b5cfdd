"""Typed model of one recorded login attempt.

A trace bundles a browser HTTP archive (HAR 1.2), a small metadata document
describing the capture, and an optional list of in-browser communication
events (postMessage calls and URL fragment changes).  Entries are kept in
start-time order; ties keep file order.  All timestamps are UTC; naive
timestamps are assumed UTC.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from urllib.parse import parse_qsl, urljoin, urlsplit

from .exceptions import EntryError, MalformedInput, MissingMetadataField

PROFILE_LOGIN_RUN = "login-run"
PROFILE_CONSENT_VISIT = "consent-given-visit"
PROFILE_NO_CONSENT_VISIT = "no-consent-visit"
PROFILE_KINDS = frozenset({
    PROFILE_LOGIN_RUN, PROFILE_CONSENT_VISIT, PROFILE_NO_CONSENT_VISIT,
})

IBC_POST_MESSAGE = "post-message"
IBC_FRAGMENT_CHANGE = "fragment-change"
IBC_KINDS = frozenset({IBC_POST_MESSAGE, IBC_FRAGMENT_CHANGE})

REDIRECT_STATUSES = frozenset({301, 302, 303, 307, 308})

# Rules only scan retained bytes; larger response bodies are cut here.
MAX_BODY_CHARS = 5 * 1024 * 1024


@dataclass(frozen=True)
class TraceMetadata:
    domain: str
    page_url: str
    captured_at: datetime
    profile_kind: str
    run_index: int
    idp_label: str | None = None

    def __post_init__(self):
        if self.profile_kind not in PROFILE_KINDS:
            raise MalformedInput(f"unknown profile_kind: {self.profile_kind!r}")
        if self.run_index < 1:
            raise MalformedInput("run_index must be >= 1")
        if self.profile_kind == PROFILE_LOGIN_RUN and self.run_index not in (1, 2):
            raise MalformedInput("login-run traces use run_index 1 or 2")


@dataclass(frozen=True)
class HttpRequest:
    method: str
    url: str
    headers: tuple[tuple[str, str], ...] = ()
    query_params: tuple[tuple[str, str], ...] = ()
    body: str | None = None
    body_mime: str | None = None

    def header(self, name: str) -> str | None:
        wanted = name.lower()
        for key, value in self.headers:
            if key.lower() == wanted:
                return value
        return None


@dataclass(frozen=True)
class HttpResponse:
    status: int
    headers: tuple[tuple[str, str], ...] = ()
    redirect_target: str | None = None
    body: str | None = None
    body_mime: str | None = None
    body_truncated: bool = False

    def header(self, name: str) -> str | None:
        wanted = name.lower()
        for key, value in self.headers:
            if key.lower() == wanted:
                return value
        return None


@dataclass(frozen=True)
class HttpEntry:
    request: HttpRequest
    response: HttpResponse
    started_at: datetime
    initiator: int | None = None

    @property
    def url(self) -> str:
        return self.request.url


@dataclass(frozen=True)
class IbcEvent:
    kind: str
    source_origin: str
    target_origin: str
    payload: str
    at: datetime

    def __post_init__(self):
        if self.kind not in IBC_KINDS:
            raise MalformedInput(f"unknown ibc event kind: {self.kind!r}")


@dataclass(frozen=True)
class Trace:
    metadata: TraceMetadata
    entries: tuple[HttpEntry, ...] = ()
    ibc_events: tuple[IbcEvent, ...] = ()


# ---------------------------------------------------------------------------
# timestamps

def parse_timestamp(text: str) -> datetime:
    """ISO 8601, tolerant of a trailing Z.  Naive values become UTC."""
    if not isinstance(text, str) or not text:
        raise MalformedInput(f"bad timestamp: {text!r}")
    candidate = text.strip()
    if candidate.endswith(("Z", "z")):
        candidate = candidate[:-1] + "+00:00"
    try:
        stamp = datetime.fromisoformat(candidate)
    except ValueError as exc:
        raise MalformedInput(f"bad timestamp: {text!r}") from exc
    if stamp.tzinfo is None:
        stamp = stamp.replace(tzinfo=timezone.utc)
    return stamp.astimezone(timezone.utc)


def format_timestamp(stamp: datetime) -> str:
    return stamp.astimezone(timezone.utc).isoformat().replace("+00:00", "Z")


# ---------------------------------------------------------------------------
# HAR parsing

def parse_har(data: bytes | str, metadata: TraceMetadata | None = None) -> Trace:
    """Parse a HAR 1.2 document.  Unknown fields are ignored, never fatal.

    Raises MalformedInput when the document is not JSON or has no
    log.entries list, and EntryError for the first unreadable entry.
    """
    doc = _load_json(data)
    log = doc.get("log") if isinstance(doc, dict) else None
    raw_entries = log.get("entries") if isinstance(log, dict) else None
    if not isinstance(raw_entries, list):
        raise MalformedInput("document has no log.entries list")

    entries = []
    for index, raw in enumerate(raw_entries):
        entries.append(_parse_entry(index, raw))
    entries.sort(key=lambda pair: pair[1].started_at)  # stable: keeps file order
    ordered = tuple(entry for _, entry in entries)

    ibc = tuple(_parse_ibc_list(log.get("_ibc"))) if isinstance(log, dict) else ()
    meta = metadata or _placeholder_metadata(ordered)
    return Trace(metadata=meta, entries=ordered, ibc_events=ibc)


def _load_json(data: bytes | str) -> object:
    if isinstance(data, bytes):
        try:
            data = data.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise MalformedInput(f"input is not UTF-8: {exc}") from exc
    try:
        return json.loads(data)
    except ValueError as exc:
        raise MalformedInput(f"input is not JSON: {exc}") from exc


def _parse_entry(index: int, raw: object) -> tuple[int, HttpEntry]:
    if not isinstance(raw, dict):
        raise EntryError(index, "entry is not an object")
    request = raw.get("request")
    response = raw.get("response")
    if not isinstance(request, dict) or not isinstance(response, dict):
        raise EntryError(index, "entry lacks request or response")

    url = request.get("url")
    if not isinstance(url, str) or not url:
        raise EntryError(index, "request has no url")
    parts = urlsplit(url)
    if not parts.scheme or not parts.netloc:
        raise EntryError(index, f"url is not absolute: {url!r}")

    method = request.get("method") or "GET"
    try:
        started_at = parse_timestamp(raw.get("startedDateTime", ""))
    except MalformedInput as exc:
        raise EntryError(index, str(exc)) from exc

    status = response.get("status")
    if not isinstance(status, int) or not 100 <= status <= 599:
        raise EntryError(index, f"status out of range: {status!r}")

    req_headers = _parse_headers(request.get("headers"))
    resp_headers = _parse_headers(response.get("headers"))

    body, body_mime = _parse_post_data(request.get("postData"))
    resp_body, resp_mime, truncated = _parse_content(response.get("content"))

    redirect_target = None
    if status in REDIRECT_STATUSES:
        location = _header_value(resp_headers, "location")
        if location is None:
            redirect_url = response.get("redirectURL")
            if isinstance(redirect_url, str) and redirect_url:
                location = redirect_url
        if location:
            redirect_target = urljoin(url, location)

    initiator = raw.get("_initiator_index")
    if not isinstance(initiator, int):
        initiator = None

    entry = HttpEntry(
        request=HttpRequest(
            method=str(method),
            url=url,
            headers=req_headers,
            query_params=tuple(parse_qsl(parts.query, keep_blank_values=True)),
            body=body,
            body_mime=body_mime,
        ),
        response=HttpResponse(
            status=status,
            headers=resp_headers,
            redirect_target=redirect_target,
            body=resp_body,
            body_mime=resp_mime,
            body_truncated=truncated,
        ),
        started_at=started_at,
        initiator=initiator,
    )
    return index, entry


def _parse_headers(raw: object) -> tuple[tuple[str, str], ...]:
    if not isinstance(raw, list):
        return ()
    out = []
    for item in raw:
        if isinstance(item, dict):
            name, value = item.get("name"), item.get("value")
            if isinstance(name, str) and isinstance(value, str):
                out.append((name, value))
    return tuple(out)


def _header_value(headers: tuple[tuple[str, str], ...], name: str) -> str | None:
    for key, value in headers:
        if key.lower() == name:
            return value
    return None


def _parse_post_data(raw: object) -> tuple[str | None, str | None]:
    if not isinstance(raw, dict):
        return None, None
    text = raw.get("text")
    mime = raw.get("mimeType")
    return (text if isinstance(text, str) else None,
            mime if isinstance(mime, str) else None)


def _parse_content(raw: object) -> tuple[str | None, str | None, bool]:
    if not isinstance(raw, dict):
        return None, None, False
    text = raw.get("text")
    mime = raw.get("mimeType")
    truncated = False
    if isinstance(text, str) and len(text) > MAX_BODY_CHARS:
        text = text[:MAX_BODY_CHARS]
        truncated = True
    return (text if isinstance(text, str) else None,
            mime if isinstance(mime, str) else None,
            truncated)


def _placeholder_metadata(entries: tuple[HttpEntry, ...]) -> TraceMetadata:
    from .domains import registrable_domain, url_host
    if entries:
        first = entries[0]
        return TraceMetadata(
            domain=registrable_domain(url_host(first.url)),
            page_url=first.url,
            captured_at=first.started_at,
            profile_kind=PROFILE_LOGIN_RUN,
            run_index=1,
        )
    return TraceMetadata(
        domain="unknown.invalid",
        page_url="https://unknown.invalid/",
        captured_at=datetime.fromtimestamp(0, tz=timezone.utc),
        profile_kind=PROFILE_LOGIN_RUN,
        run_index=1,
    )


# ---------------------------------------------------------------------------
# bundles: HAR + metadata + optional IBC sidecar

_METADATA_REQUIRED = ("domain", "page_url", "captured_at", "profile_kind",
                      "run_index")


def parse_metadata(data: bytes | str) -> TraceMetadata:
    doc = _load_json(data)
    if not isinstance(doc, dict):
        raise MalformedInput("metadata document is not a JSON object")
    for key in _METADATA_REQUIRED:
        if key not in doc:
            raise MissingMetadataField(key)
    run_index = doc["run_index"]
    if not isinstance(run_index, int):
        raise MalformedInput(f"run_index is not an integer: {run_index!r}")
    idp = doc.get("idp")
    return TraceMetadata(
        domain=str(doc["domain"]),
        page_url=str(doc["page_url"]),
        captured_at=parse_timestamp(doc["captured_at"]),
        profile_kind=str(doc["profile_kind"]),
        run_index=run_index,
        idp_label=str(idp) if idp is not None else None,
    )


def parse_ibc(data: bytes | str) -> tuple[IbcEvent, ...]:
    doc = _load_json(data)
    if not isinstance(doc, list):
        raise MalformedInput("ibc document is not a JSON array")
    return tuple(_parse_ibc_list(doc))


def _parse_ibc_list(raw: object) -> list[IbcEvent]:
    if not isinstance(raw, list):
        return []
    events = []
    for item in raw:
        if not isinstance(item, dict):
            raise MalformedInput("ibc event is not an object")
        for key in ("kind", "source_origin", "target_origin", "payload", "at"):
            if key not in item:
                raise MalformedInput(f"ibc event lacks {key}")
        target = str(item["target_origin"])
        if target != "*" and not _is_origin(target):
            raise MalformedInput(f"bad target_origin: {target!r}")
        source = str(item["source_origin"])
        if not _is_origin(source):
            raise MalformedInput(f"bad source_origin: {source!r}")
        events.append(IbcEvent(
            kind=str(item["kind"]),
            source_origin=source,
            target_origin=target,
            payload=str(item["payload"]),
            at=parse_timestamp(item["at"]),
        ))
    events.sort(key=lambda ev: ev.at)
    return events


def _is_origin(value: str) -> bool:
    parts = urlsplit(value)
    return parts.scheme in ("http", "https") and bool(parts.netloc) \
        and not parts.path and not parts.query and not parts.fragment


def parse_trace_bundle(har: bytes | str, metadata: bytes | str,
                       ibc: bytes | str | None = None) -> Trace:
    meta = parse_metadata(metadata)
    trace = parse_har(har, metadata=meta)
    if ibc is not None:
        trace = replace(trace, ibc_events=parse_ibc(ibc))
    return trace


# ---------------------------------------------------------------------------
# serialization (lossless for every field this model reads)

def trace_to_dict(trace: Trace) -> dict:
    meta = trace.metadata
    return {
        "metadata": {
            "domain": meta.domain,
            "idp": meta.idp_label,
            "page_url": meta.page_url,
            "captured_at": format_timestamp(meta.captured_at),
            "profile_kind": meta.profile_kind,
            "run_index": meta.run_index,
        },
        "entries": [
            {
                "request": {
                    "method": e.request.method,
                    "url": e.request.url,
                    "headers": [list(h) for h in e.request.headers],
                    "query_params": [list(q) for q in e.request.query_params],
                    "body": e.request.body,
                    "body_mime": e.request.body_mime,
                },
                "response": {
                    "status": e.response.status,
                    "headers": [list(h) for h in e.response.headers],
                    "redirect_target": e.response.redirect_target,
                    "body": e.response.body,
                    "body_mime": e.response.body_mime,
                    "body_truncated": e.response.body_truncated,
                },
                "started_at": format_timestamp(e.started_at),
                "initiator": e.initiator,
            }
            for e in trace.entries
        ],
        "ibc_events": [
            {
                "kind": ev.kind,
                "source_origin": ev.source_origin,
                "target_origin": ev.target_origin,
                "payload": ev.payload,
                "at": format_timestamp(ev.at),
            }
            for ev in trace.ibc_events
        ],
    }


def trace_from_dict(doc: dict) -> Trace:
    meta = doc["metadata"]
    metadata = TraceMetadata(
        domain=meta["domain"],
        page_url=meta["page_url"],
        captured_at=parse_timestamp(meta["captured_at"]),
        profile_kind=meta["profile_kind"],
        run_index=meta["run_index"],
        idp_label=meta.get("idp"),
    )
    entries = tuple(
        HttpEntry(
            request=HttpRequest(
                method=e["request"]["method"],
                url=e["request"]["url"],
                headers=tuple(tuple(h) for h in e["request"]["headers"]),
                query_params=tuple(tuple(q) for q in e["request"]["query_params"]),
                body=e["request"]["body"],
                body_mime=e["request"]["body_mime"],
            ),
            response=HttpResponse(
                status=e["response"]["status"],
                headers=tuple(tuple(h) for h in e["response"]["headers"]),
                redirect_target=e["response"]["redirect_target"],
                body=e["response"]["body"],
                body_mime=e["response"]["body_mime"],
                body_truncated=e["response"]["body_truncated"],
            ),
            started_at=parse_timestamp(e["started_at"]),
            initiator=e["initiator"],
        )
        for e in doc["entries"]
    )
    events = tuple(
        IbcEvent(
            kind=ev["kind"],
            source_origin=ev["source_origin"],
            target_origin=ev["target_origin"],
            payload=ev["payload"],
            at=parse_timestamp(ev["at"]),
        )
        for ev in doc["ibc_events"]
    )
    return Trace(metadata=metadata, entries=entries, ibc_events=events)


# ---------------------------------------------------------------------------
# redirect chains

def redirect_chain(trace: Trace, start: int) -> list[int]:
    """Follow 3xx Location targets forward through the trace.

    Matching is by URL equality against later entries only, so chains are
    acyclic by construction.  The chain always contains ``start``.
    """
    if not 0 <= start < len(trace.entries):
        raise IndexError(f"entry index out of range: {start}")
    chain = [start]
    current = start
    while True:
        target = trace.entries[current].response.redirect_target
        if target is None:
            break
        follow = None
        for idx in range(current + 1, len(trace.entries)):
            if _urls_equal(trace.entries[idx].request.url, target):
                follow = idx
                break
        if follow is None:
            break
        chain.append(follow)
        current = follow
    return chain


def _urls_equal(a: str, b: str) -> bool:
    if a == b:
        return True
    return a.split("#", 1)[0] == b.split("#", 1)[0]
