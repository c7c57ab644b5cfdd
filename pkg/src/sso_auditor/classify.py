"""Find login requests and responses in a trace and classify the protocol.

Detection is parameter-driven: an HTTP entry or an in-browser message is a
login request when its decoded parameter tree carries both ``client_id``
and ``redirect_uri`` and either the destination matches a known identity
provider endpoint or, as a generic fallback, the request also names a
``response_type``.  Responses are matched by delivery to the request's
``redirect_uri`` (or the equivalent postMessage target origin) together
with at least one token-bearing parameter.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable

from . import spar
from .domains import origin_of, url_host
from .exceptions import MalformedInput, MalformedJwt
from .trace import HttpEntry, IbcEvent, Trace

KIND_LOGIN_REQUEST = "login-request"
KIND_LOGIN_RESPONSE = "login-response"
KIND_TOKEN_REQUEST = "token-request"
KIND_TOKEN_RESPONSE = "token-response"

CHANNEL_QUERY = "http-query"
CHANNEL_FRAGMENT = "http-fragment"
CHANNEL_BODY = "http-body"
CHANNEL_POST_MESSAGE = "post-message"

REF_ENTRY = "entry"
REF_IBC = "ibc"

UNKNOWN_IDP = "unknown"

FLOW_CODE = "code"
FLOW_IMPLICIT = "implicit"
FLOW_HYBRID = "hybrid"
FLOW_UNKNOWN = "unknown"

PROTOCOL_OAUTH2 = "oauth2"
PROTOCOL_OIDC = "oidc"

TOKEN_PARAMS = ("code", "access_token", "id_token")

_PARAM_NAMES = (
    "client_id", "redirect_uri", "response_type", "scope", "state", "nonce",
    "code_challenge", "code_challenge_method", "code", "access_token",
    "token_type", "id_token", "client_secret",
)


@dataclass(frozen=True)
class SsoParams:
    client_id: str | None = None
    redirect_uri: str | None = None
    response_type: str | None = None
    scope: str | None = None
    state: str | None = None
    nonce: str | None = None
    code_challenge: str | None = None
    code_challenge_method: str | None = None
    code: str | None = None
    access_token: str | None = None
    token_type: str | None = None
    id_token: str | None = None
    client_secret: str | None = None
    at_hash: str | None = None

    def get(self, name: str) -> str | None:
        return getattr(self, name)


@dataclass(frozen=True)
class ParamLocation:
    channel: str
    path: tuple[str, ...]
    value: str

    def render(self) -> str:
        return f"{self.channel}:{spar.render_path(self.path)}"


@dataclass
class SsoMessage:
    kind: str
    entry_ref: int
    ref_kind: str  # "entry" or "ibc"
    channel: str
    idp: str
    params: SsoParams
    locations: dict[str, ParamLocation] = field(default_factory=dict)


# ---------------------------------------------------------------------------
# identity provider registry

@dataclass(frozen=True)
class IdpEndpoints:
    name: str
    authorization_patterns: tuple[str, ...] = ()
    token_patterns: tuple[str, ...] = ()


@dataclass(frozen=True)
class IdpRegistry:
    idps: tuple[IdpEndpoints, ...]

    def match_authorization(self, url: str) -> str | None:
        return self._match(url, "authorization_patterns")

    def match_token(self, url: str) -> str | None:
        return self._match(url, "token_patterns")

    def match_origin(self, origin: str) -> str | None:
        host = url_host(origin) if "://" in origin else origin.lower()
        if not host:
            return None
        for idp in self.idps:
            for pattern in idp.authorization_patterns + idp.token_patterns:
                if _pattern_host(pattern) == host:
                    return idp.name
        return None

    def _match(self, url: str, attr: str) -> str | None:
        from urllib.parse import urlsplit
        parts = urlsplit(url)
        host = (parts.hostname or "").lower()
        path = parts.path or "/"
        for idp in self.idps:
            for pattern in getattr(idp, attr):
                p_host, _, p_path = pattern.partition("/")
                if host == p_host.lower() and path.startswith("/" + p_path):
                    return idp.name
        return None


def _pattern_host(pattern: str) -> str:
    return pattern.partition("/")[0].lower()


def default_registry() -> IdpRegistry:
    return IdpRegistry(idps=(
        IdpEndpoints(
            name="Google",
            authorization_patterns=(
                "accounts.google.com/o/oauth2",
                "accounts.google.com/signin/oauth",
                "accounts.google.com/gsi",
            ),
            token_patterns=(
                "oauth2.googleapis.com/token",
                "www.googleapis.com/oauth2",
                "accounts.google.com/o/oauth2/token",
            ),
        ),
        IdpEndpoints(
            name="Facebook",
            authorization_patterns=(
                "www.facebook.com/dialog/oauth",
                "www.facebook.com/v",
                "m.facebook.com/dialog/oauth",
                "www.facebook.com/login",
            ),
            token_patterns=(
                "graph.facebook.com/oauth/access_token",
                "graph.facebook.com/v",
            ),
        ),
        IdpEndpoints(
            name="Apple",
            authorization_patterns=("appleid.apple.com/auth/authorize",),
            token_patterns=("appleid.apple.com/auth/token",),
        ),
    ))


def load_registry(data: bytes | str) -> IdpRegistry:
    """Registry config: {"idps": [{"name", "authorization_patterns", "token_patterns"}]}"""
    try:
        doc = json.loads(data)
    except ValueError as exc:
        raise MalformedInput(f"registry is not JSON: {exc}") from exc
    if not isinstance(doc, dict) or not isinstance(doc.get("idps"), list):
        raise MalformedInput("registry document needs an idps list")
    idps = []
    for item in doc["idps"]:
        if not isinstance(item, dict) or "name" not in item:
            raise MalformedInput("registry idp entries need a name")
        idps.append(IdpEndpoints(
            name=str(item["name"]),
            authorization_patterns=tuple(item.get("authorization_patterns", ())),
            token_patterns=tuple(item.get("token_patterns", ())),
        ))
    return IdpRegistry(idps=tuple(idps))


# ---------------------------------------------------------------------------
# parameter surfaces

_PARSED_BODY_MIMES = ("application/x-www-form-urlencoded", "application/json",
                      "text/plain")


def entry_param_trees(entry: HttpEntry, max_depth: int = spar.DEFAULT_MAX_DEPTH,
                      max_nodes: int = spar.DEFAULT_MAX_NODES,
                      ) -> list[tuple[str, spar.SparNode]]:
    """Decoded parameter surfaces of a request: query, fragment, body."""
    from urllib.parse import urlsplit
    parts = urlsplit(entry.request.url)
    trees = []
    if parts.query:
        trees.append((CHANNEL_QUERY,
                      spar.decode_query_string(parts.query, max_depth, max_nodes)))
    if parts.fragment:
        frag = parts.fragment
        if "=" in frag:
            trees.append((CHANNEL_FRAGMENT,
                          spar.decode_query_string(frag, max_depth, max_nodes)))
        else:
            trees.append((CHANNEL_FRAGMENT, spar.decode(frag, max_depth, max_nodes)))
    body = entry.request.body
    if body:
        mime = (entry.request.body_mime or "").split(";")[0].strip().lower()
        if mime in _PARSED_BODY_MIMES or not mime:
            if mime == "application/x-www-form-urlencoded":
                trees.append((CHANNEL_BODY,
                              spar.decode_query_string(body, max_depth, max_nodes)))
            else:
                trees.append((CHANNEL_BODY, spar.decode(body, max_depth, max_nodes)))
    return trees


def ibc_param_tree(event: IbcEvent, max_depth: int = spar.DEFAULT_MAX_DEPTH,
                   max_nodes: int = spar.DEFAULT_MAX_NODES) -> spar.SparNode:
    return spar.decode(event.payload, max_depth, max_nodes)


def extract_params(trees: Iterable[tuple[str, spar.SparNode]],
                   ) -> tuple[SsoParams, dict[str, ParamLocation]]:
    """First match per parameter name across the given trees, in order."""
    values: dict[str, str] = {}
    locations: dict[str, ParamLocation] = {}
    for channel, tree in trees:
        for name in _PARAM_NAMES:
            if name in values:
                continue
            hits = spar.search(tree, name)
            if hits:
                path, node = hits[0]
                values[name] = node.raw
                locations[name] = ParamLocation(channel=channel, path=path,
                                                value=node.raw)
    at_hash = None
    id_token = values.get("id_token")
    if id_token:
        try:
            _, payload, _ = spar.jwt_parts(id_token)
        except MalformedJwt:
            payload = {}
        raw = payload.get("at_hash")
        if isinstance(raw, str):
            at_hash = raw
    return SsoParams(**values, at_hash=at_hash), locations


# ---------------------------------------------------------------------------
# login request / response detection

def detect_login_requests(trace: Trace, registry: IdpRegistry | None = None,
                          ) -> list[SsoMessage]:
    registry = registry or default_registry()
    messages: list[SsoMessage] = []
    for index, entry in enumerate(trace.entries):
        trees = entry_param_trees(entry)
        params, locations = extract_params(trees)
        if not (params.client_id and params.redirect_uri):
            continue
        idp = registry.match_authorization(entry.request.url)
        if idp is None and params.response_type is None:
            continue
        channel = locations["client_id"].channel
        messages.append(SsoMessage(
            kind=KIND_LOGIN_REQUEST, entry_ref=index, ref_kind=REF_ENTRY,
            channel=channel, idp=idp or UNKNOWN_IDP, params=params,
            locations=locations,
        ))
    for index, event in enumerate(trace.ibc_events):
        tree = ibc_param_tree(event)
        params, locations = extract_params([(CHANNEL_POST_MESSAGE, tree)])
        if not (params.client_id and params.redirect_uri):
            continue
        idp = registry.match_origin(event.target_origin)
        if idp is None and params.response_type is None:
            continue
        messages.append(SsoMessage(
            kind=KIND_LOGIN_REQUEST, entry_ref=index, ref_kind=REF_IBC,
            channel=CHANNEL_POST_MESSAGE, idp=idp or UNKNOWN_IDP, params=params,
            locations=locations,
        ))
    return messages


def dedupe_login_requests(messages: list[SsoMessage]) -> list[SsoMessage]:
    """One login request per (idp, redirect_uri host+path); first wins."""
    seen: set[tuple[str, str]] = set()
    out = []
    for msg in messages:
        key = (msg.idp, _redirect_prefix_key(msg.params.redirect_uri or ""))
        if key in seen:
            continue
        seen.add(key)
        out.append(msg)
    return out


def _redirect_prefix_key(redirect_uri: str) -> str:
    from urllib.parse import urlsplit
    parts = urlsplit(redirect_uri)
    return f"{(parts.hostname or '').lower()}{parts.path}"


def _redirect_prefix(redirect_uri: str) -> str:
    from urllib.parse import urlsplit
    parts = urlsplit(redirect_uri)
    return f"{parts.scheme.lower()}://{(parts.netloc or '').lower()}{parts.path}"


def _entry_time(trace: Trace, msg: SsoMessage):
    if msg.ref_kind == REF_ENTRY:
        return trace.entries[msg.entry_ref].started_at
    return trace.ibc_events[msg.entry_ref].at


def match_login_response(trace: Trace, request: SsoMessage) -> SsoMessage | None:
    """First later delivery of a token to the request's redirect_uri."""
    redirect_uri = request.params.redirect_uri
    if not redirect_uri:
        return None
    prefix = _redirect_prefix(redirect_uri)
    target_origin = origin_of(redirect_uri)
    req_time = _entry_time(trace, request)

    candidates: list[tuple[object, int, SsoMessage]] = []

    start_index = request.entry_ref + 1 if request.ref_kind == REF_ENTRY else 0
    for index in range(start_index, len(trace.entries)):
        entry = trace.entries[index]
        if entry.started_at < req_time:
            continue
        if not _url_prefix_match(entry.request.url, prefix):
            continue
        trees = entry_param_trees(entry)
        hit = _token_channel(trees)
        if hit is None:
            continue
        channel, _ = hit
        params, locations = extract_params(trees)
        candidates.append((entry.started_at, 0, SsoMessage(
            kind=KIND_LOGIN_RESPONSE, entry_ref=index, ref_kind=REF_ENTRY,
            channel=channel, idp=request.idp, params=params, locations=locations,
        )))
    ibc_start = request.entry_ref + 1 if request.ref_kind == REF_IBC else 0
    for index in range(ibc_start, len(trace.ibc_events)):
        event = trace.ibc_events[index]
        if event.at < req_time:
            continue
        if event.target_origin not in ("*", target_origin):
            continue
        tree = ibc_param_tree(event)
        if not any(spar.search(tree, name) for name in TOKEN_PARAMS):
            continue
        params, locations = extract_params([(CHANNEL_POST_MESSAGE, tree)])
        candidates.append((event.at, 1, SsoMessage(
            kind=KIND_LOGIN_RESPONSE, entry_ref=index, ref_kind=REF_IBC,
            channel=CHANNEL_POST_MESSAGE, idp=request.idp, params=params,
            locations=locations,
        )))
    if not candidates:
        return None
    candidates.sort(key=lambda item: (item[0], item[1]))
    return candidates[0][2]


def _url_prefix_match(url: str, prefix: str) -> bool:
    from urllib.parse import urlsplit
    parts = urlsplit(url)
    normalized = f"{parts.scheme.lower()}://{(parts.netloc or '').lower()}{parts.path}"
    return normalized.startswith(prefix)


def _token_channel(trees: list[tuple[str, spar.SparNode]]
                   ) -> tuple[str, str] | None:
    for channel, tree in trees:
        for name in TOKEN_PARAMS:
            if spar.search(tree, name):
                return channel, name
    return None


# ---------------------------------------------------------------------------
# protocol and flow classification

def classify_protocol(request: SsoMessage | None,
                      response: SsoMessage | None = None) -> str:
    scope = (request.params.scope or "") if request else ""
    if "openid" in scope.split():
        return PROTOCOL_OIDC
    response_type = (request.params.response_type or "") if request else ""
    if "id_token" in response_type.split():
        return PROTOCOL_OIDC
    if response is not None and response.params.id_token:
        return PROTOCOL_OIDC
    return PROTOCOL_OAUTH2


_FLOW_TOKENS = frozenset({"code", "token", "id_token"})


def classify_requested_flow(response_type: str | None) -> str:
    if response_type is None:
        return FLOW_UNKNOWN
    tokens = set(response_type.split())
    if not tokens or not tokens <= _FLOW_TOKENS:
        return FLOW_UNKNOWN
    if tokens == {"code"}:
        return FLOW_CODE
    if "code" in tokens:
        return FLOW_HYBRID
    return FLOW_IMPLICIT


def classify_returned_flow(response: SsoMessage | None) -> str:
    if response is None:
        return FLOW_UNKNOWN
    params = response.params
    has_code = params.code is not None
    has_token = params.access_token is not None or params.id_token is not None
    if has_code and has_token:
        return FLOW_HYBRID
    if has_code:
        return FLOW_CODE
    if has_token:
        return FLOW_IMPLICIT
    return FLOW_UNKNOWN


def returned_token_kinds(response: SsoMessage | None) -> set[str]:
    if response is None:
        return set()
    kinds = set()
    if response.params.code is not None:
        kinds.add("code")
    if response.params.access_token is not None:
        kinds.add("token")
    if response.params.id_token is not None:
        kinds.add("id_token")
    return kinds


def requested_token_kinds(request: SsoMessage | None) -> set[str]:
    if request is None or request.params.response_type is None:
        return set()
    tokens = set(request.params.response_type.split())
    return tokens & _FLOW_TOKENS


def pair_runs(run1_messages: list[SsoMessage], run2_messages: list[SsoMessage],
              ) -> list[tuple[SsoMessage, SsoMessage | None]]:
    """Align messages of two recordings of the same login procedure."""
    def key(msg: SsoMessage) -> tuple[str, str, str]:
        return (msg.kind, msg.idp,
                _redirect_prefix_key(msg.params.redirect_uri or ""))

    used: set[int] = set()
    pairs: list[tuple[SsoMessage, SsoMessage | None]] = []
    for msg in run1_messages:
        mate = None
        for index, other in enumerate(run2_messages):
            if index not in used and key(other) == key(msg):
                used.add(index)
                mate = other
                break
        pairs.append((msg, mate))
    return pairs
