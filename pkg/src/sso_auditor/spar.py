"""Recursive decoding of login-protocol parameter values into searchable trees.

Login traffic hides parameters inside each other: JWTs inside fragments,
URLs inside percent-encoded JSON inside query strings.  ``decode`` unwraps a
single string value into a tree in which every recognized layer becomes an
inner node and every opaque value becomes a leaf.  The codec attempt order
is fixed so that the same input always yields the same tree:

1. JWT          three dot-separated base64url segments, header is a JSON
                object carrying "alg"
2. JSON         objects and arrays only; bare scalars stay leaves
3. form pairs   "k=v" joined by "&"; keys restricted to a token charset so
                URLs and base64 padding are not misread as forms
4. nested URL   absolute http(s) URL, split into components plus a
                query-string subtree
5. percent      applied only when unquoting changes the string and the
                decoded string itself has structure
6. base64(url)  length >= 8 and a multiple of 4, canonical alphabet, and
                the decoded bytes are printable UTF-8 or parse as JSON

Stops are silent: depth and node budgets truncate the tree, they never
raise.  A node is a leaf exactly when it has no children.
"""

from __future__ import annotations

import base64
import binascii
import json
import re
from dataclasses import dataclass, field
from typing import Iterator
from urllib.parse import parse_qsl, unquote, urlsplit

from .exceptions import MalformedJwt

LEAF = "leaf"
PERCENT = "percent"
WWW_FORM = "www-form"
QUERY_STRING = "query-string"
JSON_DOC = "json"
JWT = "jwt"
BASE64 = "base64"
BASE64URL = "base64url"
NESTED_URL = "nested-url"

DECODINGS = frozenset({
    LEAF, PERCENT, WWW_FORM, QUERY_STRING, JSON_DOC, JWT, BASE64, BASE64URL,
    NESTED_URL,
})

DEFAULT_MAX_DEPTH = 8
DEFAULT_MAX_NODES = 10_000

Path = tuple[str, ...]

_B64URL_SEGMENT = re.compile(r"[A-Za-z0-9_-]+={0,2}")
_B64_STD = re.compile(r"[A-Za-z0-9+/]+={0,2}")
_B64_URL = re.compile(r"[A-Za-z0-9_-]+={0,2}")
# Keys a form pair may use.  Deliberately narrow: misreading a URL or a JWT
# as a form creates false structure that search() would then report.
_FORM_KEY = re.compile(r"[A-Za-z0-9_.%+~\[\]-]+")
_ABS_URL = re.compile(r"https?://", re.IGNORECASE)


@dataclass
class SparNode:
    """One decoded layer.  ``children`` maps path segments to subtrees."""

    raw: str
    decoding: str = LEAF
    children: dict[str, SparNode] = field(default_factory=dict)
    depth: int = 0

    @property
    def is_leaf(self) -> bool:
        return not self.children

    def to_dict(self) -> dict:
        out: dict = {"raw": self.raw, "decoding": self.decoding, "children": {}}
        for segment, child in self.children.items():
            out["children"][segment] = child.to_dict()
        return out

    def to_json(self, indent: int | None = 2) -> str:
        return json.dumps(self.to_dict(), indent=indent, ensure_ascii=False)


class _Budget:
    __slots__ = ("used", "limit")

    def __init__(self, limit: int):
        self.used = 0
        self.limit = limit

    def take(self) -> bool:
        if self.used >= self.limit:
            return False
        self.used += 1
        return True


def decode(value: str, max_depth: int = DEFAULT_MAX_DEPTH,
           max_nodes: int = DEFAULT_MAX_NODES) -> SparNode:
    """Decode one string into a tree.  Never raises on hostile input."""
    if max_depth < 1 or max_nodes < 1:
        raise ValueError("max_depth and max_nodes must be >= 1")
    budget = _Budget(max_nodes)
    budget.take()  # root
    return _decode_node(value, 0, max_depth, budget)


def decode_query_string(value: str, max_depth: int = DEFAULT_MAX_DEPTH,
                        max_nodes: int = DEFAULT_MAX_NODES) -> SparNode:
    """Decode a string already known to be a URL query component.

    Unlike ``decode`` this skips the codec heuristics for the top layer, so
    even a single blank parameter ("flag=") becomes a child.
    """
    if max_depth < 1 or max_nodes < 1:
        raise ValueError("max_depth and max_nodes must be >= 1")
    budget = _Budget(max_nodes)
    budget.take()
    node = SparNode(raw=value, decoding=QUERY_STRING, depth=0)
    _attach_form_children(node, value, max_depth, budget, label=QUERY_STRING)
    if not node.children:
        node.decoding = LEAF
    return node


# ---------------------------------------------------------------------------
# pipeline

def _decode_node(value: str, depth: int, max_depth: int, budget: _Budget) -> SparNode:
    node = SparNode(raw=value, decoding=LEAF, depth=depth)
    if depth >= max_depth:
        return node
    for attempt in (_try_jwt, _try_json, _try_form, _try_url, _try_percent,
                    _try_base64):
        if attempt(node, value, max_depth, budget):
            break
    if not node.children:
        node.decoding = LEAF
    return node


def _add_child(node: SparNode, segment: str, value: str, max_depth: int,
               budget: _Budget) -> bool:
    if node.depth >= max_depth or not budget.take():
        return False
    key = segment
    n = 2
    while key in node.children:
        key = f"{segment}#{n}"
        n += 1
    node.children[key] = _decode_node(value, node.depth + 1, max_depth, budget)
    return True


def _try_jwt(node: SparNode, value: str, max_depth: int, budget: _Budget) -> bool:
    segments = value.split(".")
    if len(segments) != 3:
        return False
    header_seg, payload_seg, signature_seg = segments
    if not (_B64URL_SEGMENT.fullmatch(header_seg)
            and _B64URL_SEGMENT.fullmatch(payload_seg)):
        return False
    if signature_seg and not _B64URL_SEGMENT.fullmatch(signature_seg):
        return False
    header_text = _b64url_to_text(header_seg)
    if header_text is None:
        return False
    try:
        header = json.loads(header_text)
    except ValueError:
        return False
    if not isinstance(header, dict) or "alg" not in header:
        return False
    payload_text = _b64url_to_text(payload_seg)
    node.decoding = JWT
    _add_child(node, "header", header_text, max_depth, budget)
    # an undecodable payload stays opaque; the signature always does
    _add_child(node, "payload",
               payload_text if payload_text is not None else payload_seg,
               max_depth, budget)
    if node.children:
        if budget.take():
            node.children["signature"] = SparNode(
                raw=signature_seg, decoding=LEAF, depth=node.depth + 1)
    return bool(node.children)


def _try_json(node: SparNode, value: str, max_depth: int, budget: _Budget) -> bool:
    stripped = value.strip()
    if not stripped or stripped[0] not in "{[":
        return False
    try:
        doc = json.loads(stripped)
    except ValueError:
        return False
    if not isinstance(doc, (dict, list)) or not doc:
        return False
    node.decoding = JSON_DOC
    items = doc.items() if isinstance(doc, dict) else enumerate(doc)
    for key, child in items:
        if not _add_child(node, str(key), _json_child_text(child), max_depth,
                          budget):
            break
    return bool(node.children)


def _json_child_text(value: object) -> str:
    if isinstance(value, str):
        return value
    return json.dumps(value, separators=(",", ":"), ensure_ascii=False)


def _try_form(node: SparNode, value: str, max_depth: int, budget: _Budget) -> bool:
    if "=" not in value or _ABS_URL.match(value):
        return False
    pairs = []
    for piece in value.split("&"):
        key, sep, val = piece.partition("=")
        if not sep or not key or not _FORM_KEY.fullmatch(key):
            return False
        pairs.append((key, val))
    # a lone "xxxx=" or "xxxx==" is far more likely base64 padding than a form
    if len(pairs) == 1 and set(pairs[0][1]) <= {"="}:
        return False
    node.decoding = WWW_FORM
    _attach_form_children(node, value, max_depth, budget, label=WWW_FORM)
    return bool(node.children)


def _attach_form_children(node: SparNode, value: str, max_depth: int,
                          budget: _Budget, label: str) -> None:
    node.decoding = label
    for key, val in parse_qsl(value, keep_blank_values=True):
        if not _add_child(node, key, val, max_depth, budget):
            break


def _try_url(node: SparNode, value: str, max_depth: int, budget: _Budget) -> bool:
    if not _is_absolute_http_url(value):
        return False
    parts = urlsplit(value)
    node.decoding = NESTED_URL
    _add_child(node, "scheme", parts.scheme.lower(), max_depth, budget)
    _add_child(node, "host", parts.netloc, max_depth, budget)
    if parts.path:
        _add_child(node, "path", parts.path, max_depth, budget)
    if parts.query and node.depth < max_depth and budget.take():
        qs_node = SparNode(raw=parts.query, decoding=QUERY_STRING,
                           depth=node.depth + 1)
        _attach_form_children(qs_node, parts.query, max_depth, budget,
                              label=QUERY_STRING)
        if not qs_node.children:
            qs_node.decoding = LEAF
        node.children["query-string"] = qs_node
    if parts.fragment:
        _add_child(node, "fragment", parts.fragment, max_depth, budget)
    return bool(node.children)


def _try_percent(node: SparNode, value: str, max_depth: int, budget: _Budget) -> bool:
    if "%" not in value:
        return False
    decoded = unquote(value)
    if decoded == value:
        return False
    # only unwrap when the decoded string itself has structure
    snapshot = budget.used
    if not budget.take():
        return False
    child = _decode_node(decoded, node.depth + 1, max_depth, budget)
    if child.is_leaf:
        budget.used = snapshot
        return False
    node.decoding = PERCENT
    node.children["decoded"] = child
    return True


def _try_base64(node: SparNode, value: str, max_depth: int, budget: _Budget) -> bool:
    if len(value) < 8 or len(value) % 4 != 0:
        return False
    if _B64_STD.fullmatch(value):
        label = BASE64URL if ("-" in value or "_" in value) else BASE64
    elif _B64_URL.fullmatch(value):
        label = BASE64URL
    else:
        return False
    try:
        if label == BASE64:
            raw = base64.b64decode(value, validate=True)
        else:
            raw = base64.urlsafe_b64decode(value)
    except (binascii.Error, ValueError):
        return False
    try:
        text = raw.decode("utf-8")
    except UnicodeDecodeError:
        return False
    if not text:
        return False
    if not text.isprintable() and not _parses_as_json_container(text):
        return False
    node.decoding = label
    _add_child(node, "decoded", text, max_depth, budget)
    return bool(node.children)


def _parses_as_json_container(text: str) -> bool:
    stripped = text.strip()
    if not stripped or stripped[0] not in "{[":
        return False
    try:
        return isinstance(json.loads(stripped), (dict, list))
    except ValueError:
        return False


def _is_absolute_http_url(value: str) -> bool:
    if not _ABS_URL.match(value) or any(c.isspace() for c in value):
        return False
    parts = urlsplit(value)
    return parts.scheme.lower() in ("http", "https") and bool(parts.netloc)


def _b64url_to_text(segment: str) -> str | None:
    padded = segment + "=" * (-len(segment) % 4)
    try:
        return base64.urlsafe_b64decode(padded).decode("utf-8")
    except (binascii.Error, ValueError, UnicodeDecodeError):
        return None


# ---------------------------------------------------------------------------
# tree queries

def walk(tree: SparNode) -> Iterator[tuple[Path, SparNode]]:
    """Depth-first preorder over (path, node), root first with empty path."""
    stack: list[tuple[Path, SparNode]] = [((), tree)]
    while stack:
        path, node = stack.pop()
        yield path, node
        stack.extend(reversed([(path + (seg,), child)
                               for seg, child in node.children.items()]))


def search(tree: SparNode, key: str) -> list[tuple[Path, SparNode]]:
    """All nodes whose final path segment equals ``key`` (case-sensitive)."""
    return [(path, node) for path, node in walk(tree)
            if path and path[-1] == key]


def find_nested_urls(tree: SparNode) -> list[tuple[Path, str]]:
    """Non-root nodes whose raw value is an absolute http(s) URL."""
    return [(path, node.raw) for path, node in walk(tree)
            if path and _is_absolute_http_url(node.raw)]


def leaves(tree: SparNode) -> list[tuple[Path, str]]:
    return [(path, node.raw) for path, node in walk(tree) if node.is_leaf]


def count_nodes(tree: SparNode) -> int:
    return sum(1 for _ in walk(tree))


def max_tree_depth(tree: SparNode) -> int:
    return max(node.depth for _, node in walk(tree))


def render_path(path: Path) -> str:
    return "/".join(path)


# ---------------------------------------------------------------------------
# JWT helpers shared by the classifiers and rules

def jwt_parts(token: str) -> tuple[dict, dict, str]:
    """Split a compact JWT into (header, payload, signature segment).

    Raises MalformedJwt when the value is not a three-segment token with a
    JSON object header carrying "alg" and a JSON object payload.
    """
    segments = token.split(".")
    if len(segments) != 3:
        raise MalformedJwt(f"expected 3 segments, got {len(segments)}")
    header_text = _b64url_to_text(segments[0])
    payload_text = _b64url_to_text(segments[1])
    if header_text is None or payload_text is None:
        raise MalformedJwt("header or payload is not base64url text")
    try:
        header = json.loads(header_text)
        payload = json.loads(payload_text)
    except ValueError as exc:
        raise MalformedJwt(f"header or payload is not JSON: {exc}") from exc
    if not isinstance(header, dict) or "alg" not in header:
        raise MalformedJwt("header is not a JSON object with an alg claim")
    if not isinstance(payload, dict):
        raise MalformedJwt("payload is not a JSON object")
    return header, payload, segments[2]


# ---------------------------------------------------------------------------
# encoders: the inverse operations, used to build synthetic values

def encode_form(pairs: list[tuple[str, str]]) -> str:
    from urllib.parse import quote
    return "&".join(f"{k}={quote(v, safe='')}" for k, v in pairs)


def encode_json(doc: object) -> str:
    return json.dumps(doc, separators=(",", ":"), ensure_ascii=False)


def encode_percent(value: str) -> str:
    from urllib.parse import quote
    return quote(value, safe="")


def encode_base64(value: str) -> str:
    return base64.b64encode(value.encode("utf-8")).decode("ascii")


def encode_base64url(value: str) -> str:
    return base64.urlsafe_b64encode(value.encode("utf-8")).decode("ascii")


def encode_jwt(header: dict, payload: dict, signature_seg: str = "c2ln") -> str:
    def seg(doc: dict) -> str:
        return base64.urlsafe_b64encode(
            json.dumps(doc, separators=(",", ":")).encode("utf-8")
        ).decode("ascii").rstrip("=")
    return f"{seg(header)}.{seg(payload)}.{signature_seg}"


def encode_url(host: str, path: str, query_pairs: list[tuple[str, str]],
               scheme: str = "https") -> str:
    query = encode_form(query_pairs)
    url = f"{scheme}://{host}{path}"
    return f"{url}?{query}" if query else url
