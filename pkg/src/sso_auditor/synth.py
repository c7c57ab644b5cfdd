"""Synthetic trace generation for tests and demos.

Builds HAR documents, metadata sidecars, and whole on-disk fixture packs.
Every generator takes an explicit ``random.Random`` so a fixed seed yields
byte-identical fixtures.  The fixture pack written by
:func:`build_fixture_pack` contains one trigger bundle per detection rule
plus a hardened baseline, laid out the way the ``analyze`` subcommand
expects (``<domain>/<idp>/run1`` and ``run2``).
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass
from pathlib import Path

from . import spar
from .trace import PROFILE_CONSENT_VISIT, PROFILE_LOGIN_RUN, PROFILE_NO_CONSENT_VISIT

BASE_TIME = "2026-01-17T12:00:00.000Z"
IDP_NAME = "google"
AUTH_URL = "https://accounts.google.com/o/oauth2/v2/auth"

_HEX = "0123456789abcdef"
_DIGITS = "0123456789"
_B64URL = ("ABCDEFGHIJKLMNOPQRSTUVWXYZ"
           "abcdefghijklmnopqrstuvwxyz0123456789-_")


def _stamp(offset_s: float) -> str:
    # fixed-format timestamps keep the pack byte-stable across runs
    whole = int(offset_s)
    millis = int(round((offset_s - whole) * 1000))
    minutes, seconds = divmod(whole, 60)
    return f"2026-01-17T12:{minutes:02d}:{seconds:02d}.{millis:03d}Z"


def rand_hex(rng: random.Random, length: int) -> str:
    return "".join(rng.choice(_HEX) for _ in range(length))


def rand_digits(rng: random.Random, length: int) -> str:
    return "".join(rng.choice(_DIGITS) for _ in range(length))


def rand_b64url(rng: random.Random, length: int) -> str:
    return "".join(rng.choice(_B64URL) for _ in range(length))


# ---------------------------------------------------------------------------
# HAR assembly

def har_entry(url: str, *, method: str = "GET", status: int = 200,
              started_at: str = BASE_TIME,
              request_headers: list[tuple[str, str]] | None = None,
              post_mime: str | None = None, post_text: str | None = None,
              location: str | None = None,
              body_text: str = "", body_mime: str = "text/html") -> dict:
    request = {
        "method": method,
        "url": url,
        "httpVersion": "HTTP/2",
        "headers": [{"name": k, "value": v}
                    for k, v in (request_headers or [])],
        "queryString": [],
        "cookies": [],
        "headersSize": -1,
        "bodySize": len(post_text or ""),
    }
    if post_text is not None:
        request["postData"] = {
            "mimeType": post_mime or "application/x-www-form-urlencoded",
            "text": post_text,
        }
    response_headers = []
    if location is not None:
        response_headers.append({"name": "Location", "value": location})
    return {
        "startedDateTime": started_at,
        "time": 18.0,
        "request": request,
        "response": {
            "status": status,
            "statusText": "",
            "httpVersion": "HTTP/2",
            "headers": response_headers,
            "cookies": [],
            "content": {
                "size": len(body_text),
                "mimeType": body_mime,
                "text": body_text,
            },
            "redirectURL": location or "",
            "headersSize": -1,
            "bodySize": len(body_text),
        },
        "cache": {},
        "timings": {"send": 1, "wait": 12, "receive": 5},
    }


def build_har(entries: list[dict], ibc_events: list[dict] | None = None) -> dict:
    log = {
        "version": "1.2",
        "creator": {"name": "sso-auditor-synth", "version": "1"},
        "entries": entries,
    }
    if ibc_events is not None:
        log["_ibc"] = ibc_events
    return {"log": log}


def build_meta(domain: str, *, idp: str | None = IDP_NAME,
               profile_kind: str = PROFILE_LOGIN_RUN, run_index: int = 1,
               captured_at: str = BASE_TIME) -> dict:
    meta = {
        "domain": domain,
        "page_url": f"https://{domain}/login",
        "captured_at": captured_at,
        "profile_kind": profile_kind,
        "run_index": run_index,
    }
    if idp is not None:
        meta["idp"] = idp
    return meta


def write_bundle(bundle_dir: Path, har: dict, meta: dict,
                 ibc: list[dict] | None = None) -> None:
    bundle_dir.mkdir(parents=True, exist_ok=True)
    (bundle_dir / "trace.har").write_text(
        json.dumps(har, indent=1), encoding="utf-8")
    (bundle_dir / "meta.json").write_text(
        json.dumps(meta, indent=1), encoding="utf-8")
    if ibc is not None:
        (bundle_dir / "ibc.json").write_text(
            json.dumps(ibc, indent=1), encoding="utf-8")


def make_id_token(alg: str, claims: dict, signature_seg: str = "c2ln") -> str:
    token = spar.encode_jwt({"alg": alg, "typ": "JWT"}, claims, signature_seg)
    if alg.lower() == "none":
        head, payload, _ = token.split(".")
        return f"{head}.{payload}."
    return token


# ---------------------------------------------------------------------------
# one login run

@dataclass(frozen=True)
class LoginShape:
    """Knobs for one synthetic login run; defaults give a hardened flow."""
    response_type: str = "code"
    scope: str = "openid email"
    state_kind: str = "strong"       # strong | weak | absent
    nonce_kind: str = "absent"       # strong | weak | absent
    pkce: bool = True
    redirect_uri: str | None = None  # default https://<domain>/cb
    delivery: str = "body"           # body | query | fragment | none
    relay_307: bool = False
    id_token: str | None = None      # None | rs256 | hs256 | alg-none | malformed
    include_access_token: bool = False
    client_secret: bool = False
    referer_leak: bool = False
    plain_http_entry: bool = False


def _value(rng: random.Random, kind: str) -> str | None:
    # odd lengths dodge the base64 re-decode attempt, keeping values leaves
    if kind == "strong":
        return rand_hex(rng, 33)
    if kind == "weak":
        return rand_digits(rng, 9)
    return None


def synth_login_entries(rng: random.Random, domain: str,
                        shape: LoginShape) -> list[dict]:
    redirect_uri = shape.redirect_uri or f"https://{domain}/cb"
    state = _value(rng, shape.state_kind)
    nonce = _value(rng, shape.nonce_kind)
    code = f"4-{rand_hex(rng, 23)}"
    access_token = f"ya29-{rand_hex(rng, 24)}"

    auth_pairs = [
        ("client_id", f"{domain.split('.')[0]}-client.apps.example"),
        ("redirect_uri", redirect_uri),
        ("response_type", shape.response_type),
        ("scope", shape.scope),
    ]
    if state is not None:
        auth_pairs.append(("state", state))
    if nonce is not None:
        auth_pairs.append(("nonce", nonce))
    if shape.pkce:
        auth_pairs.append(("code_challenge", rand_b64url(rng, 43)))
        auth_pairs.append(("code_challenge_method", "S256"))
    if shape.client_secret:
        auth_pairs.append(("client_secret", f"cs-{rand_hex(rng, 21)}"))
    auth_url = AUTH_URL + "?" + spar.encode_form(auth_pairs)

    token_pairs: list[tuple[str, str]] = []
    requested = (shape.response_type or "").split()
    if "code" in requested:
        token_pairs.append(("code", code))
    if "token" in requested or shape.include_access_token:
        token_pairs.append(("access_token", access_token))
        token_pairs.append(("token_type", "bearer"))
    if shape.id_token is not None:
        claims = {"iss": "https://accounts.google.com", "sub": "user-1"}
        if nonce is not None:
            claims["nonce"] = nonce
        if shape.id_token == "rs256":
            id_token = make_id_token("RS256", claims)
        elif shape.id_token == "hs256":
            id_token = make_id_token("HS256", claims)
        elif shape.id_token == "alg-none":
            id_token = make_id_token("none", claims)
        elif shape.id_token == "malformed":
            id_token = "opaque-session-blob"
        else:
            raise ValueError(f"unknown id_token kind: {shape.id_token}")
        token_pairs.append(("id_token", id_token))
    if state is not None:
        token_pairs.append(("state", state))

    entries = [
        har_entry(f"https://{domain}/login", started_at=_stamp(0),
                  body_text="<html><body>sign-in page</body></html>"),
    ]

    callback = f"https://{domain}/cb"
    if shape.delivery == "none":
        entries.append(har_entry(auth_url, started_at=_stamp(1),
                                 body_text="<html>consent</html>"))
    elif shape.delivery == "body":
        entries.append(har_entry(auth_url, started_at=_stamp(1),
                                 body_text="<html><form>auto-post</form></html>"))
        entries.append(har_entry(
            callback, method="POST", started_at=_stamp(2),
            post_mime="application/x-www-form-urlencoded",
            post_text=spar.encode_form(token_pairs),
            body_text="<html>signed in</html>"))
    elif shape.delivery in ("query", "fragment"):
        sep = "?" if shape.delivery == "query" else "#"
        target = callback + sep + spar.encode_form(token_pairs)
        status = 307 if shape.relay_307 else 302
        entries.append(har_entry(auth_url, started_at=_stamp(1),
                                 status=status, location=target))
        entries.append(har_entry(target, started_at=_stamp(2),
                                 body_text="<html>signed in</html>"))
    else:
        raise ValueError(f"unknown delivery: {shape.delivery}")

    if shape.referer_leak:
        entries.append(har_entry(
            "https://tracker.example/pixel.gif", started_at=_stamp(3),
            request_headers=[("Referer", f"{callback}?code={code}")],
            body_text="", body_mime="image/gif"))
    if shape.plain_http_entry:
        entries.append(har_entry(f"http://{domain}/metrics?event=login",
                                 started_at=_stamp(3),
                                 body_text="ok", body_mime="text/plain"))
    return entries


def write_login_unit(unit_dir: Path, domain: str, shape: LoginShape,
                     seed: int) -> None:
    """Write run1 and run2 bundles for one (domain, idp) login procedure."""
    for run_index in (1, 2):
        rng = random.Random(seed * 2 + run_index)
        entries = synth_login_entries(rng, domain, shape)
        har = build_har(entries)
        meta = build_meta(domain, run_index=run_index)
        write_bundle(unit_dir / f"run{run_index}", har, meta)


# ---------------------------------------------------------------------------
# the rule fixture pack

# rule id -> login shape that trips exactly that rule and nothing else
TRIGGER_SHAPES: dict[str, LoginShape] = {
    "csrf.missing": LoginShape(state_kind="absent", pkce=False,
                               delivery="none", scope="email profile"),
    "csrf.weak": LoginShape(state_kind="weak", pkce=False, delivery="none",
                            scope="email profile"),
    "flow.obsolete": LoginShape(response_type="token", scope="email profile",
                                pkce=False, delivery="fragment"),
    "protocol.mixup": LoginShape(response_type="code id_token",
                                 scope="email profile", nonce_kind="strong",
                                 pkce=False, delivery="fragment",
                                 id_token="rs256"),
    "flow.mixup": LoginShape(response_type="code", scope="openid email",
                             nonce_kind="strong", pkce=False,
                             delivery="fragment", id_token="rs256"),
    # redirect_uri is domain-dependent; build_fixture_pack fills it in
    "redirect.nested-url": LoginShape(),
    "secret.client-secret-fc": LoginShape(client_secret=True),
    "secret.referer-leak": LoginShape(referer_leak=True),
    "secret.token-in-url": LoginShape(delivery="query"),
    "tls.plain-redirect-uri": LoginShape(delivery="none"),
    "tls.plain-request": LoginShape(plain_http_entry=True),
    "redirect.307-authz-response": LoginShape(delivery="fragment",
                                              relay_307=True),
    "inject.code-unprotected": LoginShape(scope="email profile", pkce=False),
    "idtoken.symmetric-alg": LoginShape(response_type="code id_token",
                                        scope="openid email",
                                        nonce_kind="strong", pkce=False,
                                        delivery="fragment", id_token="hs256"),
    "idtoken.alg-none": LoginShape(response_type="code id_token",
                                   scope="openid email", nonce_kind="strong",
                                   pkce=False, delivery="fragment",
                                   id_token="alg-none"),
    "idtoken.malformed": LoginShape(response_type="code id_token",
                                    scope="openid email", nonce_kind="strong",
                                    pkce=False, delivery="fragment",
                                    id_token="malformed"),
}

BASELINE_DOMAIN = "baseline.example"


def fixture_domain(rule_id: str) -> str:
    return rule_id.replace(".", "-") + ".example"


def build_fixture_pack(root: Path) -> dict:
    """Write the trigger fixtures and baseline; return the manifest."""
    root = Path(root)
    manifest: dict[str, list[str]] = {}

    for index, rule_id in enumerate(sorted(TRIGGER_SHAPES)):
        shape = TRIGGER_SHAPES[rule_id]
        domain = fixture_domain(rule_id)
        if rule_id == "redirect.nested-url":
            shape = LoginShape(
                redirect_uri=f"https://{domain}/cb"
                             "?next=https%3A%2F%2Fevil.example%2F")
        elif rule_id == "tls.plain-redirect-uri":
            shape = LoginShape(delivery="none",
                               redirect_uri=f"http://{domain}/cb")
        write_login_unit(root / domain / IDP_NAME, domain, shape,
                         seed=100 + index)
        manifest[domain] = [rule_id]

    write_login_unit(root / BASELINE_DOMAIN / IDP_NAME, BASELINE_DOMAIN,
                     LoginShape(), seed=7)
    manifest[BASELINE_DOMAIN] = []

    doc = {"idp": IDP_NAME, "fixtures": manifest}
    (root / "manifest.json").write_text(json.dumps(doc, indent=1, sort_keys=True),
                                        encoding="utf-8")
    return doc


# ---------------------------------------------------------------------------
# privacy visit fixtures

def synth_visit_entries(rng: random.Random, domain: str, *,
                        consented: bool) -> tuple[list[dict], list[dict]]:
    """A page visit that embeds an IdP widget; tokens only flow on consent."""
    auth_pairs = [
        ("client_id", f"{domain.split('.')[0]}-client.apps.example"),
        ("redirect_uri", f"https://{domain}/cb"),
        ("response_type", "id_token"),
        ("scope", "openid"),
        ("nonce", rand_hex(rng, 33)),
    ]
    entries = [
        har_entry(f"https://{domain}/", started_at=_stamp(0),
                  body_text="<html>home</html>"),
        har_entry(AUTH_URL + "?" + spar.encode_form(auth_pairs),
                  started_at=_stamp(1), body_text="<html>widget</html>"),
    ]
    ibc: list[dict] = []
    if consented:
        id_token = make_id_token("RS256", {"sub": "user-1"})
        ibc.append({
            "kind": "post-message",
            "at": _stamp(2),
            "source_origin": "https://accounts.google.com",
            "target_origin": f"https://{domain}",
            "payload": spar.encode_json({"id_token": id_token}),
        })
    return entries, ibc


def write_visit_unit(unit_dir: Path, domain: str, seed: int) -> None:
    """Write consent/ and noconsent/ bundles for one (domain, idp) pair."""
    for salt, (dir_name, profile, consented) in enumerate((
            ("consent", PROFILE_CONSENT_VISIT, True),
            ("noconsent", PROFILE_NO_CONSENT_VISIT, False))):
        rng = random.Random(seed * 2 + salt)
        entries, ibc = synth_visit_entries(rng, domain, consented=consented)
        har = build_har(entries)
        meta = build_meta(domain, profile_kind=profile)
        write_bundle(unit_dir / dir_name, har, meta, ibc=ibc)


# ---------------------------------------------------------------------------
# throughput fixture

def build_big_har(total_bytes: int = 10 * 1024 * 1024,
                  entry_count: int = 1000,
                  domain: str = "bulk.example") -> tuple[bytes, bytes]:
    """A large HAR with one real login among page noise; returns (har, meta)."""
    rng = random.Random(13)
    shape = LoginShape()
    login = synth_login_entries(rng, domain, shape)

    filler_count = entry_count - len(login)
    per_body = -(-total_bytes // filler_count)  # ceil keeps the HAR >= total
    chunk = "<p>" + "x" * 117 + "</p>\n"
    body = (chunk * (per_body // len(chunk) + 1))[:per_body]
    entries = list(login)
    for i in range(filler_count):
        entries.append(har_entry(
            f"https://{domain}/assets/page-{i:04d}.html",
            started_at=_stamp(10 + i * 0.01), body_text=body))

    har = json.dumps(build_har(entries)).encode("utf-8")
    meta = json.dumps(build_meta(domain)).encode("utf-8")
    return har, meta
