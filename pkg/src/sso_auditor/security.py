"""Passive security checks over recorded login runs.

Every check reads the trace and the reconstructed SSO messages; nothing is
ever replayed or probed.  Findings carry a stable rule_id, a category
(vulnerability or potential-issue), and non-empty evidence pointing back
into the trace.

Scoping decisions that matter for interpretation:

* Randomness checks compare the two recordings of a login and otherwise
  bound entropy by charset class times length, an upper bound by design.
* A present PKCE challenge suppresses CSRF findings entirely when
  ``treat_pkce_as_csrf_protection`` is set (the default).
* ``secret.token-in-url`` inspects query components only.  Fragment-borne
  tokens never reach server logs; their exposure is what the obsolete-flow
  check reports.
* Rules are evaluated against the first recording; the second one only
  supplies paired values.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from importlib import resources
from urllib.parse import urlsplit

from . import classify, spar
from .classify import IdpRegistry, SsoMessage, default_registry
from .domains import is_loopback_host, registrable_domain, url_host
from .exceptions import MalformedJwt, ProfileMismatch
from .trace import PROFILE_LOGIN_RUN, Trace

CATEGORY_VULNERABILITY = "vulnerability"
CATEGORY_POTENTIAL_ISSUE = "potential-issue"

BASIS_STATIC = "static-across-runs"
BASIS_CHARSET = "charset-length"
BASIS_ABSENT = "absent"

MAX_EXCERPT = 200

RULE_CSRF_MISSING = "csrf.missing"
RULE_CSRF_WEAK = "csrf.weak"
RULE_FLOW_OBSOLETE = "flow.obsolete"
RULE_PROTOCOL_MIXUP = "protocol.mixup"
RULE_FLOW_MIXUP = "flow.mixup"
RULE_OPEN_REDIRECT = "redirect.nested-url"
RULE_SECRET_FC = "secret.client-secret-fc"
RULE_REFERER_LEAK = "secret.referer-leak"
RULE_TOKEN_IN_URL = "secret.token-in-url"
RULE_PLAIN_REDIRECT_URI = "tls.plain-redirect-uri"
RULE_PLAIN_REQUEST = "tls.plain-request"
RULE_307_RESPONSE = "redirect.307-authz-response"
RULE_CODE_UNPROTECTED = "inject.code-unprotected"
RULE_AT_HASH_MISSING = "inject.at-hash-missing"
RULE_IDTOKEN_SYMMETRIC = "idtoken.symmetric-alg"
RULE_IDTOKEN_NONE = "idtoken.alg-none"
RULE_IDTOKEN_MALFORMED = "idtoken.malformed"
RULE_ANALYZER_ERROR = "analyzer.error"


@dataclass(frozen=True)
class Evidence:
    entry_index: int
    spar_path: str
    excerpt: str

    def __post_init__(self):
        if len(self.excerpt) > MAX_EXCERPT:
            object.__setattr__(self, "excerpt", self.excerpt[:MAX_EXCERPT])

    def to_dict(self) -> dict:
        return {"entry_index": self.entry_index, "spar_path": self.spar_path,
                "excerpt": self.excerpt}


@dataclass(frozen=True)
class Finding:
    rule_id: str
    category: str
    idp: str
    domain: str
    evidence: tuple[Evidence, ...]
    message: str

    def __post_init__(self):
        if not self.evidence:
            raise ValueError("findings need at least one evidence item")

    def to_dict(self) -> dict:
        return {
            "rule_id": self.rule_id,
            "category": self.category,
            "idp": self.idp,
            "domain": self.domain,
            "evidence": [ev.to_dict() for ev in self.evidence],
            "message": self.message,
        }


@dataclass(frozen=True)
class RuleConfig:
    entropy_threshold_bits: float = 96.0
    treat_pkce_as_csrf_protection: bool = True
    max_spar_depth: int = spar.DEFAULT_MAX_DEPTH
    max_spar_nodes: int = spar.DEFAULT_MAX_NODES

    def to_dict(self) -> dict:
        return {
            "entropy_threshold_bits": self.entropy_threshold_bits,
            "treat_pkce_as_csrf_protection": self.treat_pkce_as_csrf_protection,
            "max_spar_depth": self.max_spar_depth,
            "max_spar_nodes": self.max_spar_nodes,
        }


@dataclass(frozen=True)
class EntropyEstimate:
    bits: float
    basis: str


@dataclass
class LoginPair:
    """One login procedure seen in two recordings; the second may be absent."""

    request: SsoMessage
    response: SsoMessage | None = None
    request2: SsoMessage | None = None
    response2: SsoMessage | None = None


# ---------------------------------------------------------------------------
# entropy estimation

_DIGITS = frozenset("0123456789")
_HEX_LOWER = frozenset("0123456789abcdef")
_HEX_UPPER = frozenset("0123456789ABCDEF")
_ALNUM = frozenset(
    "0123456789abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ")
_B64URL = _ALNUM | frozenset("-_")

CHARSET_SIZES = {
    "digits": 10,
    "hex": 16,
    "alphanumeric": 62,
    "base64url": 64,
    "printable": 94,
}


def charset_class(value: str) -> str:
    chars = set(value)
    if chars <= _DIGITS:
        return "digits"
    if chars <= _HEX_LOWER or chars <= _HEX_UPPER:
        return "hex"
    if chars <= _ALNUM:
        return "alphanumeric"
    if chars <= _B64URL:
        return "base64url"
    return "printable"


def estimate_entropy(value: str | None, paired_value: str | None = None,
                     max_spar_depth: int = spar.DEFAULT_MAX_DEPTH,
                     max_spar_nodes: int = spar.DEFAULT_MAX_NODES,
                     ) -> EntropyEstimate:
    """Upper-bound the randomness of one protocol parameter.

    A value that repeats across paired recordings carries no randomness at
    all.  Otherwise the bound is the best leaf of the decoded value:
    length times log2 of the inferred charset class size.
    """
    if value is None:
        return EntropyEstimate(bits=0.0, basis=BASIS_ABSENT)
    if paired_value is not None and value == paired_value:
        return EntropyEstimate(bits=0.0, basis=BASIS_STATIC)
    tree = spar.decode(value, max_spar_depth, max_spar_nodes)
    best = 0.0
    for _, raw in spar.leaves(tree):
        bits = len(raw) * math.log2(CHARSET_SIZES[charset_class(raw)])
        if bits > best:
            best = bits
    return EntropyEstimate(bits=best, basis=BASIS_CHARSET)


# ---------------------------------------------------------------------------
# evidence helpers

def _param_evidence(msg: SsoMessage, name: str) -> Evidence:
    loc = msg.locations.get(name)
    if loc is not None:
        return Evidence(entry_index=msg.entry_ref, spar_path=loc.render(),
                        excerpt=loc.value)
    return Evidence(entry_index=msg.entry_ref, spar_path=msg.channel,
                    excerpt=msg.params.get(name) or "")


def _request_evidence(msg: SsoMessage) -> Evidence:
    loc = msg.locations.get("client_id")
    path = loc.render() if loc else msg.channel
    return Evidence(entry_index=msg.entry_ref, spar_path=path,
                    excerpt=msg.params.redirect_uri or msg.params.client_id or "")


# ---------------------------------------------------------------------------
# per-login rules

_CSRF_PARAMS = ("state", "nonce", "code_challenge")


def check_csrf(pair: LoginPair, cfg: RuleConfig | None = None) -> list[Finding]:
    cfg = cfg or RuleConfig()
    req = pair.request
    present = [name for name in _CSRF_PARAMS if req.params.get(name) is not None]
    if not present:
        return [Finding(
            rule_id=RULE_CSRF_MISSING, category=CATEGORY_VULNERABILITY,
            idp=req.idp, domain="",
            evidence=(_request_evidence(req),),
            message="login request carries neither state nor nonce nor a "
                    "PKCE challenge",
        )]
    if cfg.treat_pkce_as_csrf_protection and req.params.code_challenge is not None:
        return []
    paired = pair.request2
    best_name, best = None, None
    for name in present:
        estimate = estimate_entropy(
            req.params.get(name),
            paired.params.get(name) if paired else None,
            cfg.max_spar_depth, cfg.max_spar_nodes)
        if best is None or estimate.bits > best.bits:
            best_name, best = name, estimate
    assert best is not None and best_name is not None
    if best.bits > cfg.entropy_threshold_bits:
        return []
    if best.basis == BASIS_STATIC:
        detail = "value repeats across recordings"
    else:
        detail = f"upper bound {best.bits:.2f} bits"
    return [Finding(
        rule_id=RULE_CSRF_WEAK, category=CATEGORY_VULNERABILITY,
        idp=req.idp, domain="",
        evidence=(_param_evidence(req, best_name),),
        message=f"best CSRF protection parameter {best_name!r} is guessable "
                f"({detail}, threshold {cfg.entropy_threshold_bits:g} bits)",
    )]


def check_obsolete_flow(request: SsoMessage,
                        response: SsoMessage | None) -> list[Finding]:
    returned = classify.classify_returned_flow(response)
    if response is None:
        return []
    if returned == classify.FLOW_IMPLICIT:
        reason = "tokens are issued directly in the front channel (implicit flow)"
        token_name = "access_token" if response.params.access_token else "id_token"
    elif returned == classify.FLOW_HYBRID and response.params.access_token:
        reason = "hybrid flow delivers the access token in the front channel"
        token_name = "access_token"
    else:
        return []
    return [Finding(
        rule_id=RULE_FLOW_OBSOLETE, category=CATEGORY_POTENTIAL_ISSUE,
        idp=request.idp, domain="",
        evidence=(_param_evidence(response, token_name),),
        message=reason,
    )]


def check_mixups(request: SsoMessage, response: SsoMessage | None,
                 token_exchange_visible: bool = False) -> list[Finding]:
    findings = []
    scope_tokens = (request.params.scope or "").split()
    if response is not None and response.params.id_token is not None \
            and "openid" not in scope_tokens:
        findings.append(Finding(
            rule_id=RULE_PROTOCOL_MIXUP, category=CATEGORY_POTENTIAL_ISSUE,
            idp=request.idp, domain="",
            evidence=(_param_evidence(response, "id_token"),),
            message="an id_token was returned although the request did not "
                    "ask for the openid scope",
        ))

    requested_flow = classify.classify_requested_flow(request.params.response_type)
    returned_flow = classify.classify_returned_flow(response)
    requested_kinds = classify.requested_token_kinds(request)
    returned_kinds = classify.returned_token_kinds(response)
    flows_known = (requested_flow != classify.FLOW_UNKNOWN
                   and returned_flow != classify.FLOW_UNKNOWN)
    mismatch = flows_known and requested_flow != returned_flow
    extra_kinds = sorted(returned_kinds - requested_kinds) if requested_kinds else []
    if mismatch or extra_kinds or token_exchange_visible:
        anchor = response if response is not None else request
        token_name = None
        for kind, param in (("code", "code"), ("token", "access_token"),
                            ("id_token", "id_token")):
            if kind in (extra_kinds or returned_kinds):
                token_name = param
                break
        evidence = (_param_evidence(anchor, token_name) if token_name
                    else _request_evidence(anchor))
        if token_exchange_visible and not (mismatch or extra_kinds):
            message = "a front-channel token exchange returned additional " \
                      "token material"
        else:
            message = (f"requested flow {requested_flow!r} but the response "
                       f"matches {returned_flow!r}")
        findings.append(Finding(
            rule_id=RULE_FLOW_MIXUP, category=CATEGORY_POTENTIAL_ISSUE,
            idp=request.idp, domain="",
            evidence=(evidence,), message=message,
        ))
    return findings


def check_open_redirect(request: SsoMessage,
                        cfg: RuleConfig | None = None) -> list[Finding]:
    cfg = cfg or RuleConfig()
    redirect_uri = request.params.redirect_uri
    if not redirect_uri:
        return []
    tree = spar.decode(redirect_uri, cfg.max_spar_depth, cfg.max_spar_nodes)
    nested = spar.find_nested_urls(tree)
    if not nested:
        return []
    base = request.locations.get("redirect_uri")
    base_path = base.render() if base else "redirect_uri"
    evidence = tuple(
        Evidence(entry_index=request.entry_ref,
                 spar_path=f"{base_path}/{spar.render_path(path)}",
                 excerpt=url)
        for path, url in nested
    )
    return [Finding(
        rule_id=RULE_OPEN_REDIRECT, category=CATEGORY_POTENTIAL_ISSUE,
        idp=request.idp, domain="",
        evidence=evidence,
        message=f"redirect_uri embeds {len(evidence)} nested absolute URL(s); "
                "possible open-redirector chaining",
    )]


def check_injection_protection(request: SsoMessage,
                               response: SsoMessage | None) -> list[Finding]:
    findings = []
    if response is not None and response.params.code is not None \
            and request.params.code_challenge is None \
            and request.params.nonce is None:
        findings.append(Finding(
            rule_id=RULE_CODE_UNPROTECTED, category=CATEGORY_POTENTIAL_ISSUE,
            idp=request.idp, domain="",
            evidence=(_param_evidence(response, "code"),),
            message="authorization code is not bound to the client via PKCE "
                    "or nonce; code injection is not detectable",
        ))
    if response is not None and response.params.id_token is not None \
            and response.params.access_token is not None:
        try:
            _, payload, _ = spar.jwt_parts(response.params.id_token)
        except MalformedJwt:
            payload = None
        if payload is not None and "at_hash" not in payload:
            findings.append(Finding(
                rule_id=RULE_AT_HASH_MISSING, category=CATEGORY_POTENTIAL_ISSUE,
                idp=request.idp, domain="",
                evidence=(_param_evidence(response, "id_token"),),
                message="id_token and access_token are returned together but "
                        "the id_token carries no at_hash binding",
            ))
    return findings


def check_id_token_alg(response: SsoMessage | None) -> list[Finding]:
    if response is None or response.params.id_token is None:
        return []
    try:
        header, _, _ = spar.jwt_parts(response.params.id_token)
    except MalformedJwt as exc:
        return [Finding(
            rule_id=RULE_IDTOKEN_MALFORMED, category=CATEGORY_POTENTIAL_ISSUE,
            idp=response.idp, domain="",
            evidence=(_param_evidence(response, "id_token"),),
            message=f"id_token does not decode as a JWT: {exc}",
        )]
    alg = str(header.get("alg", ""))
    if alg.lower() == "none":
        return [Finding(
            rule_id=RULE_IDTOKEN_NONE, category=CATEGORY_VULNERABILITY,
            idp=response.idp, domain="",
            evidence=(_param_evidence(response, "id_token"),),
            message="id_token is unsigned (alg=none)",
        )]
    if alg.startswith("HS"):
        return [Finding(
            rule_id=RULE_IDTOKEN_SYMMETRIC, category=CATEGORY_VULNERABILITY,
            idp=response.idp, domain="",
            evidence=(_param_evidence(response, "id_token"),),
            message=f"id_token uses a symmetric signature ({alg}); the "
                    "client must hold the shared secret",
        )]
    return []


# ---------------------------------------------------------------------------
# trace-level rules

def check_secret_leakage(trace: Trace, messages: list[SsoMessage],
                         cfg: RuleConfig | None = None) -> list[Finding]:
    cfg = cfg or RuleConfig()
    domain = trace.metadata.domain
    idp = _primary_idp(trace, messages)
    findings = []

    secret_evidence = []
    for index, entry in enumerate(trace.entries):
        for channel, tree in _front_channel_trees(entry, cfg):
            for path, node in spar.search(tree, "client_secret"):
                secret_evidence.append(Evidence(
                    entry_index=index,
                    spar_path=f"{channel}:{spar.render_path(path)}",
                    excerpt=node.raw))
    for index, event in enumerate(trace.ibc_events):
        tree = classify.ibc_param_tree(event, cfg.max_spar_depth,
                                       cfg.max_spar_nodes)
        for path, node in spar.search(tree, "client_secret"):
            secret_evidence.append(Evidence(
                entry_index=index,
                spar_path=f"{classify.CHANNEL_POST_MESSAGE}:{spar.render_path(path)}",
                excerpt=node.raw))
    if secret_evidence:
        findings.append(Finding(
            rule_id=RULE_SECRET_FC, category=CATEGORY_VULNERABILITY,
            idp=idp, domain=domain, evidence=tuple(secret_evidence),
            message="client_secret is exposed in the front channel",
        ))

    client_site = registrable_domain(domain)
    idp_sites = {registrable_domain(url_host(trace.entries[m.entry_ref].request.url))
                 for m in messages if m.ref_kind == classify.REF_ENTRY}
    referer_evidence = []
    for index, entry in enumerate(trace.entries):
        referer = entry.request.header("referer")
        if not referer:
            continue
        dest_site = registrable_domain(url_host(entry.request.url))
        if dest_site == client_site or dest_site in idp_sites:
            continue
        tree = spar.decode(referer, cfg.max_spar_depth, cfg.max_spar_nodes)
        for token_name in classify.TOKEN_PARAMS:
            hits = spar.search(tree, token_name)
            if hits:
                path, node = hits[0]
                referer_evidence.append(Evidence(
                    entry_index=index,
                    spar_path=f"referer:{spar.render_path(path)}",
                    excerpt=referer))
                break
    if referer_evidence:
        findings.append(Finding(
            rule_id=RULE_REFERER_LEAK, category=CATEGORY_VULNERABILITY,
            idp=idp, domain=domain, evidence=tuple(referer_evidence),
            message="login tokens leak through the Referer header to a "
                    "third party",
        ))

    url_evidence = []
    for index, entry in enumerate(trace.entries):
        query = urlsplit(entry.request.url).query
        if not query:
            continue
        tree = spar.decode_query_string(query, cfg.max_spar_depth,
                                        cfg.max_spar_nodes)
        for token_name in classify.TOKEN_PARAMS:
            hits = spar.search(tree, token_name)
            if hits:
                path, node = hits[0]
                url_evidence.append(Evidence(
                    entry_index=index,
                    spar_path=f"{classify.CHANNEL_QUERY}:{spar.render_path(path)}",
                    excerpt=entry.request.url))
                break
    if url_evidence:
        findings.append(Finding(
            rule_id=RULE_TOKEN_IN_URL, category=CATEGORY_POTENTIAL_ISSUE,
            idp=idp, domain=domain, evidence=tuple(url_evidence),
            message="login tokens appear in navigated URL query strings "
                    "(browser history, server logs)",
        ))
    return findings


def _front_channel_trees(entry, cfg: RuleConfig):
    """Query and fragment surfaces only; bodies are not browser-visible URLs."""
    parts = urlsplit(entry.request.url)
    if parts.query:
        yield (classify.CHANNEL_QUERY,
               spar.decode_query_string(parts.query, cfg.max_spar_depth,
                                        cfg.max_spar_nodes))
    if parts.fragment:
        frag = parts.fragment
        if "=" in frag:
            yield (classify.CHANNEL_FRAGMENT,
                   spar.decode_query_string(frag, cfg.max_spar_depth,
                                            cfg.max_spar_nodes))
        else:
            yield (classify.CHANNEL_FRAGMENT,
                   spar.decode(frag, cfg.max_spar_depth, cfg.max_spar_nodes))


def check_transport(trace: Trace, messages: list[SsoMessage],
                    cfg: RuleConfig | None = None) -> list[Finding]:
    cfg = cfg or RuleConfig()
    domain = trace.metadata.domain
    idp = _primary_idp(trace, messages)
    findings = []

    for msg in messages:
        if msg.kind != classify.KIND_LOGIN_REQUEST:
            continue
        redirect_uri = msg.params.redirect_uri
        if not redirect_uri:
            continue
        parts = urlsplit(redirect_uri)
        if parts.scheme.lower() == "http" \
                and not is_loopback_host(parts.hostname or ""):
            findings.append(Finding(
                rule_id=RULE_PLAIN_REDIRECT_URI, category=CATEGORY_VULNERABILITY,
                idp=msg.idp, domain=domain,
                evidence=(_param_evidence(msg, "redirect_uri"),),
                message="redirect_uri uses plain http on a non-loopback host",
            ))

    for index, entry in enumerate(trace.entries):
        if urlsplit(entry.request.url).scheme.lower() == "http":
            findings.append(Finding(
                rule_id=RULE_PLAIN_REQUEST, category=CATEGORY_POTENTIAL_ISSUE,
                idp=idp, domain=domain,
                evidence=(Evidence(entry_index=index, spar_path="url",
                                   excerpt=entry.request.url),),
                message="request sent over plain http",
            ))

    for index, entry in enumerate(trace.entries):
        if entry.response.status != 307 or not entry.response.redirect_target:
            continue
        target = entry.response.redirect_target
        target_parts = urlsplit(target)
        token_hit = False
        for component in (target_parts.query, target_parts.fragment):
            if not component:
                continue
            tree = spar.decode_query_string(component, cfg.max_spar_depth,
                                            cfg.max_spar_nodes)
            if any(spar.search(tree, name) for name in classify.TOKEN_PARAMS):
                token_hit = True
                break
        if token_hit:
            findings.append(Finding(
                rule_id=RULE_307_RESPONSE, category=CATEGORY_POTENTIAL_ISSUE,
                idp=idp, domain=domain,
                evidence=(Evidence(entry_index=index, spar_path="location",
                                   excerpt=target),),
                message="authorization response is relayed with status 307, "
                        "which re-sends request bodies",
            ))
    return findings


def _primary_idp(trace: Trace, messages: list[SsoMessage]) -> str:
    # the detected provider name keeps trace-level findings in the same
    # report row as the login-anchored ones; the operator's metadata label
    # is only a fallback for traces where detection came up empty
    for msg in messages:
        return msg.idp
    if trace.metadata.idp_label:
        return trace.metadata.idp_label
    return classify.UNKNOWN_IDP


# ---------------------------------------------------------------------------
# orchestration

_PER_LOGIN_CHECKS = ("csrf", "obsolete-flow", "mixups", "open-redirect",
                     "injection", "id-token-alg")


@dataclass
class LoginAnalysis:
    idp: str
    protocol: str
    requested_flow: str
    returned_flow: str
    countermeasures: dict[str, bool]
    request_ref: int
    response_ref: int | None
    response_channel: str | None

    def to_dict(self) -> dict:
        return {
            "idp": self.idp,
            "protocol": self.protocol,
            "requested_flow": self.requested_flow,
            "returned_flow": self.returned_flow,
            "countermeasures": dict(self.countermeasures),
            "request_ref": self.request_ref,
            "response_ref": self.response_ref,
            "response_channel": self.response_channel,
        }


@dataclass
class SecurityAnalysis:
    domain: str
    idp: str
    logins: list[LoginAnalysis] = field(default_factory=list)
    findings: list[Finding] = field(default_factory=list)

    @property
    def vulnerability_count(self) -> int:
        return sum(1 for f in self.findings
                   if f.category == CATEGORY_VULNERABILITY)

    def rule_ids(self) -> set[str]:
        return {f.rule_id for f in self.findings}

    def to_dict(self) -> dict:
        return {
            "domain": self.domain,
            "idp": self.idp,
            "logins": [login.to_dict() for login in self.logins],
            "findings": [f.to_dict() for f in self.findings],
            "vulnerabilities": self.vulnerability_count,
        }


def run_all(run1: Trace, run2: Trace | None = None,
            cfg: RuleConfig | None = None,
            registry: IdpRegistry | None = None) -> SecurityAnalysis:
    """Run every passive check over one (domain, idp) login procedure."""
    cfg = cfg or RuleConfig()
    registry = registry or default_registry()
    for trace in (run1, run2):
        if trace is not None and trace.metadata.profile_kind != PROFILE_LOGIN_RUN:
            raise ProfileMismatch(
                f"security rules need login-run traces, got "
                f"{trace.metadata.profile_kind}")

    messages1 = classify.dedupe_login_requests(
        classify.detect_login_requests(run1, registry))
    messages2 = classify.dedupe_login_requests(
        classify.detect_login_requests(run2, registry)) if run2 else []
    paired = classify.pair_runs(messages1, messages2)

    analysis = SecurityAnalysis(
        domain=run1.metadata.domain,
        idp=_primary_idp(run1, messages1),
    )
    findings: list[Finding] = []

    for request, request2 in paired:
        response = match_or_none(run1, request)
        response2 = match_or_none(run2, request2) if run2 and request2 else None
        pair = LoginPair(request=request, response=response,
                         request2=request2, response2=response2)
        token_visible = _visible_token_exchange(run1, registry, request)

        checks = (
            lambda: check_csrf(pair, cfg),
            lambda: check_obsolete_flow(request, response),
            lambda: check_mixups(request, response, token_visible),
            lambda: check_open_redirect(request, cfg),
            lambda: check_injection_protection(request, response),
            lambda: check_id_token_alg(response),
        )
        for name, call in zip(_PER_LOGIN_CHECKS, checks):
            try:
                findings.extend(call())
            except Exception as exc:  # a broken rule must not kill the report
                findings.append(Finding(
                    rule_id=RULE_ANALYZER_ERROR,
                    category=CATEGORY_POTENTIAL_ISSUE,
                    idp=request.idp, domain=run1.metadata.domain,
                    evidence=(Evidence(entry_index=request.entry_ref,
                                       spar_path=name,
                                       excerpt=repr(exc)),),
                    message=f"rule group {name!r} failed: {exc}",
                ))

        analysis.logins.append(LoginAnalysis(
            idp=request.idp,
            protocol=classify.classify_protocol(request, response),
            requested_flow=classify.classify_requested_flow(
                request.params.response_type),
            returned_flow=classify.classify_returned_flow(response),
            countermeasures={
                "pkce": request.params.code_challenge is not None,
                "nonce": request.params.nonce is not None,
                "at_hash": (response is not None
                            and response.params.at_hash is not None),
            },
            request_ref=request.entry_ref,
            response_ref=response.entry_ref if response else None,
            response_channel=response.channel if response else None,
        ))

    findings.extend(check_secret_leakage(run1, messages1, cfg))
    findings.extend(check_transport(run1, messages1, cfg))

    domain = run1.metadata.domain
    findings = [
        Finding(rule_id=f.rule_id, category=f.category, idp=f.idp,
                domain=f.domain or domain, evidence=f.evidence,
                message=f.message)
        for f in findings
    ]
    findings.sort(key=lambda f: (f.rule_id, f.evidence[0].entry_index,
                                 f.evidence[0].spar_path))
    analysis.findings = findings
    return analysis


def match_or_none(trace: Trace | None, request: SsoMessage | None,
                  ) -> SsoMessage | None:
    if trace is None or request is None:
        return None
    return classify.match_login_response(trace, request)


def _visible_token_exchange(trace: Trace, registry: IdpRegistry,
                            request: SsoMessage) -> bool:
    """A front-channel token endpoint response returning more than asked for."""
    requested = classify.requested_token_kinds(request)
    for entry in trace.entries:
        if registry.match_token(entry.request.url) is None:
            continue
        body = entry.response.body
        mime = (entry.response.body_mime or "").split(";")[0].strip().lower()
        if not body or mime not in ("application/json", "text/plain", ""):
            continue
        try:
            doc = json.loads(body)
        except ValueError:
            continue
        if not isinstance(doc, dict):
            continue
        if "code" in doc:
            return True
        if "id_token" in doc and "id_token" not in requested:
            return True
    return False


# ---------------------------------------------------------------------------
# rule catalog

def load_rule_catalog() -> list[dict]:
    text = resources.files("sso_auditor").joinpath("data/rules.json") \
        .read_text(encoding="utf-8")
    return json.loads(text)


def catalog_categories() -> dict[str, str]:
    return {item["rule_id"]: item["category"] for item in load_rule_catalog()}
