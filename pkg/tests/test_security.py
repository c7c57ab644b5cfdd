"""Unit tests for every passive security rule and the orchestrator."""

import json
import math
import random

import pytest

from sso_auditor import classify, security, spar
from sso_auditor.exceptions import ProfileMismatch
from sso_auditor.synth import (
    LoginShape, build_har, build_meta, har_entry, make_id_token,
    synth_login_entries,
)
from sso_auditor.trace import parse_trace_bundle


def _trace(entries, ibc=None, domain="shop.example", **meta_kwargs):
    har = json.dumps(build_har(entries, ibc)).encode("utf-8")
    meta = json.dumps(build_meta(domain, **meta_kwargs)).encode("utf-8")
    return parse_trace_bundle(har, meta)


def _login_trace(shape=LoginShape(), seed=1, domain="shop.example"):
    return _trace(synth_login_entries(random.Random(seed), domain, shape),
                  domain=domain)


def _msg(kind=classify.KIND_LOGIN_REQUEST, channel=classify.CHANNEL_QUERY,
         entry_ref=1, **params):
    return classify.SsoMessage(
        kind=kind, entry_ref=entry_ref, ref_kind=classify.REF_ENTRY,
        channel=channel, idp="Google", params=classify.SsoParams(**params))


def _request(**params):
    params.setdefault("client_id", "client-1")
    params.setdefault("redirect_uri", "https://shop.example/cb")
    return _msg(**params)


def _response(**params):
    return _msg(kind=classify.KIND_LOGIN_RESPONSE, entry_ref=2, **params)


def _rule_ids(findings):
    return sorted(f.rule_id for f in findings)


# ---------------------------------------------------------------------------
# entropy estimation

def test_charset_class_ladder():
    assert security.charset_class("0123") == "digits"
    assert security.charset_class("0f3c") == "hex"
    assert security.charset_class("0F3C") == "hex"
    assert security.charset_class("aF") == "alphanumeric"
    assert security.charset_class("a-b_c") == "base64url"
    assert security.charset_class("a b!") == "printable"


def test_estimate_entropy_exact_values():
    estimate = security.estimate_entropy("83749274")
    assert estimate.basis == security.BASIS_CHARSET
    assert estimate.bits == 8 * math.log2(10)

    hex_estimate = security.estimate_entropy("deadbeefdeadbeef")
    assert hex_estimate.bits == 16 * math.log2(16)


def test_estimate_entropy_absent_and_static():
    absent = security.estimate_entropy(None)
    assert (absent.bits, absent.basis) == (0.0, security.BASIS_ABSENT)

    static = security.estimate_entropy("samevalue!", "samevalue!")
    assert (static.bits, static.basis) == (0.0, security.BASIS_STATIC)

    differing = security.estimate_entropy("abc", "xyz")
    assert differing.basis == security.BASIS_CHARSET


def test_estimate_entropy_uses_best_leaf_of_structure():
    value = spar.encode_form([("sid", "12"), ("tok", "xyzqrs")])
    estimate = security.estimate_entropy(value)
    assert estimate.bits == 6 * math.log2(62)


# ---------------------------------------------------------------------------
# CSRF rules

def test_csrf_missing_when_all_parameters_absent():
    pair = security.LoginPair(request=_request(response_type="code"))
    findings = security.check_csrf(pair)
    assert _rule_ids(findings) == ["csrf.missing"]
    assert findings[0].category == "vulnerability"


def test_csrf_weak_on_short_digit_state():
    pair = security.LoginPair(request=_request(state="83749274"))
    findings = security.check_csrf(pair)
    assert _rule_ids(findings) == ["csrf.weak"]
    assert "26.58" in findings[0].message


def test_csrf_strong_state_passes():
    pair = security.LoginPair(request=_request(state="f" * 16 + "0a1b2c3d" * 3))
    assert security.check_csrf(pair) == []


def test_csrf_static_state_is_weak_even_when_long():
    strong = "c0ffee" * 8
    pair = security.LoginPair(request=_request(state=strong),
                              request2=_request(state=strong))
    findings = security.check_csrf(pair)
    assert _rule_ids(findings) == ["csrf.weak"]
    assert "repeats across recordings" in findings[0].message


def test_csrf_pkce_suppression_and_override():
    pair = security.LoginPair(request=_request(code_challenge="ab1"))
    assert security.check_csrf(pair) == []

    cfg = security.RuleConfig(treat_pkce_as_csrf_protection=False)
    findings = security.check_csrf(pair, cfg)
    assert _rule_ids(findings) == ["csrf.weak"]


def test_csrf_threshold_is_inclusive_and_configurable():
    state = "a1" * 12  # 24 hex chars, exactly 96.0 bits
    pair = security.LoginPair(request=_request(state=state))
    # a value sitting exactly on the threshold still counts as guessable
    assert _rule_ids(security.check_csrf(pair)) == ["csrf.weak"]
    cfg = security.RuleConfig(entropy_threshold_bits=95.0)
    assert security.check_csrf(pair, cfg) == []


# ---------------------------------------------------------------------------
# flow rules

def test_obsolete_flow_on_returned_implicit():
    request = _request(response_type="token")
    response = _response(access_token="t0k3n!")
    findings = security.check_obsolete_flow(request, response)
    assert _rule_ids(findings) == ["flow.obsolete"]


def test_obsolete_flow_on_hybrid_with_access_token():
    request = _request(response_type="code token")
    response = _response(code="c!", access_token="t!")
    assert _rule_ids(security.check_obsolete_flow(request, response)) == \
        ["flow.obsolete"]


def test_hybrid_without_access_token_is_not_obsolete():
    request = _request(response_type="code id_token")
    response = _response(code="c!", id_token="i.j.k")
    assert security.check_obsolete_flow(request, response) == []
    assert security.check_obsolete_flow(request, None) == []


def test_protocol_mixup_id_token_without_openid_scope():
    request = _request(response_type="code id_token", scope="email")
    response = _response(code="c!", id_token="i.j.k")
    findings = security.check_mixups(request, response)
    assert "protocol.mixup" in _rule_ids(findings)

    request_ok = _request(response_type="code id_token", scope="openid email")
    assert "protocol.mixup" not in _rule_ids(
        security.check_mixups(request_ok, response))


def test_flow_mixup_on_extra_returned_tokens():
    request = _request(response_type="code", scope="openid")
    response = _response(code="c!", id_token="i.j.k")
    findings = security.check_mixups(request, response)
    assert _rule_ids(findings) == ["flow.mixup"]


def test_flow_mixup_on_visible_token_exchange():
    request = _request(response_type="code", scope="openid")
    response = _response(code="c!")
    assert security.check_mixups(request, response) == []
    findings = security.check_mixups(request, response,
                                     token_exchange_visible=True)
    assert _rule_ids(findings) == ["flow.mixup"]


def test_no_mixup_when_flows_agree():
    request = _request(response_type="code", scope="openid")
    response = _response(code="c!")
    assert security.check_mixups(request, response) == []
    assert security.check_mixups(request, None) == []


# ---------------------------------------------------------------------------
# open redirect

def test_open_redirect_nested_url():
    request = _request(
        redirect_uri="https://shop.example/cb?next=https%3A%2F%2Fevil.example%2F")
    findings = security.check_open_redirect(request)
    assert _rule_ids(findings) == ["redirect.nested-url"]
    assert findings[0].evidence[0].excerpt == "https://evil.example/"


def test_open_redirect_ignores_plain_redirect_uri():
    assert security.check_open_redirect(_request()) == []
    no_uri = _msg(client_id="x")
    assert security.check_open_redirect(no_uri) == []


# ---------------------------------------------------------------------------
# injection protection

def test_code_unprotected_without_pkce_or_nonce():
    request = _request(response_type="code")
    response = _response(code="c!")
    findings = security.check_injection_protection(request, response)
    assert _rule_ids(findings) == ["inject.code-unprotected"]

    shielded = _request(response_type="code", nonce="n0nce!")
    assert security.check_injection_protection(shielded, response) == []
    pkce = _request(response_type="code", code_challenge="ch")
    assert security.check_injection_protection(pkce, response) == []
    assert security.check_injection_protection(request, None) == []


def test_at_hash_missing_when_tokens_travel_together():
    request = _request(response_type="token id_token")
    bare = make_id_token("RS256", {"sub": "1"})
    response = _response(access_token="t!", id_token=bare)
    findings = security.check_injection_protection(request, response)
    assert _rule_ids(findings) == ["inject.at-hash-missing"]

    bound = make_id_token("RS256", {"sub": "1", "at_hash": "xyz"})
    response_ok = _response(access_token="t!", id_token=bound)
    assert security.check_injection_protection(request, response_ok) == []

    # an unparseable id_token is the malformed rule's business, not this one
    response_bad = _response(access_token="t!", id_token="garbage")
    assert security.check_injection_protection(request, response_bad) == []


# ---------------------------------------------------------------------------
# id_token algorithm

def test_id_token_alg_rules():
    assert security.check_id_token_alg(None) == []
    assert security.check_id_token_alg(_response(code="c!")) == []

    rs = _response(id_token=make_id_token("RS256", {"sub": "1"}))
    assert security.check_id_token_alg(rs) == []

    hs = _response(id_token=make_id_token("HS256", {"sub": "1"}))
    findings = security.check_id_token_alg(hs)
    assert _rule_ids(findings) == ["idtoken.symmetric-alg"]
    assert findings[0].category == "vulnerability"

    unsigned = _response(id_token=make_id_token("none", {"sub": "1"}))
    assert _rule_ids(security.check_id_token_alg(unsigned)) == \
        ["idtoken.alg-none"]

    broken = _response(id_token="three.dot separated.but not base64url!")
    findings = security.check_id_token_alg(broken)
    assert _rule_ids(findings) == ["idtoken.malformed"]
    assert findings[0].category == "potential-issue"


# ---------------------------------------------------------------------------
# secret leakage

def test_client_secret_in_query_is_flagged():
    url = "https://accounts.google.com/o/oauth2/v2/auth?" + spar.encode_form([
        ("client_id", "c"), ("client_secret", "s3cr3t!")])
    trace = _trace([har_entry(url)])
    findings = security.check_secret_leakage(trace, [])
    assert _rule_ids(findings) == ["secret.client-secret-fc"]
    assert findings[0].evidence[0].excerpt == "s3cr3t!"


def test_client_secret_in_post_body_is_back_channel():
    entry = har_entry("https://oauth2.googleapis.com/token", method="POST",
                      post_mime="application/x-www-form-urlencoded",
                      post_text="grant_type=authorization_code&client_secret=s")
    assert security.check_secret_leakage(_trace([entry]), []) == []


def test_referer_leak_to_third_party():
    trace = _login_trace(LoginShape(referer_leak=True))
    messages = classify.detect_login_requests(trace)
    findings = security.check_secret_leakage(trace, messages)
    assert _rule_ids(findings) == ["secret.referer-leak"]
    assert findings[0].category == "vulnerability"


def test_referer_to_first_party_or_idp_is_fine():
    entries = synth_login_entries(random.Random(1), "shop.example",
                                  LoginShape())
    entries.append(har_entry(
        "https://shop.example/account",
        request_headers=[("Referer", "https://shop.example/cb?code=abc!")],
        started_at="2026-01-17T12:00:04Z"))
    entries.append(har_entry(
        "https://accounts.google.com/logo.png",
        request_headers=[("Referer", "https://shop.example/cb?code=abc!")],
        started_at="2026-01-17T12:00:05Z"))
    trace = _trace(entries)
    messages = classify.detect_login_requests(trace)
    assert security.check_secret_leakage(trace, messages) == []


def test_token_in_url_query_only():
    entries = [
        har_entry("https://shop.example/cb?code=abc!",
                  started_at="2026-01-17T12:00:00Z"),
        har_entry("https://shop.example/done?access_token=t!",
                  started_at="2026-01-17T12:00:01Z"),
        har_entry("https://shop.example/cb#code=frag!",
                  started_at="2026-01-17T12:00:02Z"),
    ]
    findings = security.check_secret_leakage(_trace(entries), [])
    assert _rule_ids(findings) == ["secret.token-in-url"]
    # one finding, one evidence item per offending entry, fragments exempt
    assert len(findings[0].evidence) == 2
    assert findings[0].category == "potential-issue"


# ---------------------------------------------------------------------------
# transport

def test_plain_redirect_uri_is_vulnerability():
    trace = _trace([har_entry("https://shop.example/login")])
    msg = _request(redirect_uri="http://shop.example/cb")
    findings = security.check_transport(trace, [msg])
    assert _rule_ids(findings) == ["tls.plain-redirect-uri"]
    assert findings[0].category == "vulnerability"


def test_loopback_redirect_uri_is_exempt():
    trace = _trace([har_entry("https://shop.example/login")])
    for uri in ("http://127.0.0.1:8123/cb", "http://localhost/cb",
                "http://[::1]/cb"):
        assert security.check_transport(trace, [_request(redirect_uri=uri)]) \
            == []


def test_plain_request_entries_are_flagged():
    entries = [
        har_entry("https://shop.example/", started_at="2026-01-17T12:00:00Z"),
        har_entry("http://shop.example/metrics",
                  started_at="2026-01-17T12:00:01Z"),
    ]
    findings = security.check_transport(_trace(entries), [])
    assert _rule_ids(findings) == ["tls.plain-request"]
    assert findings[0].evidence[0].entry_index == 1


def test_307_relay_of_token_bearing_redirect():
    relay = har_entry("https://accounts.google.com/o/oauth2/v2/auth",
                      status=307,
                      location="https://shop.example/cb#code=abc!&state=s")
    findings = security.check_transport(_trace([relay]), [])
    assert _rule_ids(findings) == ["redirect.307-authz-response"]

    benign = har_entry("https://accounts.google.com/o/oauth2/v2/auth",
                       status=307, location="https://shop.example/start")
    assert security.check_transport(_trace([benign]), []) == []

    ordinary = har_entry("https://accounts.google.com/o/oauth2/v2/auth",
                         status=302,
                         location="https://shop.example/cb#code=abc!")
    assert security.check_transport(_trace([ordinary]), []) == []


# ---------------------------------------------------------------------------
# orchestration

def test_run_all_rejects_visit_traces():
    trace = _login_trace()
    visit = _trace(synth_login_entries(random.Random(1), "shop.example",
                                       LoginShape()),
                   profile_kind="consent-given-visit")
    with pytest.raises(ProfileMismatch):
        security.run_all(visit)
    with pytest.raises(ProfileMismatch):
        security.run_all(trace, visit)


def test_run_all_implicit_without_state():
    shape = LoginShape(response_type="token", scope="email profile",
                       state_kind="absent", pkce=False, delivery="fragment")
    analysis = security.run_all(_login_trace(shape))
    assert analysis.rule_ids() == {"flow.obsolete", "csrf.missing"}
    assert analysis.vulnerability_count == 1  # csrf.missing
    (login,) = analysis.logins
    assert login.requested_flow == "implicit"
    assert login.returned_flow == "implicit"
    assert login.protocol == "oauth2"


def test_run_all_fills_domain_and_sorts_findings():
    shape = LoginShape(state_kind="weak", pkce=False, delivery="none",
                       plain_http_entry=True)
    analysis = security.run_all(_login_trace(shape, seed=1),
                                _login_trace(shape, seed=2))
    assert analysis.domain == "shop.example"
    assert all(f.domain == "shop.example" for f in analysis.findings)
    assert _rule_ids(analysis.findings) == ["csrf.weak", "tls.plain-request"]
    assert analysis.rule_ids() == {"csrf.weak", "tls.plain-request"}


def test_run_all_is_deterministic():
    shape = LoginShape(delivery="query")
    first = security.run_all(_login_trace(shape, 1), _login_trace(shape, 2))
    second = security.run_all(_login_trace(shape, 1), _login_trace(shape, 2))
    assert [f.to_dict() for f in first.findings] == \
        [f.to_dict() for f in second.findings]
    assert first.to_dict() == second.to_dict()


def test_run_all_survives_a_crashing_rule(monkeypatch):
    def boom(pair, cfg=None):
        raise RuntimeError("rule exploded")

    monkeypatch.setattr(security, "check_csrf", boom)
    analysis = security.run_all(_login_trace())
    assert "analyzer.error" in analysis.rule_ids()
    (finding,) = [f for f in analysis.findings
                  if f.rule_id == "analyzer.error"]
    assert "rule exploded" in finding.message
    assert finding.category == "potential-issue"


def test_run_all_countermeasure_summary():
    analysis = security.run_all(_login_trace())
    (login,) = analysis.logins
    assert login.countermeasures == {"pkce": True, "nonce": False,
                                     "at_hash": False}
    assert login.response_channel == classify.CHANNEL_BODY


# ---------------------------------------------------------------------------
# rule catalog

def test_rule_catalog_covers_every_rule():
    catalog = security.load_rule_catalog()
    ids = {item["rule_id"] for item in catalog}
    constants = {
        value for name, value in vars(security).items()
        if name.startswith("RULE_") and isinstance(value, str)
    }
    assert ids == constants
    for item in catalog:
        assert item["category"] in ("vulnerability", "potential-issue")
        assert item["title"]
        assert item["reference"]


def test_catalog_categories_match_emitted_findings():
    categories = security.catalog_categories()
    assert categories["csrf.missing"] == "vulnerability"
    assert categories["secret.token-in-url"] == "potential-issue"
    assert categories["idtoken.symmetric-alg"] == "vulnerability"
    assert categories["flow.obsolete"] == "potential-issue"
