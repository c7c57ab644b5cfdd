"""Privacy leak detection on visit traces.

Two leak kinds matter for profiling by identity providers:

* LAL, login attempt leak: the mere possibility of logging in leaks the
  visited website to the provider because the login widget or probe talks
  to the provider's servers before the user does anything.
* TEL, token exchange leak: tokens for an already-consenting user flow to
  the website (query, fragment, or in-browser message) on a plain visit,
  telling the provider about every return visit.

Both detectors refuse login-run traces: a deliberate login is consent, not
leakage.  Findings carry the capture profile so aggregation can split
consent-given from no-consent visits.
"""

from __future__ import annotations

from dataclasses import dataclass

from . import classify, spar
from .classify import IdpRegistry, SsoMessage, default_registry
from .exceptions import ProfileMismatch
from .trace import PROFILE_LOGIN_RUN, Trace

LEAK_LAL = "LAL"
LEAK_TEL = "TEL"

ANNOTATION_NO_REQUEST = "response-without-request"


@dataclass(frozen=True)
class PrivacyEvidence:
    ref_kind: str  # "entry" or "ibc"
    index: int
    detail: str

    def to_dict(self) -> dict:
        return {"ref_kind": self.ref_kind, "index": self.index,
                "detail": self.detail}


@dataclass(frozen=True)
class PrivacyFinding:
    kind: str
    idp: str
    domain: str
    profile_kind: str
    evidence: PrivacyEvidence
    annotation: str | None = None

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "idp": self.idp,
            "domain": self.domain,
            "profile_kind": self.profile_kind,
            "evidence": self.evidence.to_dict(),
            "annotation": self.annotation,
        }


def _require_visit_trace(trace: Trace, analysis: str) -> None:
    if trace.metadata.profile_kind == PROFILE_LOGIN_RUN:
        raise ProfileMismatch(
            f"{analysis} applies to visit traces, not login runs")


def detect_lal(trace: Trace, registry: IdpRegistry | None = None,
               ) -> list[PrivacyFinding]:
    """One finding per identity provider that received a login request."""
    _require_visit_trace(trace, "login attempt leak detection")
    registry = registry or default_registry()
    messages = classify.detect_login_requests(trace, registry)
    findings = []
    seen: set[str] = set()
    for msg in messages:
        if msg.idp in seen:
            continue
        seen.add(msg.idp)
        detail = (trace.entries[msg.entry_ref].request.url
                  if msg.ref_kind == classify.REF_ENTRY
                  else trace.ibc_events[msg.entry_ref].payload[:200])
        findings.append(PrivacyFinding(
            kind=LEAK_LAL,
            idp=msg.idp,
            domain=trace.metadata.domain,
            profile_kind=trace.metadata.profile_kind,
            evidence=PrivacyEvidence(ref_kind=msg.ref_kind,
                                     index=msg.entry_ref, detail=detail[:200]),
        ))
    return findings


def detect_tel(trace: Trace, registry: IdpRegistry | None = None,
               ) -> list[PrivacyFinding]:
    """One finding per login response that delivered a token on a visit."""
    _require_visit_trace(trace, "token exchange leak detection")
    registry = registry or default_registry()
    messages = classify.dedupe_login_requests(
        classify.detect_login_requests(trace, registry))
    findings = []
    matched_refs: set[tuple[str, int]] = set()
    for msg in messages:
        response = classify.match_login_response(trace, msg)
        if response is None:
            continue
        matched_refs.add((response.ref_kind, response.entry_ref))
        findings.append(PrivacyFinding(
            kind=LEAK_TEL,
            idp=msg.idp,
            domain=trace.metadata.domain,
            profile_kind=trace.metadata.profile_kind,
            evidence=PrivacyEvidence(
                ref_kind=response.ref_kind, index=response.entry_ref,
                detail=f"token via {response.channel}"),
        ))
    # token deliveries with no causally earlier login request: flag them for
    # manual review instead of dropping them
    for index, event in enumerate(trace.ibc_events):
        if (classify.REF_IBC, index) in matched_refs:
            continue
        tree = classify.ibc_param_tree(event)
        if not any(spar.search(tree, name) for name in classify.TOKEN_PARAMS):
            continue
        idp = registry.match_origin(event.source_origin) or classify.UNKNOWN_IDP
        findings.append(PrivacyFinding(
            kind=LEAK_TEL,
            idp=idp,
            domain=trace.metadata.domain,
            profile_kind=trace.metadata.profile_kind,
            evidence=PrivacyEvidence(ref_kind=classify.REF_IBC, index=index,
                                     detail=f"token via {event.kind}"),
            annotation=ANNOTATION_NO_REQUEST,
        ))
    return findings


def aggregate_privacy(findings: list[PrivacyFinding]) -> dict:
    """Counts per provider and capture profile, deduplicated.

    Two findings of the same kind for the same (domain, idp, profile) count
    once: a leak either exists for a visit or it does not.
    """
    deduped: dict[tuple[str, str, str, str], PrivacyFinding] = {}
    for finding in findings:
        key = (finding.domain, finding.idp, finding.profile_kind, finding.kind)
        deduped.setdefault(key, finding)

    rows: dict[str, dict] = {}
    for (domain, idp, profile, kind), _ in sorted(deduped.items()):
        row = rows.setdefault(idp, {
            "idp": idp,
            "no-consent-visit": {LEAK_LAL: 0, LEAK_TEL: 0},
            "consent-given-visit": {LEAK_LAL: 0, LEAK_TEL: 0},
        })
        if profile in row:
            row[profile][kind] += 1

    ordered = [rows[idp] for idp in sorted(rows)]
    totals = {
        "no-consent-visit": {
            LEAK_LAL: sum(r["no-consent-visit"][LEAK_LAL] for r in ordered),
            LEAK_TEL: sum(r["no-consent-visit"][LEAK_TEL] for r in ordered),
        },
        "consent-given-visit": {
            LEAK_LAL: sum(r["consent-given-visit"][LEAK_LAL] for r in ordered),
            LEAK_TEL: sum(r["consent-given-visit"][LEAK_TEL] for r in ordered),
        },
    }
    return {"rows": ordered, "totals": totals}
