"""Error taxonomy shared by all analyzer modules."""

from __future__ import annotations


class AuditError(Exception):
    """Base class for every error this package raises on purpose."""


class MalformedInput(AuditError):
    """Input document is not parseable at all (bad JSON, missing top-level keys)."""


class EntryError(MalformedInput):
    """A single archive entry is unreadable. Carries the entry index."""

    def __init__(self, index: int, reason: str):
        super().__init__(f"entry {index}: {reason}")
        self.index = index
        self.reason = reason


class MissingMetadataField(MalformedInput):
    """Trace metadata document lacks a required key."""

    def __init__(self, field: str):
        super().__init__(f"metadata field missing: {field}")
        self.field = field


class MalformedJwt(AuditError):
    """A value that must be a JWT does not decode as one."""


class ProfileMismatch(AuditError):
    """An analysis was invoked on a trace whose capture profile does not allow it."""


class InvalidDomain(AuditError):
    """A website domain string is empty or not a plausible registrable name."""


class UnknownFormat(AuditError):
    """Requested output format is not supported."""
