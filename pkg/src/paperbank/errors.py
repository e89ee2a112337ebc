"""Error type shared by every module.

Operations signal contract violations by raising DomainError with a stable
string code; the service layer maps codes onto HTTP statuses and the message
channel maps them onto error frames. Expected negative outcomes that are part
of an operation's result (validation violations, per-op sync results) are
returned as data, not raised.
"""

from __future__ import annotations


class DomainError(Exception):
    """An operation failed with a well-known, machine-readable code."""

    def __init__(self, code: str, message: str = ""):
        super().__init__(message or code)
        self.code = code
        self.message = message or code

    def __repr__(self) -> str:  # pragma: no cover
        return f"DomainError({self.code!r}, {self.message!r})"


# Codes the pipeline treats as transient; everything else fails a stage
# on first occurrence.
RETRYABLE_CODES = frozenset({"provider-unavailable", "provider-timeout"})
