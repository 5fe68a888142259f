"""Shared protocol atoms, widths, and the exception hierarchy."""

from __future__ import annotations

from enum import StrEnum
from typing import NewType

ENTITY_ID_BYTES = 16
NONCE_BYTES = 16
TIMESTAMP_BYTES = 8
SIGNATURE_BYTES = 64
MASKED_BYTES = 64
SEC_BYTES = 16
IV_BYTES = 16

EntityId = NewType("EntityId", bytes)
Nonce = NewType("Nonce", bytes)
Timestamp = NewType("Timestamp", int)


class RejectReason(StrEnum):
    """Why a verifying hop refused an envelope."""

    INTEGRITY = "integrity"
    FRESHNESS = "freshness"
    POLICY = "policy"
    MALFORMED = "malformed"
    RATE_LIMITED = "rate_limited"


class MedSentryError(RuntimeError):
    """Root of every error raised by medsentry."""


class WidthError(MedSentryError, ValueError):
    """Raised when a fixed-width operand has the wrong size."""


class LengthOverflowError(MedSentryError, ValueError):
    """Raised when a hash input exceeds the 2**64 bit length bound."""


class MalformedKeyError(MedSentryError, ValueError):
    """Raised when a public key is not a point on the configured curve."""


class ParameterError(MedSentryError, ValueError):
    """Raised when numeric parameters violate an operation's precondition."""


class InsufficientSharesError(MedSentryError):
    """Raised when fewer shares than the threshold are supplied."""


class DegenerateShareError(MedSentryError):
    """Raised when two shares use the same evaluation point."""


class PolicyValidationError(MedSentryError, ValueError):
    """Raised when a policy rule record fails validation."""


class SamlParseError(MedSentryError):
    """Raised when a SAML document is malformed or not canonical."""

    def __init__(self, element: str, detail: str) -> None:
        """Record the first offending element alongside the message."""
        self.element = element
        self.detail = detail
        super().__init__(f"<{element}>: {detail}")

    def __reduce__(self) -> tuple[type[SamlParseError], tuple[str, str]]:
        """Pickle with both constructor arguments."""
        return type(self), (self.element, self.detail)


class ProvisioningError(MedSentryError):
    """Raised when an entity lacks the key material a step needs."""


class ConfigError(MedSentryError):
    """Raised when a scenario or topology is invalid."""

    def __init__(self, field: str, detail: str) -> None:
        """Record the offending field path alongside the message."""
        self.field = field
        self.detail = detail
        super().__init__(f"{field}: {detail}")

    def __reduce__(self) -> tuple[type[ConfigError], tuple[str, str]]:
        """Pickle with both constructor arguments."""
        return type(self), (self.field, self.detail)


class UnreachableError(MedSentryError):
    """Raised when no live path joins two nodes."""


class RejectError(MedSentryError):
    """Raised inside a protocol step when an inbound envelope is refused."""

    def __init__(self, reason: RejectReason, detail: str) -> None:
        """Record the rejection reason alongside the message."""
        self.reason = reason
        self.detail = detail
        super().__init__(f"{reason}: {detail}")

    def __reduce__(self) -> tuple[type[RejectError], tuple[RejectReason, str]]:
        """Pickle with both constructor arguments."""
        return type(self), (self.reason, self.detail)


class Decision(StrEnum):
    """The four authorization outcomes."""

    PERMIT = "Permit"
    DENY = "Deny"
    NOT_APPLICABLE = "NotApplicable"
    INDETERMINATE = "Indeterminate"
