"""Role+attribute authorization rules and the four-valued decision procedure.

A rule matches on ``(sender_role, recipient, action)``. The first matching
rule in store order decides: Permit when the day, the time window and the
daily access count all allow the request, Deny otherwise. No match is
NotApplicable. Broken rule data is Indeterminate, never an exception.
"""

from __future__ import annotations

import json
from collections import defaultdict
from dataclasses import dataclass, field
from datetime import UTC, date, datetime, timedelta
from enum import StrEnum
from typing import TYPE_CHECKING, Any

import structlog
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from medsentry._datasets import atomic_write
from medsentry._ec import P256
from medsentry._ecdsa import SignatureRS, sign, verify
from medsentry._hashing import Digest
from medsentry._types import (
    ConfigError,
    Decision,
    EntityId,
    ParameterError,
    PolicyValidationError,
    Timestamp,
)

if TYPE_CHECKING:
    from collections.abc import Sequence
    from pathlib import Path

    from medsentry._ec import CurveParams, Point
    from medsentry._saml import SamlRequest

logger = structlog.get_logger(__name__)

WILDCARD = "*"
SIGNATURE_SUFFIX = ".sig"
_EPOCH = datetime(1970, 1, 1, tzinfo=UTC)


class Weekday(StrEnum):
    """Day names as they appear in rule files."""

    MON = "mon"
    TUE = "tue"
    WED = "wed"
    THU = "thu"
    FRI = "fri"
    SAT = "sat"
    SUN = "sun"


_WEEK = tuple(Weekday)
WEEKDAYS = _WEEK[:5]


class Action(StrEnum):
    """Operations a rule can grant against the repository."""

    STORE = "store"
    RETRIEVE = "retrieve"


def _minutes(clock: str) -> int:
    hours, sep, minutes = clock.partition(":")
    if (
        sep != ":"
        or len(hours) != 2
        or len(minutes) != 2
        or not (hours + minutes).isdigit()
    ):
        msg = f"expected HH:MM, got {clock!r}"
        raise ValueError(msg)
    value = int(hours) * 60 + int(minutes)
    if int(minutes) >= 60 or value > 24 * 60:
        msg = f"{clock!r} is not a time of day"
        raise ValueError(msg)
    return value


class PolicyRule(BaseModel):
    """One administrator-defined authorization rule."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    policy_id: str = Field(min_length=1)
    sender_role: str = Field(min_length=1)
    recipient: str = Field(pattern=r"^([0-9a-f]{32}|\*)$")
    allowed_days: tuple[Weekday, ...] = Field(min_length=1)
    allowed_window: tuple[str, str]
    max_accesses_per_day: int = Field(ge=1)
    action: Action

    @field_validator("allowed_days")
    @classmethod
    def _normalize_days(cls, days: tuple[Weekday, ...]) -> tuple[Weekday, ...]:
        return tuple(day for day in _WEEK if day in days)

    @field_validator("allowed_window")
    @classmethod
    def _check_window(cls, window: tuple[str, str]) -> tuple[str, str]:
        start, end = (_minutes(part) for part in window)
        if start >= end:
            msg = f"window start {window[0]} must precede end {window[1]}"
            raise ValueError(msg)
        return window

    @property
    def window_minutes(self) -> tuple[int, int]:
        """Window as minutes after midnight, end exclusive."""
        return _minutes(self.allowed_window[0]), _minutes(self.allowed_window[1])

    def canonical(self) -> str:
        """Single-line JSON with sorted keys."""
        return json.dumps(self.model_dump(mode="json"), sort_keys=True)


@dataclass(frozen=True)
class MalformedRule:
    """A store entry that failed validation; evaluates to Indeterminate."""

    raw: str
    error: str


StoreEntry = PolicyRule | MalformedRule


def parse_rule(data: str | dict[str, Any]) -> PolicyRule:
    """Validate one rule from JSON text or a mapping."""
    try:
        if isinstance(data, str):
            return PolicyRule.model_validate_json(data)
        return PolicyRule.model_validate(data)
    except ValidationError as exc:
        msg = f"invalid policy rule: {exc}"
        raise PolicyValidationError(msg) from exc


@dataclass
class AccessCounter:
    """Permitted accesses per ``(subject, policy_id, day)``."""

    counts: defaultdict[tuple[str, str, date], int] = field(
        default_factory=lambda: defaultdict(int)
    )

    def get(self, subject: str, policy_id: str, day: date) -> int:
        """Accesses already permitted on ``day``."""
        return self.counts.get((subject, policy_id, day), 0)

    def increment(self, subject: str, policy_id: str, day: date) -> int:
        """Record one more permitted access and return the new count."""
        self.counts[subject, policy_id, day] += 1
        return self.counts[subject, policy_id, day]


def to_datetime(now: Timestamp) -> datetime:
    """UTC datetime of a millisecond timestamp."""
    return _EPOCH + timedelta(milliseconds=now)


def _matches(
    rule: PolicyRule, subject_role: str, recipient: EntityId | None, action: str
) -> bool:
    if rule.sender_role != subject_role or rule.action != action:
        return False
    return rule.recipient == WILDCARD or (
        recipient is not None and rule.recipient == recipient.hex()
    )


def _decide(
    rule: PolicyRule, counters: AccessCounter, subject: str, when: datetime
) -> Decision:
    start, end = rule.window_minutes
    minute = when.hour * 60 + when.minute
    day_ok = _WEEK[when.weekday()] in rule.allowed_days
    window_ok = start <= minute < end
    count_ok = (
        counters.get(subject, rule.policy_id, when.date()) < rule.max_accesses_per_day
    )
    if day_ok and window_ok and count_ok:
        counters.increment(subject, rule.policy_id, when.date())
        return Decision.PERMIT
    return Decision.DENY


def evaluate(  # noqa: PLR0913
    store: Sequence[StoreEntry],
    counters: AccessCounter,
    subject_role: str,
    request: SamlRequest,
    action: str,
    now: Timestamp,
    *,
    recipient: EntityId | None = None,
) -> Decision:
    """Decide ``request`` against ``store``; Permit bumps the access counter."""
    subject = request.subject.hex()
    decision = Decision.NOT_APPLICABLE
    policy_id = None
    try:
        when = to_datetime(now)
        for entry in store:
            if isinstance(entry, MalformedRule):
                decision = Decision.INDETERMINATE
                break
            if _matches(entry, subject_role, recipient, action):
                policy_id = entry.policy_id
                decision = _decide(entry, counters, subject, when)
                break
    except Exception:  # noqa: BLE001
        logger.warning("policy_evaluation_failed", subject=subject, exc_info=True)
        decision = Decision.INDETERMINATE
    logger.debug(
        "policy_decision",
        subject=subject,
        role=subject_role,
        action=action,
        policy_id=policy_id,
        decision=str(decision),
    )
    return decision


@dataclass(frozen=True)
class StoreKey:
    """The info server key that seals the policy store.

    Loading only needs ``public``; writing a signed store needs ``private``.
    """

    public: Point
    private: int | None = None
    digest: Digest = Digest.LLW256
    curve: CurveParams = P256


def signature_path(path: Path) -> Path:
    """Sidecar file holding the hex signature over the bytes of ``path``."""
    return path.with_name(path.name + SIGNATURE_SUFFIX)


def _check_signature(path: Path, body: bytes, key: StoreKey) -> None:
    sig_path = signature_path(path)
    try:
        blob = bytes.fromhex(sig_path.read_text(encoding="utf-8").strip())
        signature = SignatureRS.decode(blob, key.curve)
    except FileNotFoundError as exc:
        raise ConfigError(str(path), "policy store is not signed") from exc
    except ValueError as exc:
        raise ConfigError(str(sig_path), "unreadable policy signature") from exc
    if not verify(key.public, body, signature, key.digest, key.curve):
        raise ConfigError(str(path), "policy store signature does not verify")


def load_store(path: Path, *, key: StoreKey | None = None) -> list[StoreEntry]:
    """Read a JSON-lines store; invalid lines become :class:`MalformedRule`.

    With ``key`` the whole file must carry a valid IS signature, otherwise
    :class:`ConfigError` is raised before any rule is read.
    """
    if not path.exists():
        return []
    body = path.read_bytes()
    if key is not None:
        _check_signature(path, body, key)
    entries: list[StoreEntry] = []
    for line in body.decode("utf-8").splitlines():
        if not line.strip():
            continue
        try:
            entries.append(parse_rule(line))
        except PolicyValidationError as exc:
            entries.append(MalformedRule(raw=line, error=str(exc)))
    return entries


def save_store(
    path: Path, rules: Sequence[StoreEntry], *, key: StoreKey | None = None
) -> None:
    """Write the store atomically, one canonical rule per line, then sign it."""
    if key is not None and key.private is None:
        msg = "signing the policy store needs the IS private key"
        raise ParameterError(msg)
    lines = [
        entry.canonical() if isinstance(entry, PolicyRule) else entry.raw
        for entry in rules
    ]
    body = "".join(f"{line}\n" for line in lines).encode("utf-8")
    atomic_write(path, body)
    if key is not None and key.private is not None:
        signature = sign(key.private, body, key.digest, key.curve)
        atomic_write(signature_path(path), signature.encode(key.curve).hex() + "\n")
        logger.debug("policy_store_signed", path=str(path), rules=len(lines))


def add_rule(
    path: Path, rule: PolicyRule, *, key: StoreKey | None = None
) -> list[StoreEntry]:
    """Append ``rule``; its ``policy_id`` must be new."""
    store = load_store(path, key=key)
    if any(isinstance(e, PolicyRule) and e.policy_id == rule.policy_id for e in store):
        msg = f"policy {rule.policy_id!r} already exists"
        raise PolicyValidationError(msg)
    store.append(rule)
    save_store(path, store, key=key)
    return store


def remove_rule(path: Path, policy_id: str, *, key: StoreKey | None = None) -> bool:
    """Drop the rule named ``policy_id``; return whether one was removed."""
    store = load_store(path, key=key)
    kept = [
        e for e in store if not (isinstance(e, PolicyRule) and e.policy_id == policy_id)
    ]
    if len(kept) == len(store):
        return False
    save_store(path, kept, key=key)
    return True


def default_rules() -> list[StoreEntry]:
    """Round-the-clock permits for sensors and users.

    Provisioning writes these as the policy skeleton; the simulator falls back
    to them when a run names no policies.
    """
    return [
        PolicyRule(
            policy_id=f"default-{role}-{action}",
            sender_role=role,
            recipient=WILDCARD,
            allowed_days=_WEEK,
            allowed_window=("00:00", "24:00"),
            max_accesses_per_day=1_000_000,
            action=action,
        )
        for role in ("sensor", "user")
        for action in Action
    ]
