"""Tests for policy rules, the decision procedure and the rule store."""

from __future__ import annotations

import itertools
import json
from datetime import UTC, datetime
from typing import TYPE_CHECKING

import pytest

from medsentry._policy import (
    WEEKDAYS,
    WILDCARD,
    AccessCounter,
    Action,
    MalformedRule,
    PolicyRule,
    Weekday,
    add_rule,
    default_rules,
    evaluate,
    load_store,
    parse_rule,
    remove_rule,
    save_store,
    signature_path,
    to_datetime,
)
from medsentry._saml import SamlRequest, create_request
from medsentry._types import (
    MASKED_BYTES,
    ConfigError,
    Decision,
    EntityId,
    ParameterError,
    PolicyValidationError,
    Timestamp,
)

if TYPE_CHECKING:
    from pathlib import Path

    from medsentry._policy import StoreEntry
    from medsentry._registry import KeyRegistry

SUBJECT = EntityId(bytes(range(16)))
RS_ID = EntityId(bytes([0xAB]) * 16)


def _ms(when: datetime) -> Timestamp:
    return Timestamp(int(when.timestamp() * 1000))


WEDNESDAY_10 = _ms(datetime(2024, 1, 3, 10, 0, tzinfo=UTC))
WEDNESDAY_20 = _ms(datetime(2024, 1, 3, 20, 0, tzinfo=UTC))
SATURDAY_10 = _ms(datetime(2024, 1, 6, 10, 0, tzinfo=UTC))
SATURDAY_20 = _ms(datetime(2024, 1, 6, 20, 0, tzinfo=UTC))


def _rule(**overrides: object) -> PolicyRule:
    fields: dict[str, object] = {
        "policy_id": "office-hours",
        "sender_role": "sensor",
        "recipient": WILDCARD,
        "allowed_days": [str(d) for d in WEEKDAYS],
        "allowed_window": ["09:00", "17:00"],
        "max_accesses_per_day": 1,
        "action": "store",
    }
    fields.update(overrides)
    return parse_rule(fields)


def _request(now: Timestamp) -> SamlRequest:
    return create_request(
        SUBJECT, SUBJECT, bytes(MASKED_BYTES), now, [("action", "store")]
    )


TRUTH_TABLE = [
    (day_ok, window_ok, count_ok, match)
    for day_ok, window_ok, count_ok, match in itertools.product(
        (True, False), repeat=4
    )
]


@pytest.mark.parametrize(("day_ok", "window_ok", "count_ok", "match"), TRUTH_TABLE)
def test_decision_truth_table(
    day_ok: bool, window_ok: bool, count_ok: bool, match: bool
) -> None:
    """Permit needs day, window and count; a non-matching rule never decides."""
    now = {
        (True, True): WEDNESDAY_10,
        (True, False): WEDNESDAY_20,
        (False, True): SATURDAY_10,
        (False, False): SATURDAY_20,
    }[day_ok, window_ok]
    counters = AccessCounter()
    if not count_ok:
        counters.increment(SUBJECT.hex(), "office-hours", to_datetime(now).date())
    role = "sensor" if match else "user"
    decision = evaluate([_rule()], counters, role, _request(now), "store", now)
    if not match:
        assert decision is Decision.NOT_APPLICABLE
    elif day_ok and window_ok and count_ok:
        assert decision is Decision.PERMIT
    else:
        assert decision is Decision.DENY


def test_table_has_sixteen_cases() -> None:
    """Three conditions times match or not."""
    assert len(TRUTH_TABLE) == 16


def _decide(
    store: list[StoreEntry],
    counters: AccessCounter,
    now: Timestamp,
    *,
    action: str = "store",
    recipient: EntityId | None = None,
) -> Decision:
    return evaluate(
        store, counters, "sensor", _request(now), action, now, recipient=recipient
    )


def test_permit_exhausts_daily_counter() -> None:
    """The second access on one day hits the limit; the next day resets it."""
    counters = AccessCounter()
    store: list[StoreEntry] = [_rule()]
    assert _decide(store, counters, WEDNESDAY_10) is Decision.PERMIT
    assert _decide(store, counters, WEDNESDAY_10) is Decision.DENY
    thursday = Timestamp(WEDNESDAY_10 + 24 * 3600 * 1000)
    assert _decide(store, counters, thursday) is Decision.PERMIT


def test_window_end_is_exclusive() -> None:
    """16:59 is inside a 09:00-17:00 window and 17:00 is not."""
    store: list[StoreEntry] = [_rule(max_accesses_per_day=10)]
    inside = _ms(datetime(2024, 1, 3, 16, 59, tzinfo=UTC))
    outside = _ms(datetime(2024, 1, 3, 17, 0, tzinfo=UTC))
    counters = AccessCounter()
    assert _decide(store, counters, inside) is Decision.PERMIT
    assert _decide(store, counters, outside) is Decision.DENY


def test_first_matching_rule_decides() -> None:
    """Rules are consulted in store order."""
    weekends = _rule(policy_id="weekends", allowed_days=["sat", "sun"])
    store: list[StoreEntry] = [weekends, _rule()]
    assert _decide(store, AccessCounter(), WEDNESDAY_10) is Decision.DENY


def test_recipient_and_action_must_match() -> None:
    """A rule bound to one recipient or action ignores others."""
    store: list[StoreEntry] = [_rule(recipient=RS_ID.hex())]
    counters = AccessCounter()
    assert _decide(store, counters, WEDNESDAY_10) is Decision.NOT_APPLICABLE
    assert _decide(store, counters, WEDNESDAY_10, recipient=RS_ID) is Decision.PERMIT
    assert (
        _decide(store, counters, WEDNESDAY_10, action="retrieve", recipient=RS_ID)
        is Decision.NOT_APPLICABLE
    )


def test_broken_data_is_indeterminate() -> None:
    """A malformed entry or an unrepresentable time yields Indeterminate."""
    broken: list[StoreEntry] = [MalformedRule(raw="{", error="not json"), _rule()]
    assert _decide(broken, AccessCounter(), WEDNESDAY_10) is Decision.INDETERMINATE
    far_future = Timestamp(2**63)
    assert _decide([_rule()], AccessCounter(), far_future) is Decision.INDETERMINATE


def test_empty_store_is_not_applicable() -> None:
    """No rules, no decision."""
    assert _decide([], AccessCounter(), WEDNESDAY_10) is Decision.NOT_APPLICABLE


@pytest.mark.parametrize(
    "override",
    [
        {"allowed_window": ["17:00", "09:00"]},
        {"allowed_window": ["9:00", "17:00"]},
        {"allowed_window": ["09:00", "24:01"]},
        {"allowed_days": []},
        {"allowed_days": ["someday"]},
        {"recipient": "AB" * 16},
        {"max_accesses_per_day": 0},
        {"action": "delete"},
        {"owner": "root"},
    ],
)
def test_invalid_rules_are_rejected(override: dict[str, object]) -> None:
    """Validation failures surface as PolicyValidationError."""
    with pytest.raises(PolicyValidationError):
        _rule(**override)


def test_days_are_normalized_to_week_order() -> None:
    """Allowed days come back Monday first without duplicates."""
    rule = _rule(allowed_days=["sun", "mon", "sun"])
    assert rule.allowed_days == (Weekday.MON, Weekday.SUN)


def test_canonical_form_round_trips() -> None:
    """canonical() is sorted JSON that parses back to the same rule."""
    rule = _rule()
    text = rule.canonical()
    assert list(json.loads(text)) == sorted(json.loads(text))
    assert parse_rule(text) == rule


def test_store_round_trip_keeps_malformed_lines(tmp_path: Path) -> None:
    """Bad lines survive a save as MalformedRule entries."""
    path = tmp_path / "policies.jsonl"
    path.write_text(_rule().canonical() + "\nnot json\n\n", encoding="utf-8")
    store = load_store(path)
    assert isinstance(store[0], PolicyRule)
    assert isinstance(store[1], MalformedRule)
    save_store(path, store)
    assert path.read_text(encoding="utf-8").splitlines() == [
        _rule().canonical(),
        "not json",
    ]


def test_add_and_remove_rules(tmp_path: Path) -> None:
    """IDs are unique; removing a missing ID reports False."""
    path = tmp_path / "nested" / "policies.jsonl"
    assert load_store(path) == []
    add_rule(path, _rule())
    with pytest.raises(PolicyValidationError):
        add_rule(path, _rule())
    add_rule(path, _rule(policy_id="second"))
    assert remove_rule(path, "office-hours")
    assert not remove_rule(path, "office-hours")
    remaining = load_store(path)
    assert [r.policy_id for r in remaining if isinstance(r, PolicyRule)] == ["second"]


def test_default_rules_permit_every_initiator_action() -> None:
    """The provisioning skeleton permits both roles and both actions."""
    store = default_rules()
    request = _request(SATURDAY_20)
    for role, action in itertools.product(("sensor", "user"), Action):
        decision = evaluate(
            store, AccessCounter(), role, request, str(action), SATURDAY_20
        )
        assert decision is Decision.PERMIT


def test_signed_store_round_trips(tmp_path: Path, deployment: KeyRegistry) -> None:
    """A store sealed by the IS loads back with only the public key."""
    path = tmp_path / "policies.jsonl"
    save_store(path, default_rules(), key=deployment.policy_key(signing=True))
    assert signature_path(path).exists()
    assert load_store(path, key=deployment.policy_key()) == default_rules()


def test_tampered_store_is_refused(tmp_path: Path, deployment: KeyRegistry) -> None:
    """Editing a rule after signing breaks verification."""
    path = tmp_path / "policies.jsonl"
    save_store(path, default_rules(), key=deployment.policy_key(signing=True))
    text = path.read_text(encoding="utf-8")
    path.write_text(text.replace("1000000", "1000001", 1), encoding="utf-8")
    with pytest.raises(ConfigError, match="does not verify"):
        load_store(path, key=deployment.policy_key())
    assert load_store(path) != default_rules()


def test_unsigned_store_is_refused(tmp_path: Path, deployment: KeyRegistry) -> None:
    """A key demands a signature file next to the store."""
    path = tmp_path / "policies.jsonl"
    save_store(path, default_rules())
    with pytest.raises(ConfigError, match="not signed"):
        load_store(path, key=deployment.policy_key())
    signature_path(path).write_text("zz\n", encoding="utf-8")
    with pytest.raises(ConfigError, match="unreadable"):
        load_store(path, key=deployment.policy_key())


def test_signing_needs_the_private_key(
    tmp_path: Path, deployment: KeyRegistry
) -> None:
    """Saving with a public-only key is a parameter error."""
    with pytest.raises(ParameterError):
        save_store(tmp_path / "p.jsonl", [], key=deployment.policy_key())


def test_signed_edits_stay_verifiable(
    tmp_path: Path, deployment: KeyRegistry
) -> None:
    """add_rule and remove_rule re-sign the store they change."""
    path = tmp_path / "policies.jsonl"
    key = deployment.policy_key(signing=True)
    save_store(path, default_rules(), key=key)
    add_rule(path, _rule(), key=key)
    assert remove_rule(path, "office-hours", key=key)
    assert load_store(path, key=deployment.policy_key()) == default_rules()
