"""End-to-end tests for the four protocol state machines."""

from __future__ import annotations

import random
from dataclasses import dataclass
from typing import TYPE_CHECKING

import pytest

from medsentry._entities import (
    Accept,
    BaseStation,
    InfoServer,
    Reject,
    RepoServer,
    Sensor,
    SessionResult,
)
from medsentry._policy import Action, default_rules
from medsentry._types import (
    Decision,
    EntityId,
    ProvisioningError,
    RejectReason,
    Timestamp,
)
from medsentry._wire import HEADER_BYTES, Envelope, LegTag

if TYPE_CHECKING:
    from collections.abc import Iterator, Sequence

    from medsentry._policy import StoreEntry
    from medsentry._registry import KeyRegistry


@dataclass
class Hops:
    """One initiator and the three servers it talks to."""

    sensor: Sensor
    bs: BaseStation
    info: InfoServer
    repo: RepoServer


def _hops(
    deployment: KeyRegistry,
    *,
    policies: Sequence[StoreEntry] | None = None,
    initiator: int = 0,
) -> Hops:
    sensor_id = deployment.initiators()[initiator].entity_id
    return Hops(
        sensor=Sensor(deployment, sensor_id),
        bs=BaseStation(deployment, deployment.bs_id),
        info=InfoServer(
            deployment,
            deployment.is_id,
            policies=default_rules() if policies is None else policies,
        ),
        repo=RepoServer(deployment, deployment.rs_id),
    )


def _session(
    hops: Hops, now: Timestamp, action: Action = Action.STORE
) -> tuple[list[Envelope], Accept, SessionResult]:
    """Drive one honest session and return every envelope on the way."""
    e1 = hops.sensor.build_request(now, action)
    e2 = hops.bs.process_request(e1.encode(), now)
    assert isinstance(e2, Envelope)
    e3 = hops.info.process_request(e2.encode(), now)
    assert isinstance(e3, Envelope)
    accept = hops.repo.process_request(e3.encode(), now)
    assert isinstance(accept, Accept)
    e5 = hops.info.process_response(accept.reply.encode(), now)
    assert isinstance(e5, Envelope)
    e6 = hops.bs.process_response(e5.encode(), now)
    assert isinstance(e6, Envelope)
    result = hops.sensor.process_response(e6.encode(), now)
    return [e1, e2, e3, accept.reply, e5, e6], accept, result


def _flips(data: bytes, count: int, seed: int) -> Iterator[bytes]:
    """Single-bit corruptions of the ciphertext, header left intact."""
    rng = random.Random(seed)
    for _ in range(count):
        position = rng.randrange(HEADER_BYTES, len(data))
        corrupted = bytearray(data)
        corrupted[position] ^= 1 << rng.randrange(8)
        yield bytes(corrupted)


def _reason(outcome: object) -> RejectReason | None:
    if isinstance(outcome, (Reject, SessionResult)):
        return outcome.reason
    return None


def test_honest_session_completes(deployment: KeyRegistry, now: Timestamp) -> None:
    """Six envelopes in leg order and the initiator ends up holding Sec."""
    hops = _hops(deployment)
    envelopes, accept, result = _session(hops, now)
    assert [e.leg for e in envelopes] == list(LegTag)
    assert result.ok
    assert result.decision is Decision.PERMIT
    assert result.request_id == hops.sensor.last_request_id
    expected = deployment.session_secret(hops.sensor.entity_id)
    assert result.sec == expected
    assert hops.sensor.stored_sec == expected
    assert accept.action is Action.STORE
    assert accept.records == ()
    assert hops.info.decisions == [Decision.PERMIT]
    for entity in (hops.sensor, hops.bs, hops.info, hops.repo):
        assert entity.sessions == {}


def test_hash_counts_per_entity(deployment: KeyRegistry, now: Timestamp) -> None:
    """One digest at the initiator and RS, two at BS and IS."""
    hops = _hops(deployment)
    _session(hops, now)
    assert [
        m.hashes for m in (hops.sensor.meter, hops.bs.meter, hops.info.meter)
    ] == [1, 2, 2]
    assert hops.repo.meter.hashes == 1
    assert (hops.bs.meter.signs, hops.bs.meter.verifies) == (1, 1)
    assert (hops.repo.meter.signs, hops.repo.meter.verifies) == (0, 1)


def test_users_run_the_same_protocol(deployment: KeyRegistry, now: Timestamp) -> None:
    """The provisioned user completes a session under its own role."""
    hops = _hops(deployment, initiator=2)
    _, accept, result = _session(hops, now)
    assert result.ok
    assert accept.record.subject == hops.sensor.entity_id.hex()


def test_retrieve_returns_prior_records(
    deployment: KeyRegistry, now: Timestamp
) -> None:
    """A retrieve sees what earlier sessions stored for the same subject."""
    hops = _hops(deployment)
    _, stored, _ = _session(hops, now)
    _, fetched, result = _session(hops, Timestamp(now + 10), Action.RETRIEVE)
    assert result.ok
    assert fetched.records == (stored.record,)
    assert [r.action for r in hops.repo.store.records] == ["store", "retrieve"]


def test_policy_deny_reaches_the_initiator(
    deployment: KeyRegistry, now: Timestamp
) -> None:
    """IS answers a NotApplicable decision and RS is never contacted."""
    hops = _hops(deployment, policies=[])
    e1 = hops.sensor.build_request(now)
    e2 = hops.bs.process_request(e1.encode(), now)
    assert isinstance(e2, Envelope)
    denied = hops.info.process_request(e2.encode(), now)
    assert isinstance(denied, Reject)
    assert denied.reason is RejectReason.POLICY
    assert denied.reply is not None
    assert denied.reply.leg is LegTag.R_IS3
    e6 = hops.bs.process_response(denied.reply.encode(), now)
    assert isinstance(e6, Envelope)
    result = hops.sensor.process_response(e6.encode(), now)
    assert not result.ok
    assert result.sec is None
    assert result.decision is Decision.NOT_APPLICABLE
    assert result.reason is RejectReason.POLICY
    assert hops.sensor.stored_sec is None
    assert hops.repo.meter.hashes == 0
    assert hops.info.decisions == [Decision.NOT_APPLICABLE]


@pytest.mark.parametrize(("offset", "accepted"), [(2000, True), (2001, False)])
def test_freshness_window_edge(
    deployment: KeyRegistry, now: Timestamp, offset: int, accepted: bool
) -> None:
    """A timestamp exactly one window old passes, one millisecond more fails."""
    sensor = Sensor(deployment, deployment.initiators()[0].entity_id)
    data = sensor.build_request(now).encode()
    for arrival in (now + offset, now - offset):
        outcome = BaseStation(deployment, deployment.bs_id).process_request(
            data, Timestamp(arrival)
        )
        if accepted:
            assert isinstance(outcome, Envelope)
        else:
            assert _reason(outcome) is RejectReason.FRESHNESS


def test_replayed_request_is_refused(deployment: KeyRegistry, now: Timestamp) -> None:
    """The same R_Sen1 delivered twice passes only once."""
    sensor = Sensor(deployment, deployment.initiators()[0].entity_id)
    bs = BaseStation(deployment, deployment.bs_id)
    data = sensor.build_request(now).encode()
    assert isinstance(bs.process_request(data, now), Envelope)
    assert _reason(bs.process_request(data, Timestamp(now + 5))) is (
        RejectReason.FRESHNESS
    )


def test_unknown_or_misplaced_senders_are_malformed(
    deployment: KeyRegistry, now: Timestamp
) -> None:
    """Unprovisioned IDs, server senders and wrong legs never reach crypto."""
    hops = _hops(deployment)
    e1 = hops.sensor.build_request(now)
    stranger = Envelope(e1.leg, EntityId(b"\xab" * 16), e1.iv, e1.ciphertext)
    server = Envelope(e1.leg, deployment.is_id, e1.iv, e1.ciphertext)
    for data in (stranger.encode(), server.encode(), e1.encode()[:20]):
        assert _reason(hops.bs.process_request(data, now)) is RejectReason.MALFORMED
    assert _reason(hops.info.process_request(e1.encode(), now)) is (
        RejectReason.MALFORMED
    )
    assert hops.bs.meter.hashes == 0


def test_abandoned_session_ignores_late_response(
    deployment: KeyRegistry, now: Timestamp
) -> None:
    """Once the initiator gives up, the matching R_BS3 no longer completes."""
    hops = _hops(deployment)
    e1 = hops.sensor.build_request(now)
    e2 = hops.bs.process_request(e1.encode(), now)
    assert isinstance(e2, Envelope)
    e3 = hops.info.process_request(e2.encode(), now)
    assert isinstance(e3, Envelope)
    accept = hops.repo.process_request(e3.encode(), now)
    assert isinstance(accept, Accept)
    e5 = hops.info.process_response(accept.reply.encode(), now)
    assert isinstance(e5, Envelope)
    e6 = hops.bs.process_response(e5.encode(), now)
    assert isinstance(e6, Envelope)
    assert hops.sensor.last_request_id is not None
    hops.sensor.abandon(hops.sensor.last_request_id)
    result = hops.sensor.process_response(e6.encode(), now)
    assert not result.ok
    assert result.reason is RejectReason.INTEGRITY


def test_response_without_nonce_is_refused(
    deployment: KeyRegistry, now: Timestamp
) -> None:
    """An R_RS2 that omits the fresh nonce does not parse at IS."""
    hops = _hops(deployment)
    e1 = hops.sensor.build_request(now)
    e2 = hops.bs.process_request(e1.encode(), now)
    assert isinstance(e2, Envelope)
    e3 = hops.info.process_request(e2.encode(), now)
    assert isinstance(e3, Envelope)
    accept = hops.repo.process_request(e3.encode(), now, include_nonce=False)
    assert isinstance(accept, Accept)
    outcome = hops.info.process_response(accept.reply.encode(), now)
    assert _reason(outcome) is RejectReason.INTEGRITY


def test_servers_cannot_initiate(deployment: KeyRegistry) -> None:
    """Only sensors and users get an initiator state machine."""
    with pytest.raises(ProvisioningError):
        Sensor(deployment, deployment.bs_id)


def _tamper_leg(hops: Hops, leg: LegTag, data: bytes, now: Timestamp) -> object:
    receivers = {
        LegTag.R_SEN1: hops.bs.process_request,
        LegTag.R_BS2: hops.info.process_request,
        LegTag.R_IS2: hops.repo.process_request,
        LegTag.R_RS2: hops.info.process_response,
        LegTag.R_IS3: hops.bs.process_response,
        LegTag.R_BS3: hops.sensor.process_response,
    }
    return receivers[leg](data, now)


def _tampered_session(hops: Hops, now: Timestamp, flips_per_leg: int) -> list[object]:
    """Run one session, feeding corrupted copies of each leg before the real one."""
    outcomes: list[object] = []
    envelope: Envelope = hops.sensor.build_request(now)
    for seed, leg in enumerate(LegTag):
        data = envelope.encode()
        outcomes.extend(
            _tamper_leg(hops, leg, corrupted, now)
            for corrupted in _flips(data, flips_per_leg, seed)
        )
        honest = _tamper_leg(hops, leg, data, now)
        if isinstance(honest, Accept):
            honest = honest.reply
        if isinstance(honest, SessionResult):
            assert honest.ok
            break
        assert isinstance(honest, Envelope), honest
        envelope = honest
    return outcomes


def test_single_flip_per_leg_is_detected(
    deployment: KeyRegistry, now: Timestamp
) -> None:
    """A handful of corruptions on every leg, and the session still completes."""
    outcomes = _tampered_session(_hops(deployment), now, 4)
    assert len(outcomes) == 24
    assert {_reason(o) for o in outcomes} == {RejectReason.INTEGRITY}


@pytest.mark.slow
def test_thousand_flips_are_all_detected(
    deployment: KeyRegistry, now: Timestamp
) -> None:
    """Over a thousand random single-bit flips, none slips through."""
    outcomes = _tampered_session(_hops(deployment), now, 170)
    assert len(outcomes) >= 1000
    assert all(_reason(o) is RejectReason.INTEGRITY for o in outcomes)


def test_hops_expire_unanswered_sessions(
    deployment: KeyRegistry, now: Timestamp
) -> None:
    """BS and IS keep a session only until the response timeout passes."""
    hops = _hops(deployment)
    timeout = deployment.config.response_timeout_ms
    e2 = hops.bs.process_request(hops.sensor.build_request(now).encode(), now)
    assert isinstance(e2, Envelope)
    assert isinstance(hops.info.process_request(e2.encode(), now), Envelope)
    assert hops.bs.expire_sessions(Timestamp(now + timeout)) == 0
    assert hops.bs.expire_sessions(Timestamp(now + timeout + 1)) == 1
    assert hops.info.expire_sessions(Timestamp(now + timeout + 1)) == 1
    assert hops.bs.sessions == {}
    assert hops.info.sessions == {}
