"""The four protocol state machines: initiator, BS, IS and RS.

Request leg::

    R_Sen1 = E(SAML || Sen_S || Sen_N || TS || Sen_ID)        initiator -> BS
    R_BS2  = E(SAML || BS_S2 || Sen_N || TS || BS_ID)         BS -> IS
    R_IS2  = E(SAML || IS_S2 || Sec || Sen_N || TS || IS_ID)  IS -> RS

Response leg, every hop::

    R = E(T_AR || N || TS || responder_ID || AuthzResponse)

``E`` is hop-key AES-CTR followed by an XOR with the recipient ID stream.
Each V_tm is the hop signature XOR the recipient ID XOR the hop timestamp.
``T_AR`` masks the signature the responder verified on the request leg with
the fresh nonce ``N`` and ``Sec``, so the previous hop unmasks with the
signature it produced itself.
"""

from __future__ import annotations

import secrets
from dataclasses import dataclass
from typing import TYPE_CHECKING

import structlog

from medsentry._aes import decrypt_payload, encrypt_payload
from medsentry._datasets import RepoRecord, RepoStore
from medsentry._ecdsa import SignatureRS, sign, verify
from medsentry._policy import AccessCounter, Action, evaluate
from medsentry._saml import (
    SamlRequest,
    SamlResponse,
    create_request,
    parse_request,
    parse_response,
    serialize_request,
    serialize_response,
)
from medsentry._shamir import reconstruct
from medsentry._types import (
    ENTITY_ID_BYTES,
    IV_BYTES,
    MASKED_BYTES,
    NONCE_BYTES,
    SEC_BYTES,
    SIGNATURE_BYTES,
    TIMESTAMP_BYTES,
    Decision,
    EntityId,
    InsufficientSharesError,
    Nonce,
    ProvisioningError,
    RejectError,
    RejectReason,
    SamlParseError,
    Timestamp,
    WidthError,
)
from medsentry._wire import Envelope, LegTag, expand, mask, xor

if TYPE_CHECKING:
    from collections.abc import Callable, Sequence

    from medsentry._policy import StoreEntry
    from medsentry._registry import KeyRegistry, ProtocolConfig

logger = structlog.get_logger(__name__)

type RandomBytes = Callable[[int], bytes]

_REQUEST_ATTRS = frozenset({"role", "action"})
_ZERO_SEC = bytes(SEC_BYTES)
_RESPONSE_HEAD = MASKED_BYTES + NONCE_BYTES + TIMESTAMP_BYTES + ENTITY_ID_BYTES


@dataclass
class CostMeter:
    """Per-entity operation counters.

    ``hashes`` counts message digests computed by sign and verify, the unit the
    cost comparison is stated in.
    """

    hashes: int = 0
    signs: int = 0
    verifies: int = 0
    encrypts: int = 0
    decrypts: int = 0


@dataclass(frozen=True)
class Reject:
    """A refused inbound envelope.

    ``reply`` carries a negative response when the refusing hop still owes the
    initiator an answer (IS policy denials).
    """

    reason: RejectReason
    detail: str
    entity: EntityId
    reply: Envelope | None = None


@dataclass(frozen=True)
class Accept:
    """RS granted the request and performed ``action``."""

    action: Action
    record: RepoRecord
    records: tuple[RepoRecord, ...]
    reply: Envelope


@dataclass(frozen=True)
class SessionResult:
    """Outcome of a session as seen by its initiator."""

    ok: bool
    request_id: bytes
    sec: bytes | None = None
    decision: Decision | None = None
    reason: RejectReason | None = None


def session_secret(*ids: bytes) -> bytes:
    """XOR of the session's entity IDs."""
    return xor(*ids)


def _ts_bytes(ts: int) -> bytes:
    return ts.to_bytes(TIMESTAMP_BYTES, "big")


def v_tm(signature: bytes, recipient: EntityId, ts: Timestamp) -> bytes:
    """``signature XOR expand(recipient) XOR expand(ts)`` at 512 bits."""
    return xor(
        signature,
        expand(recipient, MASKED_BYTES),
        expand(_ts_bytes(ts), MASKED_BYTES),
    )


def t_ar(signature: bytes, nonce: bytes, sec: bytes) -> bytes:
    """``signature XOR expand(nonce) XOR expand(sec)`` at 512 bits."""
    return xor(
        signature, expand(nonce, MASKED_BYTES), expand(sec, MASKED_BYTES)
    )


def _split_tail(plaintext: bytes, widths: Sequence[int]) -> list[bytes]:
    """Peel fixed-width fields off the end; element 0 is the variable prefix."""
    total = sum(widths)
    if len(plaintext) < total:
        msg = f"plaintext of {len(plaintext)} bytes is shorter than its tail"
        raise RejectError(RejectReason.INTEGRITY, msg)
    parts = [plaintext[: len(plaintext) - total]]
    offset = len(plaintext) - total
    for width in widths:
        parts.append(plaintext[offset : offset + width])
        offset += width
    return parts


def _integrity(condition: object, detail: str) -> None:
    if not condition:
        raise RejectError(RejectReason.INTEGRITY, detail)


@dataclass
class _Session:
    """Per-request state a hop keeps until the matching response passes."""

    request_id: bytes
    initiator: EntityId
    produced: bytes
    received: bytes | None
    sec: bytes
    created: Timestamp
    action: str = Action.STORE
    decision: Decision = Decision.PERMIT


class _Entity:
    """Shared machinery: sealing, opening, signing, freshness and replay."""

    def __init__(
        self,
        registry: KeyRegistry,
        entity_id: EntityId,
        *,
        random_bytes: RandomBytes = secrets.token_bytes,
    ) -> None:
        self.registry = registry
        self.entity_id = entity_id
        self.record = registry.record(entity_id)
        self.meter = CostMeter()
        self.random_bytes = random_bytes
        self.sessions: dict[bytes, _Session] = {}
        self._seen: dict[tuple[bytes, bytes], Timestamp] = {}

    @property
    def config(self) -> ProtocolConfig:
        """Protocol knobs of the deployment."""
        return self.registry.config

    def _master_secret(self) -> bytes:
        cfg = self.config
        try:
            secret = reconstruct(self.record.shares, cfg.threshold, cfg.prime)
        except InsufficientSharesError as exc:
            msg = f"{self.entity_id.hex()} cannot reconstruct SS: {exc}"
            raise ProvisioningError(msg) from exc
        return secret.value.to_bytes(32, "big")

    def _sign(self, message: bytes) -> bytes:
        cfg = self.config
        self.meter.hashes += 1
        self.meter.signs += 1
        signature = sign(self.record.keypair.private, message, cfg.digest, cfg.curve)
        return signature.encode(cfg.curve)

    def _verify(self, signer: EntityId, message: bytes, signature: bytes) -> bool:
        cfg = self.config
        self.meter.hashes += 1
        self.meter.verifies += 1
        try:
            decoded = SignatureRS.decode(signature, cfg.curve)
        except WidthError:
            return False
        return verify(
            self.registry.public_key(signer), message, decoded, cfg.digest, cfg.curve
        )

    def _seal(self, leg: LegTag, recipient: EntityId, plaintext: bytes) -> Envelope:
        iv = self.random_bytes(IV_BYTES)
        key = self.registry.pair_key(self.entity_id, recipient)
        self.meter.encrypts += 1
        ciphertext = encrypt_payload(plaintext, key, self.config.aes, iv)
        return Envelope(leg, self.entity_id, iv, mask(ciphertext, recipient))

    def _open(
        self, data: bytes, leg: LegTag, sender_ok: Callable[[EntityId], bool]
    ) -> tuple[Envelope, bytes]:
        envelope = Envelope.decode(data)
        if envelope.leg != leg:
            msg = f"expected {leg.name}, got {envelope.leg.name}"
            raise RejectError(RejectReason.MALFORMED, msg)
        if not self.registry.knows(envelope.sender) or not sender_ok(envelope.sender):
            msg = f"unexpected sender {envelope.sender.hex()}"
            raise RejectError(RejectReason.MALFORMED, msg)
        try:
            key = self.registry.pair_key(self.entity_id, envelope.sender)
        except ProvisioningError as exc:
            raise RejectError(RejectReason.MALFORMED, str(exc)) from exc
        self.meter.decrypts += 1
        plaintext = decrypt_payload(
            mask(envelope.ciphertext, self.entity_id), key, self.config.aes, envelope.iv
        )
        return envelope, plaintext

    def expire_sessions(self, now: Timestamp) -> int:
        """Forget sessions older than the response timeout; return how many."""
        limit = self.config.response_timeout_ms
        stale = [key for key, s in self.sessions.items() if now - s.created > limit]
        for key in stale:
            del self.sessions[key]
        if stale:
            logger.debug(
                "sessions_expired", entity=self.record.kind.value, count=len(stale)
            )
        return len(stale)

    def _check_fresh(self, ts: int, now: Timestamp) -> None:
        window = self.config.freshness_window_ms
        if abs(now - ts) > window:
            msg = f"timestamp {ts} is {now - ts} ms from now, window {window} ms"
            raise RejectError(RejectReason.FRESHNESS, msg)

    def _check_replay(self, sender: bytes, nonce: bytes, now: Timestamp) -> None:
        window = self.config.freshness_window_ms
        self._seen = {k: t for k, t in self._seen.items() if now - t <= 2 * window}
        if (sender, nonce) in self._seen:
            msg = f"nonce {nonce.hex()} from {sender.hex()} already seen"
            raise RejectError(RejectReason.FRESHNESS, msg)
        self._seen[sender, nonce] = now

    def _parse_request(self, document: bytes) -> SamlRequest:
        try:
            return parse_request(document)
        except SamlParseError as exc:
            raise RejectError(RejectReason.INTEGRITY, str(exc)) from exc

    def _check_request(  # noqa: PLR0913
        self,
        req: SamlRequest,
        *,
        request_id: bytes,
        issuer: EntityId,
        signature: bytes,
        ts: Timestamp,
        allowed_attrs: frozenset[str],
    ) -> str:
        """Cross-check the document against the fixed fields; return the action."""
        _integrity(req.request_id == request_id, "RequestID does not match the nonce")
        _integrity(req.issuer == issuer, "Issuer does not match the sender")
        _integrity(req.issue_instant == ts, "IssueInstant does not match TS")
        _integrity(
            req.v_tm == v_tm(signature, self.entity_id, ts),
            "V_tm does not match signature, recipient and TS",
        )
        _integrity(
            self.registry.knows(req.subject)
            and self.registry.record(EntityId(req.subject)).is_initiator,
            "Subject is not a provisioned initiator",
        )
        names = [name for name, _ in req.attributes]
        _integrity(len(names) == len(set(names)), "duplicate attribute")
        _integrity(set(names) <= allowed_attrs, f"unexpected attributes {names}")
        action = req.attribute("action")
        _integrity(action in set(Action), f"unknown action {action!r}")
        if "role" in allowed_attrs:
            expected_role = self.registry.record(req.subject).role
            _integrity(
                req.attribute("role") == expected_role, "role attribute mismatch"
            )
        return str(action)

    def _respond(  # noqa: PLR0913
        self,
        leg: LegTag,
        recipient: EntityId,
        session: _Session,
        sec: bytes,
        decision: Decision,
        now: Timestamp,
        *,
        include_nonce: bool = True,
    ) -> Envelope:
        nonce = self.random_bytes(NONCE_BYTES)
        token = t_ar(session.received or bytes(MASKED_BYTES), nonce, sec)
        document = serialize_response(
            SamlResponse(
                in_response_to=session.request_id,
                issuer=self.entity_id,
                issue_instant=now,
                decision=decision,
            )
        )
        plaintext = (
            token
            + (nonce if include_nonce else b"")
            + _ts_bytes(now)
            + self.entity_id
            + document
        )
        return self._seal(leg, recipient, plaintext)

    def _read_response(
        self, data: bytes, leg: LegTag, responder: EntityId, now: Timestamp
    ) -> tuple[_Session, SamlResponse, bytes]:
        """Open a response, match it to a session and recover ``Sec``."""
        _, plaintext = self._open(data, leg, lambda sender: sender == responder)
        _integrity(len(plaintext) > _RESPONSE_HEAD, "response shorter than its head")
        token = plaintext[:MASKED_BYTES]
        offset = MASKED_BYTES
        nonce = plaintext[offset : offset + NONCE_BYTES]
        offset += NONCE_BYTES
        ts_raw = plaintext[offset : offset + TIMESTAMP_BYTES]
        ts = Timestamp(int.from_bytes(ts_raw, "big"))
        offset += TIMESTAMP_BYTES
        responder_id = plaintext[offset : offset + ENTITY_ID_BYTES]
        document = plaintext[_RESPONSE_HEAD:]
        _integrity(responder_id == responder, "responder ID mismatch")
        try:
            response = parse_response(document)
        except SamlParseError as exc:
            raise RejectError(RejectReason.INTEGRITY, str(exc)) from exc
        _integrity(response.issuer == responder, "response Issuer mismatch")
        _integrity(response.issue_instant == ts, "response IssueInstant mismatch")
        session = self.sessions.get(response.in_response_to)
        if session is None:
            msg = "response to an unknown request"
            raise RejectError(RejectReason.INTEGRITY, msg)
        expected = (
            session.sec if response.decision is Decision.PERMIT else _ZERO_SEC
        )
        recovered = xor(token, session.produced, expand(nonce, MASKED_BYTES))
        _integrity(
            recovered == expand(expected, MASKED_BYTES), "T_AR does not unmask to Sec"
        )
        self._check_fresh(ts, now)
        return session, response, expected

    def _log_reject(self, error: RejectError, leg: LegTag) -> Reject:
        logger.info(
            "request_rejected",
            entity=self.record.kind.value,
            leg=leg.name,
            reason=str(error.reason),
            detail=error.detail,
        )
        return Reject(error.reason, error.detail, self.entity_id)


class Sensor(_Entity):
    """Initiator state machine, for sensors and users alike."""

    def __init__(
        self,
        registry: KeyRegistry,
        entity_id: EntityId,
        *,
        random_bytes: RandomBytes = secrets.token_bytes,
    ) -> None:
        super().__init__(registry, entity_id, random_bytes=random_bytes)
        if not self.record.is_initiator:
            msg = f"{entity_id.hex()} is a {self.record.kind}, not an initiator"
            raise ProvisioningError(msg)
        self.stored_sec: bytes | None = None
        self.last_request_id: bytes | None = None

    def build_request(self, now: Timestamp, action: Action = Action.STORE) -> Envelope:
        """Start a session: sign, mask and encrypt R_Sen1 toward BS."""
        bs_id = self.registry.bs_id
        nonce = Nonce(self.random_bytes(NONCE_BYTES))
        self.last_request_id = nonce
        ss = self._master_secret()
        signature = self._sign(ss + nonce + self.entity_id)
        del ss
        req = create_request(
            issuer=self.entity_id,
            subject=self.entity_id,
            v_tm=v_tm(signature, bs_id, now),
            now=now,
            attrs=[("role", self.record.role), ("action", str(action))],
            request_id=nonce,
        )
        plaintext = (
            serialize_request(req) + signature + nonce + _ts_bytes(now) + self.entity_id
        )
        self.sessions[nonce] = _Session(
            request_id=nonce,
            initiator=self.entity_id,
            produced=signature,
            received=None,
            sec=self.registry.session_secret(self.entity_id),
            created=now,
            action=action,
        )
        logger.debug("session_started", sensor=self.entity_id.hex(), nonce=nonce.hex())
        return self._seal(LegTag.R_SEN1, bs_id, plaintext)

    def process_response(self, data: bytes, now: Timestamp) -> SessionResult:
        """Finish a session from R_BS3, storing ``Sec`` on success."""
        try:
            session, response, sec = self._read_response(
                data, LegTag.R_BS3, self.registry.bs_id, now
            )
        except RejectError as exc:
            self._log_reject(exc, LegTag.R_BS3)
            return SessionResult(ok=False, request_id=b"", reason=exc.reason)
        del self.sessions[session.request_id]
        if response.decision is not Decision.PERMIT:
            logger.info(
                "session_denied",
                sensor=self.entity_id.hex(),
                decision=str(response.decision),
            )
            return SessionResult(
                ok=False,
                request_id=session.request_id,
                decision=response.decision,
                reason=RejectReason.POLICY,
            )
        self.stored_sec = sec
        logger.debug("session_completed", sensor=self.entity_id.hex())
        return SessionResult(
            ok=True,
            request_id=session.request_id,
            sec=sec,
            decision=Decision.PERMIT,
        )

    def abandon(self, request_id: bytes) -> None:
        """Forget a session whose response never arrived."""
        self.sessions.pop(request_id, None)


class BaseStation(_Entity):
    """Gateway hop: verifies initiators and re-signs toward IS."""

    def process_request(self, data: bytes, now: Timestamp) -> Envelope | Reject:
        """Turn R_Sen1 into R_BS2, or refuse it."""
        self.expire_sessions(now)
        try:
            return self._process_request(data, now)
        except RejectError as exc:
            return self._log_reject(exc, LegTag.R_SEN1)

    def _process_request(self, data: bytes, now: Timestamp) -> Envelope:
        registry = self.registry
        envelope, plaintext = self._open(
            data, LegTag.R_SEN1, lambda sender: registry.record(sender).is_initiator
        )
        document, sen_s, sen_n, ts_raw, sen_id = _split_tail(
            plaintext,
            (SIGNATURE_BYTES, NONCE_BYTES, TIMESTAMP_BYTES, ENTITY_ID_BYTES),
        )
        ts = Timestamp(int.from_bytes(ts_raw, "big"))
        _integrity(sen_id == envelope.sender, "Sen_ID does not match the sender")
        req = self._parse_request(document)
        self._check_request(
            req,
            request_id=sen_n,
            issuer=envelope.sender,
            signature=sen_s,
            ts=ts,
            allowed_attrs=_REQUEST_ATTRS,
        )
        _integrity(req.subject == envelope.sender, "Subject does not match the sender")
        ss = self._master_secret()
        _integrity(
            self._verify(envelope.sender, ss + sen_n + sen_id, sen_s),
            "Sen_S does not verify",
        )
        self._check_fresh(ts, now)
        self._check_replay(envelope.sender, sen_n, now)

        is_id = registry.is_id
        bs_s2 = self._sign(ss + is_id)
        del ss
        forward = create_request(
            issuer=self.entity_id,
            subject=req.subject,
            v_tm=v_tm(bs_s2, is_id, now),
            now=now,
            attrs=req.attributes,
            request_id=sen_n,
        )
        self.sessions[sen_n] = _Session(
            request_id=sen_n,
            initiator=EntityId(sen_id),
            produced=bs_s2,
            received=sen_s,
            sec=registry.session_secret(EntityId(sen_id)),
            created=now,
        )
        plaintext = (
            serialize_request(forward) + bs_s2 + sen_n + _ts_bytes(now) + self.entity_id
        )
        return self._seal(LegTag.R_BS2, is_id, plaintext)

    def process_response(self, data: bytes, now: Timestamp) -> Envelope | Reject:
        """Relay R_IS3 to the initiator as R_BS3."""
        self.expire_sessions(now)
        try:
            session, response, sec = self._read_response(
                data, LegTag.R_IS3, self.registry.is_id, now
            )
        except RejectError as exc:
            return self._log_reject(exc, LegTag.R_IS3)
        session.decision = response.decision
        return self.build_response(session.request_id, now, sec=sec)

    def build_response(
        self,
        request_id: bytes,
        now: Timestamp,
        *,
        sec: bytes | None = None,
        include_nonce: bool = True,
    ) -> Envelope:
        """R_BS3 toward the initiator, masking the verified Sen_S."""
        session = self.sessions.pop(request_id)
        return self._respond(
            LegTag.R_BS3,
            session.initiator,
            session,
            session.sec if sec is None else sec,
            session.decision,
            now,
            include_nonce=include_nonce,
        )


class InfoServer(_Entity):
    """Policy decision point: verifies BS, evaluates policy, derives ``Sec``."""

    def __init__(
        self,
        registry: KeyRegistry,
        entity_id: EntityId,
        *,
        policies: Sequence[StoreEntry] = (),
        counters: AccessCounter | None = None,
        random_bytes: RandomBytes = secrets.token_bytes,
    ) -> None:
        super().__init__(registry, entity_id, random_bytes=random_bytes)
        self.policies = list(policies)
        self.counters = counters if counters is not None else AccessCounter()
        self.decisions: list[Decision] = []

    def process_request(self, data: bytes, now: Timestamp) -> Envelope | Reject:
        """Turn R_BS2 into R_IS2, or refuse it."""
        self.expire_sessions(now)
        try:
            return self._process_request(data, now)
        except RejectError as exc:
            return self._log_reject(exc, LegTag.R_BS2)

    def _process_request(self, data: bytes, now: Timestamp) -> Envelope | Reject:
        registry = self.registry
        bs_id = registry.bs_id
        envelope, plaintext = self._open(
            data, LegTag.R_BS2, lambda sender: sender == bs_id
        )
        document, bs_s2, sen_n, ts_raw, sender_id = _split_tail(
            plaintext,
            (SIGNATURE_BYTES, NONCE_BYTES, TIMESTAMP_BYTES, ENTITY_ID_BYTES),
        )
        ts = Timestamp(int.from_bytes(ts_raw, "big"))
        _integrity(sender_id == envelope.sender, "BS_ID does not match the sender")
        req = self._parse_request(document)
        action = self._check_request(
            req,
            request_id=sen_n,
            issuer=envelope.sender,
            signature=bs_s2,
            ts=ts,
            allowed_attrs=_REQUEST_ATTRS,
        )
        ss = self._master_secret()
        _integrity(
            self._verify(bs_id, ss + self.entity_id, bs_s2), "BS_S2 does not verify"
        )
        self._check_fresh(ts, now)
        self._check_replay(envelope.sender, sen_n, now)

        subject = EntityId(req.subject)
        role = registry.record(subject).role
        decision = evaluate(
            self.policies,
            self.counters,
            role,
            req,
            action,
            now,
            recipient=registry.rs_id,
        )
        self.decisions.append(decision)
        session = _Session(
            request_id=sen_n,
            initiator=subject,
            produced=b"",
            received=bs_s2,
            sec=_ZERO_SEC,
            created=now,
            action=action,
            decision=decision,
        )
        if decision is not Decision.PERMIT:
            self.sessions[sen_n] = session
            logger.info(
                "request_rejected",
                entity=self.record.kind.value,
                leg=LegTag.R_BS2.name,
                reason=str(RejectReason.POLICY),
                decision=str(decision),
            )
            return Reject(
                RejectReason.POLICY,
                f"policy decision {decision}",
                self.entity_id,
                reply=self.build_response(sen_n, now),
            )

        rs_id = registry.rs_id
        sec = registry.session_secret(subject)
        is_s2 = self._sign(ss + rs_id)
        del ss
        released = frozenset(self.config.release_to_rs)
        forward = create_request(
            issuer=self.entity_id,
            subject=subject,
            v_tm=v_tm(is_s2, rs_id, now),
            now=now,
            attrs=[(k, v) for k, v in req.attributes if k in released],
            request_id=sen_n,
        )
        session.produced = is_s2
        session.sec = sec
        self.sessions[sen_n] = session
        plaintext = (
            serialize_request(forward)
            + is_s2
            + sec
            + sen_n
            + _ts_bytes(now)
            + self.entity_id
        )
        return self._seal(LegTag.R_IS2, rs_id, plaintext)

    def process_response(self, data: bytes, now: Timestamp) -> Envelope | Reject:
        """Relay R_RS2 to BS as R_IS3."""
        self.expire_sessions(now)
        try:
            session, _, _ = self._read_response(
                data, LegTag.R_RS2, self.registry.rs_id, now
            )
        except RejectError as exc:
            return self._log_reject(exc, LegTag.R_RS2)
        return self.build_response(session.request_id, now)

    def build_response(
        self, request_id: bytes, now: Timestamp, *, include_nonce: bool = True
    ) -> Envelope:
        """R_IS3 toward BS, masking the verified BS_S2."""
        session = self.sessions.pop(request_id)
        return self._respond(
            LegTag.R_IS3,
            self.registry.bs_id,
            session,
            session.sec,
            session.decision,
            now,
            include_nonce=include_nonce,
        )


class RepoServer(_Entity):
    """Patient repository: verifies IS and performs the granted action."""

    def __init__(
        self,
        registry: KeyRegistry,
        entity_id: EntityId,
        *,
        store: RepoStore | None = None,
        random_bytes: RandomBytes = secrets.token_bytes,
    ) -> None:
        super().__init__(registry, entity_id, random_bytes=random_bytes)
        self.store = store if store is not None else RepoStore()

    def process_request(
        self, data: bytes, now: Timestamp, *, include_nonce: bool = True
    ) -> Accept | Reject:
        """Verify R_IS2, perform the action and answer with R_RS2."""
        try:
            return self._process_request(data, now, include_nonce=include_nonce)
        except RejectError as exc:
            return self._log_reject(exc, LegTag.R_IS2)

    def _process_request(
        self, data: bytes, now: Timestamp, *, include_nonce: bool
    ) -> Accept:
        registry = self.registry
        is_id = registry.is_id
        envelope, plaintext = self._open(
            data, LegTag.R_IS2, lambda sender: sender == is_id
        )
        document, is_s2, sec, sen_n, ts_raw, sender_id = _split_tail(
            plaintext,
            (
                SIGNATURE_BYTES,
                SEC_BYTES,
                NONCE_BYTES,
                TIMESTAMP_BYTES,
                ENTITY_ID_BYTES,
            ),
        )
        ts = Timestamp(int.from_bytes(ts_raw, "big"))
        _integrity(sender_id == envelope.sender, "IS_ID does not match the sender")
        req = self._parse_request(document)
        action = self._check_request(
            req,
            request_id=sen_n,
            issuer=envelope.sender,
            signature=is_s2,
            ts=ts,
            allowed_attrs=frozenset(self.config.release_to_rs),
        )
        subject = EntityId(req.subject)
        _integrity(sec == registry.session_secret(subject), "Sec mismatch")
        ss = self._master_secret()
        _integrity(
            self._verify(is_id, ss + self.entity_id, is_s2), "IS_S2 does not verify"
        )
        del ss
        self._check_fresh(ts, now)
        self._check_replay(envelope.sender, sen_n, now)

        history = self.store.records_for(subject.hex())
        record = RepoRecord(
            subject=subject.hex(), action=action, request_id=sen_n.hex(), ts=ts
        )
        self.store.append(record)
        self.sessions[sen_n] = _Session(
            request_id=sen_n,
            initiator=subject,
            produced=b"",
            received=is_s2,
            sec=sec,
            created=now,
            action=action,
        )
        logger.debug("request_accepted", subject=subject.hex(), action=action)
        reply = self.build_response(sen_n, now, include_nonce=include_nonce)
        return Accept(
            action=Action(action),
            record=record,
            records=history if action == Action.RETRIEVE else (),
            reply=reply,
        )

    def build_response(
        self, request_id: bytes, now: Timestamp, *, include_nonce: bool = True
    ) -> Envelope:
        """R_RS2 toward IS, masking the verified IS_S2."""
        session = self.sessions.pop(request_id)
        return self._respond(
            LegTag.R_RS2,
            self.registry.is_id,
            session,
            session.sec,
            Decision.PERMIT,
            now,
            include_nonce=include_nonce,
        )

