"""Adversary behaviours the simulator can inject, one class per threat.

Adversaries follow the Dolev-Yao model: they read, alter, inject and drop
anything on the paths they sit on, but hold no key material. Each behaviour
registers hooks on a :class:`~medsentry._netsim.Simulation` in
:meth:`Attack.attach` and counts its own injected instances.
"""

from __future__ import annotations

import random
from dataclasses import replace
from typing import TYPE_CHECKING

import structlog

from medsentry._aes import KEY_BYTES, encrypt_payload
from medsentry._saml import (
    REQUEST_ROOT,
    RESPONSE_ROOT,
    create_request,
    serialize_request,
)
from medsentry._scenario import (
    AttackKind,
    ImpersonationSpec,
    MitmSpec,
    NeglectGreedSpec,
    NodeOutageSpec,
    PacketDropSpec,
    RushingSpec,
    VampireSpec,
)
from medsentry._topology import INITIATOR_NODES, NodeKind
from medsentry._types import (
    ENTITY_ID_BYTES,
    IV_BYTES,
    MASKED_BYTES,
    NONCE_BYTES,
    SIGNATURE_BYTES,
    TIMESTAMP_BYTES,
    ConfigError,
    EntityId,
)
from medsentry._wire import HEADER_BYTES, Envelope, LegTag, mask

if TYPE_CHECKING:
    from collections.abc import Generator

    import simpy

    from medsentry._netsim import Packet, Simulation
    from medsentry._scenario import AttackSpec

logger = structlog.get_logger(__name__)

PLAINTEXT_MARKERS = (REQUEST_ROOT.encode(), RESPONSE_ROOT.encode())


def _flip_bits(data: bytes, rng: random.Random, bits: int) -> bytes:
    """Flip ``bits`` distinct bits of the ciphertext region of an envelope."""
    out = bytearray(data)
    span = (len(data) - HEADER_BYTES) * 8
    for position in rng.sample(range(span), min(bits, span)):
        out[HEADER_BYTES + position // 8] ^= 1 << (position % 8)
    return bytes(out)


def _replace_ciphertext(data: bytes, rng: random.Random) -> bytes:
    body = rng.randbytes(len(data) - HEADER_BYTES)
    if body == data[HEADER_BYTES:]:
        body = bytes([body[0] ^ 1]) + body[1:]
    return data[:HEADER_BYTES] + body


def forged_request(sim: Simulation, rng: random.Random, claimed: EntityId) -> bytes:
    """A well-framed R_Sen1 claiming ``claimed``, sealed under a guessed key."""
    now = sim.timestamp()
    nonce = rng.randbytes(NONCE_BYTES)
    document = serialize_request(
        create_request(
            issuer=claimed,
            subject=claimed,
            v_tm=rng.randbytes(MASKED_BYTES),
            now=now,
            attrs=[("role", "sensor"), ("action", "store")],
            request_id=nonce,
        )
    )
    plaintext = (
        document
        + rng.randbytes(SIGNATURE_BYTES)
        + nonce
        + now.to_bytes(TIMESTAMP_BYTES, "big")
        + claimed
    )
    iv = rng.randbytes(IV_BYTES)
    ciphertext = encrypt_payload(
        plaintext, rng.randbytes(KEY_BYTES), sim.registry.config.aes, iv
    )
    masked = mask(ciphertext, sim.registry.bs_id)
    return Envelope(LegTag.R_SEN1, claimed, iv, masked).encode()


class Attack:
    """Base class; subclasses register hooks and processes in :meth:`attach`."""

    kind: AttackKind

    def __init__(self, index: int) -> None:
        self.index = index
        self.injected = 0

    def attach(self, sim: Simulation) -> None:
        """Hook into ``sim`` before the run starts."""
        raise NotImplementedError

    def finish(self) -> None:
        """Settle detection counts once the run is over."""

    def _rng(self, sim: Simulation) -> random.Random:
        return random.Random(f"{sim.config.seed}:attack:{self.index}")  # noqa: S311

    def _count(self, sim: Simulation) -> None:
        self.injected += 1
        sim.metrics.injected[self.kind] += 1


def _require_node(sim: Simulation, node: str, field: str) -> None:
    if node not in sim.topology.kinds:
        msg = f"unknown node {node!r}"
        raise ConfigError(field, msg)


def _require_link(sim: Simulation, link: tuple[str, str], field: str) -> frozenset[str]:
    pair = frozenset(link)
    if pair not in sim.topology.links:
        msg = f"no link {link[0]}-{link[1]}"
        raise ConfigError(field, msg)
    return pair


class NodeOutage(Attack):
    """Disables a node mid-run; routing works around it or sessions time out."""

    kind = AttackKind.NODE_OUTAGE

    def __init__(self, index: int, spec: NodeOutageSpec) -> None:
        super().__init__(index)
        self.spec = spec

    def attach(self, sim: Simulation) -> None:
        """Schedule the outage."""
        _require_node(sim, self.spec.node, f"attacks.{self.index}.node")
        sim.env.process(self._fail(sim))

    def _fail(self, sim: Simulation) -> Generator[simpy.Event]:
        yield sim.env.timeout(self.spec.at_ms)
        sim.disable(self.spec.node)


class ManInTheMiddle(Attack):
    """Flips or replaces ciphertext bits of envelopes crossing one link."""

    kind = AttackKind.MITM

    def __init__(self, index: int, spec: MitmSpec) -> None:
        super().__init__(index)
        self.spec = spec
        self.link: frozenset[str] = frozenset()
        self.sim: Simulation | None = None
        self.rng = random.Random()  # noqa: S311

    def attach(self, sim: Simulation) -> None:
        """Sit on the configured link."""
        self.link = _require_link(sim, self.spec.link, f"attacks.{self.index}.link")
        self.sim = sim
        self.rng = self._rng(sim)
        sim.link_hooks.append(self._tamper)

    def _tamper(self, packet: Packet, a: str, b: str) -> Packet:
        if (
            self.sim is None
            or frozenset((a, b)) != self.link
            or packet.attack is not None
            or packet.tampered is not None
            or self.rng.random() >= self.spec.rate
        ):
            return packet
        if self.spec.mode == "flip":
            data = _flip_bits(packet.data, self.rng, self.spec.bits)
        else:
            data = _replace_ciphertext(packet.data, self.rng)
        self._count(self.sim)
        return replace(packet, data=data, tampered=self.kind)


class Impersonation(Attack):
    """Injects R_Sen1 envelopes in a sensor's name, forged or replayed."""

    kind = AttackKind.IMPERSONATION

    def __init__(self, index: int, spec: ImpersonationSpec) -> None:
        super().__init__(index)
        self.spec = spec
        self.captured: simpy.Event | None = None

    def attach(self, sim: Simulation) -> None:
        """Start the injection process, tapping BS first in replay mode."""
        prefix = f"attacks.{self.index}"
        _require_node(sim, self.spec.node, f"{prefix}.node")
        _require_node(sim, self.spec.target, f"{prefix}.target")
        if sim.topology.kinds[self.spec.target] not in INITIATOR_NODES:
            msg = f"{self.spec.target} is not a sensor or user"
            raise ConfigError(f"{prefix}.target", msg)
        if self.spec.mode == "replay":
            self.captured = sim.env.event()
            sim.delivery_taps.append(self._capture)
        sim.env.process(self._inject(sim))

    def _capture(self, packet: Packet) -> None:
        if (
            self.captured is not None
            and not self.captured.triggered
            and packet.attack is None
            and packet.leg is LegTag.R_SEN1
            and packet.origin == self.spec.target
        ):
            self.captured.succeed(packet.data)

    def _inject(self, sim: Simulation) -> Generator[simpy.Event, bytes]:
        rng = self._rng(sim)
        claimed = sim.entity_of[self.spec.target]
        yield sim.env.timeout(self.spec.start_ms)
        recorded = b""
        if self.captured is not None:
            recorded = yield self.captured
        for _ in range(self.spec.count):
            yield sim.env.timeout(self.spec.interval_ms)
            data = recorded or forged_request(sim, rng, claimed)
            self._count(sim)
            sim.inject(data, self.spec.node, LegTag.R_SEN1, self.kind)


class Rushing(Attack):
    """Advertises fast links to pull routes through itself, then relays.

    Only the envelope validation side is exercised: whatever the adversary
    alters must fail the next hop, and what it relays untouched must reveal
    no plaintext.
    """

    kind = AttackKind.RUSHING

    def __init__(self, index: int, spec: RushingSpec) -> None:
        super().__init__(index)
        self.spec = spec
        self.observations: list[bytes] = []
        self.sim: Simulation | None = None
        self.rng = random.Random()  # noqa: S311

    def attach(self, sim: Simulation) -> None:
        """Advertise the low latency and start relaying."""
        _require_node(sim, self.spec.node, f"attacks.{self.index}.node")
        self.sim = sim
        self.rng = self._rng(sim)
        sim.topology.advertised[self.spec.node] = self.spec.advertised_latency_ms
        sim.forward_hooks.append(self._relay)
        logger.info(
            "rushing_routing_untested",
            node=self.spec.node,
            advertised_latency_ms=self.spec.advertised_latency_ms,
        )

    def _relay(self, packet: Packet, node: str) -> Packet:
        if self.sim is None or node != self.spec.node or packet.attack is not None:
            return packet
        self.observations.append(packet.data)
        if any(marker in packet.data for marker in PLAINTEXT_MARKERS):
            self.sim.metrics.observed_plaintext += 1
        if packet.tampered is None and self.rng.random() < self.spec.alter_rate:
            self._count(self.sim)
            return replace(
                packet, data=_flip_bits(packet.data, self.rng, 1), tampered=self.kind
            )
        return packet


class Vampire(Attack):
    """Floods BS with well-framed requests nobody can verify."""

    kind = AttackKind.VAMPIRE

    def __init__(self, index: int, spec: VampireSpec) -> None:
        super().__init__(index)
        self.spec = spec

    def attach(self, sim: Simulation) -> None:
        """Start the flood."""
        _require_node(sim, self.spec.node, f"attacks.{self.index}.node")
        if not sim.topology.nodes_of(NodeKind.SENSOR):
            msg = "vampire needs a sensor identity to claim"
            raise ConfigError(f"attacks.{self.index}", msg)
        sim.env.process(self._flood(sim))

    def _flood(self, sim: Simulation) -> Generator[simpy.Event]:
        rng = self._rng(sim)
        claimed = sim.entity_of[sim.topology.nodes_of(NodeKind.SENSOR)[0]]
        honest_interval = sim.config.workload.interval_ms
        interval = max(1, round(honest_interval / self.spec.rate_multiplier))
        end = (
            self.spec.start_ms + self.spec.duration_ms
            if self.spec.duration_ms is not None
            else sim.workload_end_ms
        )
        yield sim.env.timeout(self.spec.start_ms)
        while sim.env.now < end:
            self._count(sim)
            data = forged_request(sim, rng, claimed)
            sim.inject(data, self.spec.node, LegTag.R_SEN1, self.kind)
            yield sim.env.timeout(interval)


class NeglectGreed(Attack):
    """A forwarder that drops other nodes' packets and pushes its own."""

    kind = AttackKind.NEGLECT_GREED

    def __init__(self, index: int, spec: NeglectGreedSpec) -> None:
        super().__init__(index)
        self.spec = spec
        self.sim: Simulation | None = None
        self.rng = random.Random()  # noqa: S311

    def attach(self, sim: Simulation) -> None:
        """Turn the node greedy."""
        _require_node(sim, self.spec.node, f"attacks.{self.index}.node")
        self.sim = sim
        self.rng = self._rng(sim)
        sim.forward_hooks.append(self._forward)
        if self.spec.own_interval_ms is not None:
            sim.env.process(self._own_traffic(sim, self.spec.own_interval_ms))

    def _forward(self, packet: Packet, node: str) -> Packet | None:
        if self.sim is None or node != self.spec.node or packet.attack is not None:
            return packet
        if self.rng.random() < self.spec.drop_rate:
            self._count(self.sim)
            return None
        return packet

    def _own_traffic(self, sim: Simulation, interval: int) -> Generator[simpy.Event]:
        rng = self._rng(sim)
        while sim.env.now < sim.workload_end_ms:
            yield sim.env.timeout(interval)
            junk = Envelope(
                LegTag.R_SEN1,
                EntityId(rng.randbytes(ENTITY_ID_BYTES)),
                rng.randbytes(IV_BYTES),
                rng.randbytes(256),
            )
            sim.inject(
                junk.encode(), self.spec.node, LegTag.R_SEN1, self.kind, counted=False
            )

    def finish(self) -> None:
        """Drops count as detected once the watchdog has flagged the node."""
        if self.sim is not None and self.spec.node in self.sim.watchdog.flagged:
            self.sim.metrics.detected[self.kind] += self.injected


class PacketDrop(Attack):
    """Silently drops envelopes crossing one link."""

    kind = AttackKind.PACKET_DROP

    def __init__(self, index: int, spec: PacketDropSpec) -> None:
        super().__init__(index)
        self.spec = spec
        self.link: frozenset[str] = frozenset()
        self.sim: Simulation | None = None
        self.rng = random.Random()  # noqa: S311

    def attach(self, sim: Simulation) -> None:
        """Sit on the configured link."""
        self.link = _require_link(sim, self.spec.link, f"attacks.{self.index}.link")
        self.sim = sim
        self.rng = self._rng(sim)
        sim.link_hooks.append(self._drop)

    def _drop(self, packet: Packet, a: str, b: str) -> Packet | None:
        if (
            self.sim is None
            or frozenset((a, b)) != self.link
            or self.rng.random() >= self.spec.probability
        ):
            return packet
        if packet.session is not None and packet.attack is None:
            self._count(self.sim)
            self.sim.mark_lost(packet.session, self.kind)
        return None


def build_attack(spec: AttackSpec, index: int) -> Attack:
    """Runtime behaviour for one attack spec."""
    match spec:
        case NodeOutageSpec():
            return NodeOutage(index, spec)
        case MitmSpec():
            return ManInTheMiddle(index, spec)
        case ImpersonationSpec():
            return Impersonation(index, spec)
        case RushingSpec():
            return Rushing(index, spec)
        case VampireSpec():
            return Vampire(index, spec)
        case NeglectGreedSpec():
            return NeglectGreed(index, spec)
        case PacketDropSpec():
            return PacketDrop(index, spec)
