"""Discrete-event simulation of the authorization protocol on a sensor network.

Time is integer milliseconds on a :mod:`simpy` clock. Packets travel hop by
hop along minimum-latency routes that are recomputed at every hop, so nodes
that fail, run out of energy or get flagged by the watchdog are routed
around. Protocol handlers run at zero simulated time.
"""

from __future__ import annotations

import dataclasses
import functools
import pickle
import random
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import TYPE_CHECKING

import cloudpickle
import simpy
import structlog

from medsentry._aes import RoundConfig
from medsentry._attacks import Attack, build_attack
from medsentry._datasets import RS_STORE_FILE, RepoStore
from medsentry._energy import EnergyBudget, EnergyCosts, EnergyOp
from medsentry._entities import (
    Accept,
    BaseStation,
    CostMeter,
    InfoServer,
    Reject,
    RepoServer,
    Sensor,
    SessionResult,
)
from medsentry._metrics import Metrics
from medsentry._policy import Action, default_rules, load_store, parse_rule
from medsentry._ratelimit import RateLimiter
from medsentry._registry import (
    POLICIES_FILE,
    EntityKind,
    KeyRegistry,
    load_registry,
    provision,
)
from medsentry._scenario import (
    AttackKind,
    ImpersonationSpec,
    SimConfig,
    VampireSpec,
)
from medsentry._topology import NodeKind
from medsentry._types import (
    ConfigError,
    EntityId,
    PolicyValidationError,
    RejectReason,
    Timestamp,
    UnreachableError,
)
from medsentry._watchdog import Watchdog
from medsentry._wire import Envelope, LegTag

if TYPE_CHECKING:
    from collections.abc import Callable, Generator, Sequence

    from structlog.typing import FilteringBoundLogger

    from medsentry._entities import _Entity
    from medsentry._policy import StoreEntry

logger = structlog.get_logger(__name__)

_HORIZON_MARGIN_MS = 1000
_OUTAGE_KINDS = frozenset({AttackKind.NODE_OUTAGE, AttackKind.PACKET_DROP})


@dataclass(frozen=True)
class Packet:
    """One envelope in flight plus what the simulator knows about it.

    ``session`` is the honest session the envelope belongs to. ``attack``
    marks adversarial traffic; ``counted`` says whether its rejection counts as
    a detected instance. ``tampered`` records which attack altered an honest
    envelope in transit.
    """

    data: bytes
    origin: str
    dst: str
    leg: LegTag
    session: bytes | None = None
    attack: AttackKind | None = None
    counted: bool = False
    tampered: AttackKind | None = None


type LinkHook = Callable[[Packet, str, str], Packet | None]
type ForwardHook = Callable[[Packet, str], Packet | None]
type DeliveryTap = Callable[[Packet], None]
type Outcome = Envelope | Reject | Accept | SessionResult


@functools.lru_cache(maxsize=16)
def _provisioned(n_sensors: int, n_users: int, seed: int) -> KeyRegistry:
    return provision(n_sensors, seed, n_users=n_users)


def _policies(
    config: SimConfig, directory: Path | None, registry: KeyRegistry
) -> list[StoreEntry]:
    if config.policies is not None:
        try:
            return [parse_rule(raw) for raw in config.policies]
        except PolicyValidationError as exc:
            raise ConfigError("policies", str(exc)) from exc
    if directory is not None and (directory / POLICIES_FILE).exists():
        return load_store(directory / POLICIES_FILE, key=registry.policy_key())
    return default_rules()


def _snapshot(meter: CostMeter) -> CostMeter:
    return dataclasses.replace(meter)


class Simulation:
    """One run: topology, entities, adversaries and the event loop."""

    def __init__(
        self, config: SimConfig, *, trace: FilteringBoundLogger | None = None
    ) -> None:
        self.config = config
        self.topology = config.topology.build()
        self.env = simpy.Environment()
        self.metrics = Metrics(config.run_id)
        self._trace = trace

        self.bs = self.topology.only(NodeKind.BASE_STATION)
        self.info = self.topology.only(NodeKind.INFO_SERVER)
        self.repo = self.topology.only(NodeKind.REPO_SERVER)
        sensors = self.topology.nodes_of(NodeKind.SENSOR)
        users = self.topology.nodes_of(NodeKind.USER)

        directory = Path(config.deployment) if config.deployment else None
        base = (
            load_registry(directory)
            if directory is not None
            else _provisioned(len(sensors), len(users), config.seed)
        )
        self.registry = base.with_config(
            dataclasses.replace(
                base.config,
                freshness_window_ms=config.freshness_window_ms,
                aes=RoundConfig(config.aes_rounds),
                response_timeout_ms=config.response_timeout_ms,
            )
        )

        self.entity_of: dict[str, EntityId] = {
            self.bs: self.registry.bs_id,
            self.info: self.registry.is_id,
            self.repo: self.registry.rs_id,
        }
        for nodes, kind in ((sensors, EntityKind.SENSOR), (users, EntityKind.USER)):
            records = [r for r in self.registry.initiators() if r.kind is kind]
            if len(records) < len(nodes):
                msg = (
                    f"deployment has {len(records)} {kind}s, "
                    f"topology needs {len(nodes)}"
                )
                raise ConfigError("deployment", msg)
            for node, record in zip(nodes, records, strict=False):
                self.entity_of[node] = record.entity_id
        self.node_of = {entity: node for node, entity in self.entity_of.items()}

        self.initiators = {
            node: Sensor(
                self.registry, self.entity_of[node], random_bytes=self._rand(node)
            )
            for node in (*sensors, *users)
        }
        self.base_station = BaseStation(
            self.registry, self.registry.bs_id, random_bytes=self._rand(self.bs)
        )
        self.info_server = InfoServer(
            self.registry,
            self.registry.is_id,
            policies=_policies(config, directory, self.registry),
            random_bytes=self._rand(self.info),
        )
        self._directory = directory
        store = (
            RepoStore.load(directory / RS_STORE_FILE)
            if directory is not None
            else RepoStore()
        )
        self._stored_before = len(store.records)
        self.repo_server = RepoServer(
            self.registry,
            self.registry.rs_id,
            store=store,
            random_bytes=self._rand(self.repo),
        )
        self._entities: dict[str, _Entity] = {
            **self.initiators,
            self.bs: self.base_station,
            self.info: self.info_server,
            self.repo: self.repo_server,
        }

        params = config.energy
        self.energy = EnergyBudget(
            costs=EnergyCosts(
                send=params.send,
                receive=params.receive,
                sign_verify=params.sign_verify,
                encrypt_decrypt=params.encrypt_decrypt,
            ),
            capacity=self._capacities(),
        )
        limits = config.rate_limit
        self.limiter = RateLimiter(limits.rate_per_s, limits.burst)
        self.watchdog = Watchdog(config.watchdog.threshold, config.watchdog.window)

        self.down: set[str] = set()
        self.link_hooks: list[LinkHook] = []
        self.forward_hooks: list[ForwardHook] = []
        self.delivery_taps: list[DeliveryTap] = []
        self.attacks: list[Attack] = [
            build_attack(spec, index) for index, spec in enumerate(config.attacks)
        ]
        self._lost: dict[bytes, AttackKind] = {}
        self._session_nodes: dict[bytes, str] = {}
        self._in_flight = 0

        workload = config.workload
        self.workload_end_ms = (
            workload.start_ms
            + workload.sessions_per_initiator * workload.interval_ms
            + len(self.initiators) * workload.stagger_ms
        )
        self.horizon_ms = config.horizon_ms or self._default_horizon()

    def _rand(self, node: str) -> Callable[[int], bytes]:
        return random.Random(f"{self.config.seed}:{node}").randbytes  # noqa: S311

    def _capacities(self) -> dict[str, float]:
        params = self.config.energy
        defaults = {
            NodeKind.SENSOR: params.sensor_capacity,
            NodeKind.USER: params.sensor_capacity,
            NodeKind.CLUSTER_HEAD: params.cluster_head_capacity,
        }
        capacity: dict[str, float] = {}
        for spec in self.config.topology.nodes:
            if spec.energy is not None:
                capacity[spec.id] = spec.energy
            elif spec.kind in defaults:
                capacity[spec.id] = defaults[spec.kind]
        return capacity

    def _default_horizon(self) -> int:
        end = self.workload_end_ms
        for spec in self.config.attacks:
            match spec:
                case ImpersonationSpec(start_ms=start, count=count, interval_ms=step):
                    end = max(end, start + (count + 1) * step)
                case VampireSpec(start_ms=start, duration_ms=int(duration)):
                    end = max(end, start + duration)
                case _:
                    pass
        return end + self.registry.config.response_timeout_ms + _HORIZON_MARGIN_MS

    def timestamp(self) -> Timestamp:
        """Protocol time now, truncated to the configured clock granularity."""
        now = int(self.env.now)
        now -= now % self.config.clock_granularity_ms
        return Timestamp(self.config.epoch_ms + now)

    def disable(self, node: str) -> None:
        """Take ``node`` off the network."""
        self.down.add(node)
        logger.info("node_disabled", node=node, at_ms=int(self.env.now))
        self._trace_event("disable", node=node)

    def mark_lost(self, session: bytes, kind: AttackKind) -> None:
        """Attribute the loss of ``session`` to ``kind`` for alarm accounting."""
        self._lost.setdefault(session, kind)

    def inject(
        self,
        data: bytes,
        origin: str,
        leg: LegTag,
        attack: AttackKind,
        *,
        counted: bool = True,
    ) -> None:
        """Put adversarial bytes on the air from ``origin`` toward BS."""
        self._send(
            Packet(data, origin, self.bs, leg, attack=attack, counted=counted)
        )

    def _excluded(self) -> set[str]:
        dead = {n for n in self.energy.capacity if not self.energy.alive(n)}
        return self.down | self.watchdog.flagged | dead

    def _trace_event(self, event: str, **fields: object) -> None:
        if self._trace is not None:
            self._trace.info(event, t=int(self.env.now), **fields)

    def _describe(self, packet: Packet) -> dict[str, object]:
        return {
            "origin": packet.origin,
            "dst": packet.dst,
            "leg": packet.leg.name,
            "session": packet.session.hex() if packet.session else None,
            "attack": str(packet.attack) if packet.attack else None,
            "bytes": len(packet.data),
        }

    def _send(self, packet: Packet) -> None:
        self.metrics.sent += 1
        self._in_flight += 1
        self._trace_event("send", **self._describe(packet))
        self.env.process(self._travel(packet))

    def _drop(self, packet: Packet, cause: str) -> None:
        self.metrics.dropped += 1
        self._in_flight -= 1
        logger.debug("packet_dropped", cause=cause, **self._describe(packet))
        self._trace_event("drop", cause=cause, **self._describe(packet))

    def _lose_to_outage(self, packet: Packet) -> None:
        if packet.session is not None and packet.attack is None:
            self.metrics.injected[AttackKind.NODE_OUTAGE] += 1
            self.mark_lost(packet.session, AttackKind.NODE_OUTAGE)

    def _first_hop_route(self, packet: Packet) -> bool:
        """Account for reroutes at the origin; return whether a route exists."""
        excluded = self._excluded()
        try:
            baseline = self.topology.route(packet.origin, packet.dst)
        except UnreachableError:
            self._drop(packet, "unreachable")
            return False
        try:
            actual = self.topology.route(packet.origin, packet.dst, excluded=excluded)
        except UnreachableError:
            actual = None
        hit_outage = bool(self.down & set(baseline[1:-1]))
        if hit_outage and packet.session is not None and packet.attack is None:
            if actual is not None:
                self.metrics.injected[AttackKind.NODE_OUTAGE] += 1
                self.metrics.detected[AttackKind.NODE_OUTAGE] += 1
            else:
                self._lose_to_outage(packet)
        if actual is None:
            self._drop(packet, "unreachable")
            return False
        if actual != baseline:
            self.metrics.reroutes += 1
        return True

    def _travel(self, packet: Packet) -> Generator[simpy.Event]:
        node = packet.origin
        self.energy.charge(node, EnergyOp.SEND)
        if not self._first_hop_route(packet):
            return
        while node != packet.dst:
            try:
                path = self.topology.route(node, packet.dst, excluded=self._excluded())
            except UnreachableError:
                self._lose_to_outage(packet)
                self._drop(packet, "unreachable")
                return
            nxt = path[1]
            yield self.env.timeout(self.topology.latency(node, nxt))

            for link_hook in self.link_hooks:
                altered = link_hook(packet, node, nxt)
                if altered is None:
                    self._drop(packet, "link")
                    return
                packet = altered
            if nxt in self.down or not self.energy.alive(nxt):
                if nxt in self.down:
                    self._lose_to_outage(packet)
                self._drop(packet, "node down")
                return
            self.energy.charge(nxt, EnergyOp.RECEIVE)
            if nxt == packet.dst:
                break

            relayed: Packet | None = packet
            for forward_hook in self.forward_hooks:
                relayed = forward_hook(relayed, nxt)
                if relayed is None:
                    break
            self.watchdog.observe(nxt, forwarded=relayed is not None)
            if relayed is None:
                self._drop(packet, "forwarder")
                return
            packet = relayed
            self.energy.charge(nxt, EnergyOp.SEND)
            node = nxt
        self._arrive(packet)

    def _charge_crypto(self, node: str, meter: CostMeter, before: CostMeter) -> None:
        sign_verify = meter.signs + meter.verifies - before.signs - before.verifies
        cipher = meter.encrypts + meter.decrypts - before.encrypts - before.decrypts
        self.energy.charge(node, EnergyOp.SIGN_VERIFY, sign_verify)
        self.energy.charge(node, EnergyOp.ENCRYPT_DECRYPT, cipher)

    def _arrive(self, packet: Packet) -> None:
        self._in_flight -= 1
        self._trace_event("arrive", **self._describe(packet))
        for tap in self.delivery_taps:
            tap(packet)
        if packet.dst == self.repo and packet.attack is not None:
            self.metrics.forged_reached_rs += 1
        entity = self._entities.get(packet.dst)
        if entity is None:
            self.metrics.delivered += 1
            return
        if (
            packet.dst == self.bs
            and packet.leg is LegTag.R_SEN1
            and not self.limiter.allow(packet.origin, int(self.env.now))
        ):
            self._reject(packet, RejectReason.RATE_LIMITED)
            return
        before = _snapshot(entity.meter)
        outcome = self._dispatch(entity, packet)
        self._charge_crypto(packet.dst, entity.meter, before)
        self._settle(packet, outcome)

    def _dispatch(self, entity: _Entity, packet: Packet) -> Outcome:
        now = self.timestamp()
        match entity, packet.leg:
            case BaseStation(), LegTag.R_SEN1:
                return entity.process_request(packet.data, now)
            case BaseStation(), LegTag.R_IS3:
                return entity.process_response(packet.data, now)
            case InfoServer(), LegTag.R_BS2:
                return entity.process_request(packet.data, now)
            case InfoServer(), LegTag.R_RS2:
                return entity.process_response(packet.data, now)
            case RepoServer(), LegTag.R_IS2:
                return entity.process_request(packet.data, now)
            case Sensor(), LegTag.R_BS3:
                return entity.process_response(packet.data, now)
            case _:
                detail = f"{packet.leg.name} is not handled here"
                return Reject(RejectReason.MALFORMED, detail, entity.entity_id)

    def _settle(self, packet: Packet, outcome: Outcome) -> None:
        match outcome:
            case Reject(reason=reason, reply=reply):
                self._reject(packet, reason)
                if reply is not None:
                    self._emit(reply, packet)
            case Accept(reply=reply):
                self.metrics.delivered += 1
                self._emit(reply, packet)
            case Envelope():
                self.metrics.delivered += 1
                self._emit(outcome, packet)
            case SessionResult(ok=True):
                self.metrics.delivered += 1
                self.metrics.sessions_completed += 1
            case SessionResult(decision=None, reason=reason):
                self._reject(packet, reason or RejectReason.INTEGRITY)
            case SessionResult():
                self.metrics.delivered += 1
                self.metrics.sessions_denied += 1

    def _reject(self, packet: Packet, reason: RejectReason) -> None:
        metrics = self.metrics
        metrics.rejected[reason] += 1
        if packet.tampered is not None and reason is RejectReason.INTEGRITY:
            metrics.detected[packet.tampered] += 1
        elif packet.counted and packet.attack is not None:
            metrics.detected[packet.attack] += 1
        self._trace_event("reject", reason=str(reason), **self._describe(packet))

    def _next_stop(self, envelope: Envelope, cause: Packet) -> str | None:
        match envelope.leg:
            case LegTag.R_BS2 | LegTag.R_RS2:
                return self.info
            case LegTag.R_IS2:
                return self.repo
            case LegTag.R_IS3:
                return self.bs
            case _:
                if cause.session is None:
                    return None
                return self._session_nodes.get(cause.session)

    def _emit(self, envelope: Envelope, cause: Packet) -> None:
        """Send an entity's output onward, inheriting the cause's bookkeeping."""
        if cause.attack is None:
            self._count_envelope(envelope)
        dst = self._next_stop(envelope, cause)
        if dst is None:
            return
        self._send(
            Packet(
                envelope.encode(),
                cause.dst,
                dst,
                envelope.leg,
                session=cause.session,
                attack=cause.attack,
            )
        )

    def _count_envelope(self, envelope: Envelope) -> None:
        self.metrics.envelopes += 1
        self.metrics.bits_total += envelope.bit_length

    def _initiator(self, node: str, offset: int) -> Generator[simpy.Event]:
        workload = self.config.workload
        yield self.env.timeout(workload.start_ms + offset)
        for _ in range(workload.sessions_per_initiator):
            if node in self.down or not self.energy.alive(node):
                return
            self._start_session(node)
            yield self.env.timeout(workload.interval_ms)

    def _start_session(self, node: str) -> None:
        sensor = self.initiators[node]
        before = _snapshot(sensor.meter)
        envelope = sensor.build_request(
            self.timestamp(), Action(self.config.workload.action)
        )
        self._charge_crypto(node, sensor.meter, before)
        request_id = sensor.last_request_id or b""
        self.metrics.sessions += 1
        self._count_envelope(envelope)
        self._session_nodes[request_id] = node
        self.env.process(self._await_response(node, request_id))
        self._send(
            Packet(envelope.encode(), node, self.bs, LegTag.R_SEN1, session=request_id)
        )

    def _await_response(self, node: str, request_id: bytes) -> Generator[simpy.Event]:
        yield self.env.timeout(self.registry.config.response_timeout_ms)
        sensor = self.initiators[node]
        if request_id not in sensor.sessions:
            return
        sensor.abandon(request_id)
        self.metrics.alarms += 1
        kind = self._lost.pop(request_id, None)
        if kind in _OUTAGE_KINDS:
            self.metrics.detected[kind] += 1
        logger.info("response_timeout", node=node, request_id=request_id.hex())
        self._trace_event("alarm", node=node, session=request_id.hex())

    def _persist_records(self, directory: Path) -> None:
        """Append this run's RS records to the deployment's patient store."""
        added = self.repo_server.store.records[self._stored_before :]
        if not added:
            return
        path = directory / RS_STORE_FILE
        merged = RepoStore.load(path)
        merged.records.extend(added)
        merged.save(path)
        logger.info("repo_records_saved", path=str(path), added=len(added))

    def run(self) -> Metrics:
        """Execute to the horizon and collect metrics."""
        for attack in self.attacks:
            attack.attach(self)
        stagger = self.config.workload.stagger_ms
        for index, node in enumerate(self.initiators):
            self.env.process(self._initiator(node, index * stagger))
        self.env.run(until=self.horizon_ms)
        for attack in self.attacks:
            attack.finish()
        closing = self.timestamp()
        for party in (self.base_station, self.info_server):
            party.expire_sessions(closing)
        if self._directory is not None:
            self._persist_records(self._directory)

        metrics = self.metrics
        metrics.dropped += self._in_flight
        self._in_flight = 0
        consumed = self.energy.consumed
        metrics.energy = {n: consumed[n] for n in sorted(self.topology.kinds)}
        metrics.energy_bs = self.energy.consumed[self.bs]
        metrics.hashes = {
            "sensor": sum(s.meter.hashes for s in self.initiators.values()),
            "bs": self.base_station.meter.hashes,
            "is": self.info_server.meter.hashes,
            "rs": self.repo_server.meter.hashes,
        }
        metrics.flagged = sorted(self.watchdog.flagged)
        logger.info(
            "run_finished",
            run_id=metrics.run_id,
            sessions=metrics.sessions,
            completed=metrics.sessions_completed,
            rejected=metrics.rejected_total,
            detected=metrics.attacks_detected,
        )
        return metrics


def run(config: SimConfig, *, trace: FilteringBoundLogger | None = None) -> Metrics:
    """Simulate one config; identical configs give identical metrics."""
    return Simulation(config, trace=trace).run()


def _execute(payload: bytes) -> Metrics:
    runner, config = pickle.loads(payload)  # noqa: S301
    return runner(config)


def run_many(
    configs: Sequence[SimConfig],
    *,
    workers: int | None = None,
    runner: Callable[[SimConfig], Metrics] = run,
) -> list[Metrics]:
    """Run independent configs in a process pool, results in input order.

    Each job travels as a cloudpickle payload, so ``runner`` may be a closure
    or a function defined in a test module.
    """
    payloads = [cloudpickle.dumps((runner, config)) for config in configs]
    if workers == 1 or len(payloads) <= 1:
        return [_execute(payload) for payload in payloads]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_execute, payloads))
