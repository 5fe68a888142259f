"""Scenario files: simulation configs, attack specs and run expectations."""

from __future__ import annotations

import json
from enum import StrEnum
from pathlib import Path
from typing import Annotated, Literal

from pydantic import BaseModel, ConfigDict, Field, ValidationError

from medsentry._topology import NodeKind, Topology
from medsentry._types import ConfigError, RejectReason

# 2024-01-03 10:00 UTC, a Wednesday morning.
DEFAULT_EPOCH_MS = 1_704_276_000_000


class AttackKind(StrEnum):
    """The seven threats the simulator can inject."""

    NODE_OUTAGE = "node_outage"
    MITM = "mitm"
    IMPERSONATION = "impersonation"
    RUSHING = "rushing"
    VAMPIRE = "vampire"
    NEGLECT_GREED = "neglect_greed"
    PACKET_DROP = "packet_drop"


class _Model(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")


class NodeSpec(_Model):
    """One node; ``energy`` overrides the default capacity for its kind."""

    id: str = Field(min_length=1)
    kind: NodeKind
    energy: float | None = Field(default=None, gt=0)


class LinkSpec(_Model):
    """An undirected link."""

    a: str
    b: str
    latency_ms: int = Field(ge=1)


class TopologySpec(_Model):
    """Nodes and links of one run."""

    nodes: list[NodeSpec] = Field(min_length=1)
    links: list[LinkSpec]

    def build(self) -> Topology:
        """Materialize and validate the graph."""
        ids = [n.id for n in self.nodes]
        if len(set(ids)) != len(ids):
            msg = "duplicate node id"
            raise ConfigError("topology.nodes", msg)
        topology = Topology.build(
            ((n.id, n.kind) for n in self.nodes),
            ((link.a, link.b, link.latency_ms) for link in self.links),
        )
        topology.validate()
        return topology


class Workload(_Model):
    """When initiators start sessions."""

    sessions_per_initiator: int = Field(default=1, ge=0)
    interval_ms: int = Field(default=1000, ge=1)
    start_ms: int = Field(default=0, ge=0)
    stagger_ms: int = Field(default=7, ge=0)
    action: Literal["store", "retrieve"] = "store"


class EnergyParams(_Model):
    """Energy prices and default capacities.

    Servers and adversaries are unbounded unless a node sets ``energy``.
    """

    send: float = Field(default=2.0, ge=0)
    receive: float = Field(default=1.0, ge=0)
    sign_verify: float = Field(default=5.0, ge=0)
    encrypt_decrypt: float = Field(default=3.0, ge=0)
    sensor_capacity: float = Field(default=10_000.0, gt=0)
    cluster_head_capacity: float = Field(default=50_000.0, gt=0)


class RateLimitParams(_Model):
    """BS token bucket, per network origin."""

    rate_per_s: float = Field(default=5.0, gt=0)
    burst: float = Field(default=10.0, ge=1)


class WatchdogParams(_Model):
    """Delivery-ratio threshold and window."""

    threshold: float = Field(default=0.5, gt=0, le=1)
    window: int = Field(default=20, ge=1)


class NodeOutageSpec(_Model):
    """Disable ``node`` at ``at_ms``."""

    kind: Literal[AttackKind.NODE_OUTAGE] = AttackKind.NODE_OUTAGE
    node: str
    at_ms: int = Field(ge=0)


class MitmSpec(_Model):
    """Tamper with ciphertext crossing ``link``."""

    kind: Literal[AttackKind.MITM] = AttackKind.MITM
    link: tuple[str, str]
    mode: Literal["flip", "replace"] = "flip"
    rate: float = Field(default=1.0, ge=0, le=1)
    bits: int = Field(default=1, ge=1)


class ImpersonationSpec(_Model):
    """Inject forged or replayed R_Sen1 envelopes claiming ``target``."""

    kind: Literal[AttackKind.IMPERSONATION] = AttackKind.IMPERSONATION
    node: str
    target: str
    mode: Literal["forge", "replay"] = "forge"
    count: int = Field(default=100, ge=1)
    interval_ms: int = Field(default=20, ge=1)
    start_ms: int = Field(default=0, ge=0)


class RushingSpec(_Model):
    """Attract routes through ``node`` by advertising a low latency."""

    kind: Literal[AttackKind.RUSHING] = AttackKind.RUSHING
    node: str
    advertised_latency_ms: int = Field(default=1, ge=1)
    alter_rate: float = Field(default=0.0, ge=0, le=1)


class VampireSpec(_Model):
    """Flood BS from ``node`` at ``rate_multiplier`` times the honest rate."""

    kind: Literal[AttackKind.VAMPIRE] = AttackKind.VAMPIRE
    node: str
    rate_multiplier: float = Field(default=100.0, gt=0)
    start_ms: int = Field(default=0, ge=0)
    duration_ms: int | None = Field(default=None, ge=1)


class NeglectGreedSpec(_Model):
    """Turn forwarder ``node`` greedy: drop others' packets, send its own."""

    kind: Literal[AttackKind.NEGLECT_GREED] = AttackKind.NEGLECT_GREED
    node: str
    drop_rate: float = Field(default=1.0, ge=0, le=1)
    own_interval_ms: int | None = Field(default=100, ge=1)


class PacketDropSpec(_Model):
    """Silently drop envelopes crossing ``link``."""

    kind: Literal[AttackKind.PACKET_DROP] = AttackKind.PACKET_DROP
    link: tuple[str, str]
    probability: float = Field(default=1.0, ge=0, le=1)


AttackSpec = Annotated[
    NodeOutageSpec
    | MitmSpec
    | ImpersonationSpec
    | RushingSpec
    | VampireSpec
    | NeglectGreedSpec
    | PacketDropSpec,
    Field(discriminator="kind"),
]


class Expectations(_Model):
    """Assertions ``cmd_run`` checks against a run's metrics."""

    sessions_completed: int | None = None
    min_completion_ratio: float | None = Field(default=None, ge=0, le=1)
    envelopes: int | None = None
    no_rejections: bool = False
    all_attacks_detected: bool = False
    alarms_equal_drops: bool = False
    forged_reached_rs: int | None = None
    flagged: list[str] | None = None
    max_energy: dict[str, float] = Field(default_factory=dict)
    rejected: dict[RejectReason, int] = Field(default_factory=dict)


class SimConfig(_Model):
    """Everything that determines one simulation run."""

    run_id: str = "run"
    seed: int = 0
    topology: TopologySpec
    workload: Workload = Field(default_factory=Workload)
    attacks: list[AttackSpec] = Field(default_factory=list)
    freshness_window_ms: int = Field(default=2000, ge=0)
    response_timeout_ms: int = Field(default=1000, ge=1)
    clock_granularity_ms: int = Field(default=1, ge=1)
    aes_rounds: Literal[10, 12] = 10
    epoch_ms: int = Field(default=DEFAULT_EPOCH_MS, ge=0)
    horizon_ms: int | None = Field(default=None, ge=1)
    energy: EnergyParams = Field(default_factory=EnergyParams)
    rate_limit: RateLimitParams = Field(default_factory=RateLimitParams)
    watchdog: WatchdogParams = Field(default_factory=WatchdogParams)
    deployment: str | None = None
    policies: list[dict[str, object]] | None = None
    expect: Expectations = Field(default_factory=Expectations)


class Scenario(_Model):
    """A scenario file: one or more runs."""

    runs: list[SimConfig] = Field(min_length=1)


def _field_path(exc: ValidationError) -> str:
    first = exc.errors()[0]
    return ".".join(str(part) for part in first["loc"]) or "<root>"


def parse_config(data: str | dict[str, object]) -> SimConfig:
    """Validate one run config; failures name the offending field."""
    try:
        if isinstance(data, str):
            return SimConfig.model_validate_json(data)
        return SimConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(_field_path(exc), exc.errors()[0]["msg"]) from exc


def load_scenario(path: Path) -> Scenario:
    """Read a scenario file and resolve deployment paths against its folder."""
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError as exc:
        raise ConfigError(str(path), "scenario file not found") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(str(path), f"invalid JSON: {exc}") from exc
    try:
        scenario = Scenario.model_validate(raw)
    except ValidationError as exc:
        raise ConfigError(_field_path(exc), exc.errors()[0]["msg"]) from exc
    runs = [
        run.model_copy(update={"deployment": str(path.parent / run.deployment)})
        if run.deployment is not None and not Path(run.deployment).is_absolute()
        else run
        for run in scenario.runs
    ]
    return Scenario(runs=runs)
