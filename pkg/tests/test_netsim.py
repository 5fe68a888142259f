"""Tests for the discrete-event simulator and the seven attack behaviours."""

from __future__ import annotations

import io
from typing import TYPE_CHECKING

import pytest

from medsentry._attacks import Rushing
from medsentry._logging import trace_logger
from medsentry._metrics import Metrics, metrics_csv
from medsentry._netsim import Simulation, run, run_many
from medsentry._scenario import AttackKind, parse_config
from medsentry._types import ConfigError, RejectReason

if TYPE_CHECKING:
    from medsentry._scenario import SimConfig

SERVER_NODES = [
    {"id": "bs", "kind": "base_station"},
    {"id": "is", "kind": "info_server"},
    {"id": "rs", "kind": "repo_server"},
]
SERVER_LINKS = [
    {"a": "bs", "b": "is", "latency_ms": 2},
    {"a": "is", "b": "rs", "latency_ms": 2},
]
ADVERSARY = {"id": "adv", "kind": "adversary"}


def _star(
    sensors: int,
    heads: tuple[str, ...] = ("ch1", "ch2"),
    *,
    adversary: bool = False,
) -> dict[str, object]:
    """Sensors wired to every cluster head, heads wired to BS."""
    names = [f"s{i}" for i in range(1, sensors + 1)]
    nodes = [{"id": n, "kind": "sensor"} for n in names]
    nodes += [{"id": h, "kind": "cluster_head"} for h in heads]
    links = [{"a": n, "b": h, "latency_ms": 5} for n in names for h in heads]
    links += [{"a": h, "b": "bs", "latency_ms": 5} for h in heads]
    if adversary:
        nodes.append(ADVERSARY)
        links.append({"a": "adv", "b": "bs", "latency_ms": 5})
    return {"nodes": nodes + SERVER_NODES, "links": links + SERVER_LINKS}


def _config(topology: dict[str, object], **fields: object) -> SimConfig:
    return parse_config({"topology": topology, **fields})


def _workload(sessions: int, interval_ms: int = 250) -> dict[str, int]:
    return {"sessions_per_initiator": sessions, "interval_ms": interval_ms}


def test_honest_run_completes_every_session() -> None:
    """Ten sensors, one session each, six envelopes per session."""
    metrics = run(_config(_star(10)))
    assert metrics.sessions == 10
    assert metrics.sessions_completed == 10
    assert metrics.envelopes == 60
    assert metrics.rejected_total == 0
    assert metrics.alarms == 0
    assert metrics.hashes == {"sensor": 10, "bs": 20, "is": 20, "rs": 10}
    assert metrics.balanced
    assert metrics.bits_total > 0


def test_policy_denials_are_counted_not_completed() -> None:
    """An empty policy store turns every session into a denial."""
    metrics = run(_config(_star(2), policies=[]))
    assert metrics.sessions_denied == 2
    assert metrics.sessions_completed == 0
    assert metrics.rejected[RejectReason.POLICY] == 2
    assert metrics.envelopes == 8
    assert metrics.hashes["rs"] == 0


def test_runs_are_deterministic() -> None:
    """The same config gives the same metrics and the same trace."""
    config = _config(_star(2), workload=_workload(2), seed=11)
    traces = [io.StringIO(), io.StringIO()]
    results = [run(config, trace=trace_logger(handle)) for handle in traces]
    assert metrics_csv(results[:1]) == metrics_csv(results[1:])
    assert traces[0].getvalue() == traces[1].getvalue()
    assert '"event": "arrive"' in traces[0].getvalue()


def test_energy_ledger_balances() -> None:
    """Per-operation draws add up to what every node consumed."""
    sim = Simulation(_config(_star(2)))
    metrics = sim.run()
    for node, consumed in sim.energy.consumed.items():
        drawn = sum(v for (n, _), v in sim.energy.ledger.items() if n == node)
        assert drawn == pytest.approx(consumed)
    assert metrics.energy_total == pytest.approx(sim.energy.total)
    assert metrics.energy_bs == metrics.energy["bs"]


def test_exhausted_sensor_stops_working() -> None:
    """A sensor with 30 units manages two sessions and dies in the third."""
    topology = _star(1)
    nodes = topology["nodes"]
    assert isinstance(nodes, list)
    nodes[0] = {"id": "s1", "kind": "sensor", "energy": 30}
    metrics = run(_config(topology, workload=_workload(5)))
    assert metrics.sessions == 3
    assert metrics.sessions_completed == 2
    assert metrics.energy["s1"] == 30.0


def test_horizon_cuts_packets_in_flight() -> None:
    """Envelopes still travelling at the horizon count as dropped."""
    metrics = run(_config(_star(2), horizon_ms=12))
    assert metrics.sessions == 2
    assert metrics.sessions_completed == 0
    assert metrics.dropped > 0
    assert metrics.balanced


@pytest.mark.slow
def test_mitm_flips_are_all_detected() -> None:
    """Every request crossing the tapped link fails integrity at BS."""
    metrics = run(
        _config(
            _star(10),
            workload=_workload(20),
            attacks=[{"kind": "mitm", "link": ["ch1", "bs"]}],
        )
    )
    assert metrics.injected[AttackKind.MITM] == 200
    assert metrics.detected[AttackKind.MITM] == 200
    assert metrics.rejected[RejectReason.INTEGRITY] == 200
    assert metrics.sessions_completed == 0
    assert metrics.balanced


def test_mitm_replacement_is_detected() -> None:
    """Replacing the whole ciphertext is caught just like a bit flip."""
    metrics = run(
        _config(
            _star(2),
            attacks=[{"kind": "mitm", "link": ["ch1", "bs"], "mode": "replace"}],
        )
    )
    assert metrics.injected[AttackKind.MITM] == 2
    assert metrics.detected[AttackKind.MITM] == 2


@pytest.mark.parametrize("mode", ["forge", "replay"])
def test_impersonation_never_reaches_rs(mode: str) -> None:
    """Forged and replayed R_Sen1 die at BS, rate limited or refused."""
    attack = {"kind": "impersonation", "node": "adv", "target": "s1", "mode": mode}
    metrics = run(_config(_star(2, adversary=True), attacks=[attack]))
    assert metrics.injected[AttackKind.IMPERSONATION] == 100
    assert metrics.detected[AttackKind.IMPERSONATION] == 100
    assert metrics.forged_reached_rs == 0
    assert metrics.sessions_completed == 2
    assert metrics.rejected[RejectReason.RATE_LIMITED] > 0


def _rushing_topology() -> dict[str, object]:
    return {
        "nodes": [
            {"id": "s1", "kind": "sensor"},
            {"id": "ch1", "kind": "cluster_head"},
            ADVERSARY,
            *SERVER_NODES,
        ],
        "links": [
            {"a": "s1", "b": "ch1", "latency_ms": 5},
            {"a": "ch1", "b": "bs", "latency_ms": 5},
            {"a": "s1", "b": "adv", "latency_ms": 20},
            {"a": "adv", "b": "bs", "latency_ms": 20},
            *SERVER_LINKS,
        ],
    }


def test_rushing_alterations_are_detected() -> None:
    """Whatever the attracted relay changes fails integrity at the next hop."""
    attack = {"kind": "rushing", "node": "adv", "alter_rate": 1.0}
    metrics = run(
        _config(_rushing_topology(), workload=_workload(20), attacks=[attack])
    )
    assert metrics.injected[AttackKind.RUSHING] == 20
    assert metrics.detected[AttackKind.RUSHING] == 20
    assert metrics.sessions_completed == 0


def test_rushing_relay_sees_only_ciphertext() -> None:
    """An honest-looking relay completes sessions and learns no plaintext."""
    attack = {"kind": "rushing", "node": "adv", "alter_rate": 0.0}
    sim = Simulation(
        _config(_rushing_topology(), workload=_workload(3), attacks=[attack])
    )
    metrics = sim.run()
    rushing = sim.attacks[0]
    assert isinstance(rushing, Rushing)
    assert metrics.sessions_completed == 3
    assert len(rushing.observations) == 6
    assert metrics.observed_plaintext == 0


def test_vampire_flood_is_rate_limited() -> None:
    """A flood at a hundred times the honest rate leaves honest sessions intact."""
    attack = {"kind": "vampire", "node": "adv", "rate_multiplier": 100}
    metrics = run(
        _config(_star(2, adversary=True), workload=_workload(1, 1000), attacks=[attack])
    )
    injected = metrics.injected[AttackKind.VAMPIRE]
    assert injected > 100
    assert metrics.detected[AttackKind.VAMPIRE] == injected
    assert metrics.rejected[RejectReason.RATE_LIMITED] > 0
    assert metrics.sessions_completed == metrics.sessions == 2
    assert metrics.forged_reached_rs == 0


@pytest.mark.slow
def test_greedy_forwarder_is_flagged_and_avoided() -> None:
    """The watchdog flags ch1 after a full window of drops; ch2 carries the rest."""
    metrics = run(
        _config(
            _star(10),
            workload=_workload(12),
            watchdog={"window": 100},
            attacks=[{"kind": "neglect_greed", "node": "ch1"}],
        )
    )
    assert metrics.injected[AttackKind.NEGLECT_GREED] == 100
    assert metrics.detected[AttackKind.NEGLECT_GREED] == 100
    assert metrics.flagged == ["ch1"]
    assert metrics.sessions_completed == 20
    assert metrics.alarms == 100


@pytest.mark.slow
def test_packet_drops_raise_alarms() -> None:
    """Each silently dropped request shows up as an initiator timeout."""
    metrics = run(
        _config(
            _star(10),
            workload=_workload(10),
            attacks=[{"kind": "packet_drop", "link": ["bs", "is"]}],
        )
    )
    assert metrics.injected[AttackKind.PACKET_DROP] == 100
    assert metrics.detected[AttackKind.PACKET_DROP] == 100
    assert metrics.alarms == 100
    assert metrics.dropped == 100
    assert metrics.balanced


@pytest.mark.parametrize("link", [("bs", "is"), ("is", "rs")])
def test_servers_forget_unanswered_sessions(link: tuple[str, str]) -> None:
    """Hops drop sessions whose replies were lost once the run closes."""
    simulation = Simulation(
        _config(
            _star(2),
            workload=_workload(3),
            attacks=[{"kind": "packet_drop", "link": list(link)}],
        )
    )
    metrics = simulation.run()
    assert metrics.alarms == 6
    assert simulation.base_station.sessions == {}
    assert simulation.info_server.sessions == {}


@pytest.mark.slow
def test_outage_is_routed_around() -> None:
    """With ch1 gone, traffic moves to ch2 and every session still completes."""
    metrics = run(
        _config(
            _star(10),
            workload=_workload(10),
            attacks=[{"kind": "node_outage", "node": "ch1", "at_ms": 600}],
        )
    )
    assert metrics.sessions_completed == 100
    injected = metrics.injected[AttackKind.NODE_OUTAGE]
    assert injected >= 100
    assert metrics.detected[AttackKind.NODE_OUTAGE] == injected
    assert metrics.reroutes == injected
    assert metrics.alarms == 0


def test_outage_without_detour_times_out() -> None:
    """When the only cluster head fails, later sessions end in alarms."""
    metrics = run(
        _config(
            _star(2, ("ch1",)),
            workload=_workload(4),
            attacks=[{"kind": "node_outage", "node": "ch1", "at_ms": 600}],
        )
    )
    assert metrics.sessions_completed == 6
    assert metrics.alarms == 2
    assert metrics.injected[AttackKind.NODE_OUTAGE] == 2
    assert metrics.detected[AttackKind.NODE_OUTAGE] == 2


def test_run_many_keeps_input_order() -> None:
    """Jobs travel through cloudpickle, so closures work as runners."""
    prefix = "done-"

    def runner(config: SimConfig) -> Metrics:
        return Metrics(prefix + config.run_id)

    configs = [_config(_star(1), run_id=name) for name in ("a", "b", "c")]
    results = run_many(configs, workers=2, runner=runner)
    assert [m.run_id for m in results] == ["done-a", "done-b", "done-c"]


def test_run_many_returns_worker_config_errors() -> None:
    """A ConfigError raised in a worker process reaches the caller intact."""

    def runner(config: SimConfig) -> Metrics:
        msg = "policy record does not validate"
        raise ConfigError(f"runs.{config.run_id}.policies", msg)

    configs = [_config(_star(1), run_id=name) for name in ("a", "b")]
    with pytest.raises(ConfigError) as info:
        run_many(configs, workers=2, runner=runner)
    assert info.value.field == "runs.a.policies"
    assert info.value.detail == "policy record does not validate"


@pytest.mark.parametrize(
    ("overrides", "field"),
    [
        ({"workload": {"sessions_per_initiator": -1}}, "workload"),
        ({"attacks": [{"kind": "earthquake"}]}, "attacks"),
        ({"bogus": 1}, "bogus"),
        ({"aes_rounds": 14}, "aes_rounds"),
    ],
)
def test_invalid_configs_name_the_field(
    overrides: dict[str, object], field: str
) -> None:
    """Validation failures carry the path of the offending field."""
    with pytest.raises(ConfigError) as info:
        _config(_star(1), **overrides)
    assert info.value.field.startswith(field)


@pytest.mark.parametrize(
    ("attack", "field"),
    [
        ({"kind": "mitm", "link": ["s1", "is"]}, "attacks.0.link"),
        ({"kind": "node_outage", "node": "ghost", "at_ms": 1}, "attacks.0.node"),
        (
            {"kind": "impersonation", "node": "ch1", "target": "bs"},
            "attacks.0.target",
        ),
    ],
)
def test_attacks_on_missing_parts_fail(attack: dict[str, object], field: str) -> None:
    """Attack targets are checked against the topology when the run starts."""
    with pytest.raises(ConfigError) as info:
        run(_config(_star(1), attacks=[attack]))
    assert info.value.field == field


def test_duplicate_nodes_are_rejected() -> None:
    """Two nodes may not share an id."""
    topology = _star(1)
    nodes = topology["nodes"]
    assert isinstance(nodes, list)
    nodes.append({"id": "s1", "kind": "sensor"})
    with pytest.raises(ConfigError) as info:
        run(_config(topology))
    assert info.value.field == "topology.nodes"
