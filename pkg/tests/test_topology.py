"""Tests for routing and topology validation."""

from __future__ import annotations

import random

import pytest

from medsentry._topology import NodeKind, Topology
from medsentry._types import ConfigError, UnreachableError

SERVERS = [
    ("bs", NodeKind.BASE_STATION),
    ("is", NodeKind.INFO_SERVER),
    ("rs", NodeKind.REPO_SERVER),
]
SERVER_LINKS = [("bs", "is", 2), ("is", "rs", 2)]


def _star() -> Topology:
    return Topology.build(
        [("s1", NodeKind.SENSOR), *SERVERS],
        [("s1", "bs", 5), *SERVER_LINKS],
    )


def _oracle(
    topology: Topology, src: str, dst: str, excluded: frozenset[str]
) -> tuple[str, ...] | None:
    """Cheapest simple path by exhaustive search, ties to the smallest tuple."""
    best: tuple[int, tuple[str, ...]] | None = None
    stack: list[tuple[int, tuple[str, ...]]] = [(0, (src,))]
    while stack:
        cost, path = stack.pop()
        node = path[-1]
        if node == dst:
            if best is None or (cost, path) < best:
                best = (cost, path)
            continue
        for nxt in topology.neighbours(node):
            if nxt in path or (nxt in excluded and nxt != dst):
                continue
            stack.append((cost + topology.routing_latency(node, nxt), (*path, nxt)))
    return None if best is None else best[1]


def _random_graph(rng: random.Random) -> Topology:
    size = rng.randint(2, 8)
    nodes = [(f"n{i}", NodeKind.SENSOR) for i in range(size)]
    links = [
        (f"n{a}", f"n{b}", rng.randint(1, 3))
        for a in range(size)
        for b in range(a + 1, size)
        if rng.random() < 0.4
    ]
    topology = Topology.build(nodes, links)
    if rng.random() < 0.3:
        topology.advertised[f"n{rng.randrange(size)}"] = 1
    return topology


def test_route_matches_exhaustive_search() -> None:
    """Dijkstra agrees with brute force on small random graphs."""
    rng = random.Random(2024)
    for _ in range(150):
        topology = _random_graph(rng)
        names = sorted(topology.kinds)
        excluded = frozenset(rng.sample(names, rng.randint(0, 2)))
        for src in names:
            for dst in names:
                expected = _oracle(topology, src, dst, excluded)
                if expected is None:
                    with pytest.raises(UnreachableError):
                        topology.route(src, dst, excluded=excluded)
                else:
                    assert topology.route(src, dst, excluded=excluded) == expected


def test_equal_cost_paths_break_ties_by_node_ids() -> None:
    """Two cluster heads at equal latency: the smaller id wins."""
    topology = Topology.build(
        [
            ("s1", NodeKind.SENSOR),
            ("ch2", NodeKind.CLUSTER_HEAD),
            ("ch1", NodeKind.CLUSTER_HEAD),
            *SERVERS,
        ],
        [
            ("s1", "ch2", 5),
            ("s1", "ch1", 5),
            ("ch1", "bs", 5),
            ("ch2", "bs", 5),
            *SERVER_LINKS,
        ],
    )
    assert topology.route("s1", "rs") == ("s1", "ch1", "bs", "is", "rs")
    assert topology.route("s1", "bs", excluded={"ch1"}) == ("s1", "ch2", "bs")
    with pytest.raises(UnreachableError):
        topology.route("s1", "bs", excluded={"ch1", "ch2"})


def test_advertised_latency_attracts_routes() -> None:
    """Routing believes the claim, delivery pays the real latency."""
    topology = Topology.build(
        [
            ("s1", NodeKind.SENSOR),
            ("ch1", NodeKind.CLUSTER_HEAD),
            ("adv", NodeKind.ADVERSARY),
            *SERVERS,
        ],
        [
            ("s1", "ch1", 5),
            ("ch1", "bs", 5),
            ("s1", "adv", 20),
            ("adv", "bs", 20),
            *SERVER_LINKS,
        ],
    )
    assert topology.route("s1", "bs") == ("s1", "ch1", "bs")
    topology.advertised["adv"] = 1
    path = topology.route("s1", "bs")
    assert path == ("s1", "adv", "bs")
    assert topology.path_latency(path) == 40


def test_valid_topology_passes() -> None:
    """A sensor behind BS with the servers chained is accepted."""
    topology = _star()
    topology.validate()
    assert topology.only(NodeKind.BASE_STATION) == "bs"
    assert topology.neighbours("is") == ["bs", "rs"]


@pytest.mark.parametrize(
    ("nodes", "links"),
    [
        ([("s1", NodeKind.SENSOR), *SERVERS], [("s1", "is", 1), *SERVER_LINKS]),
        ([("s1", NodeKind.SENSOR), *SERVERS], SERVER_LINKS),
        (
            [("s1", NodeKind.SENSOR), ("bs2", NodeKind.BASE_STATION), *SERVERS],
            [("s1", "bs", 1), ("bs2", "is", 1), *SERVER_LINKS],
        ),
        ([("s1", NodeKind.SENSOR), *SERVERS], [("s1", "bs", 1), ("bs", "is", 1)]),
    ],
)
def test_invalid_topologies(
    nodes: list[tuple[str, NodeKind]], links: list[tuple[str, str, int]]
) -> None:
    """Bypassing BS, isolated sensors, two BSs or a cut server chain fail."""
    with pytest.raises(ConfigError):
        Topology.build(nodes, links).validate()


@pytest.mark.parametrize(
    "link", [("s1", "ghost", 1), ("s1", "s1", 1), ("s1", "bs", 0)]
)
def test_bad_links_name_the_field(link: tuple[str, str, int]) -> None:
    """Dangling ends, self-loops and zero latency are config errors."""
    with pytest.raises(ConfigError) as info:
        Topology.build([("s1", NodeKind.SENSOR), *SERVERS], [link])
    assert info.value.field == "topology.links"
