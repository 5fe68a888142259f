"""Network graph, minimum-latency routing and the gateway constraint."""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field
from enum import StrEnum
from typing import TYPE_CHECKING

from medsentry._types import ConfigError, UnreachableError

if TYPE_CHECKING:
    from collections.abc import Collection, Iterable


class NodeKind(StrEnum):
    """Role of a node in the simulated network."""

    SENSOR = "sensor"
    USER = "user"
    CLUSTER_HEAD = "cluster_head"
    BASE_STATION = "base_station"
    INFO_SERVER = "info_server"
    REPO_SERVER = "repo_server"
    ADVERSARY = "adversary"


INITIATOR_NODES = frozenset({NodeKind.SENSOR, NodeKind.USER})

Path = tuple[str, ...]


@dataclass
class Topology:
    """Undirected graph with per-link latency in milliseconds.

    ``advertised`` overrides the latency routing believes for every link
    touching a node; packets still travel at the real link latency.
    """

    kinds: dict[str, NodeKind]
    links: dict[frozenset[str], int]
    advertised: dict[str, int] = field(default_factory=dict)

    @classmethod
    def build(
        cls,
        nodes: Iterable[tuple[str, NodeKind]],
        links: Iterable[tuple[str, str, int]],
    ) -> Topology:
        """Create a topology, rejecting dangling or degenerate links."""
        kinds = dict(nodes)
        table: dict[frozenset[str], int] = {}
        for a, b, latency in links:
            for end in (a, b):
                if end not in kinds:
                    msg = f"link {a}-{b} names unknown node {end!r}"
                    raise ConfigError("topology.links", msg)
            if a == b:
                msg = f"self-loop on {a!r}"
                raise ConfigError("topology.links", msg)
            if latency < 1:
                msg = f"link {a}-{b} latency must be >= 1 ms"
                raise ConfigError("topology.links", msg)
            table[frozenset((a, b))] = latency
        return cls(kinds=kinds, links=table)

    def neighbours(self, node: str) -> list[str]:
        """Adjacent nodes in id order."""
        out = [next(iter(pair - {node})) for pair in self.links if node in pair]
        return sorted(out)

    def latency(self, a: str, b: str) -> int:
        """Real latency of the link ``a-b``."""
        return self.links[frozenset((a, b))]

    def routing_latency(self, a: str, b: str) -> int:
        """Latency as seen by route computation."""
        real = self.latency(a, b)
        claims = [self.advertised[n] for n in (a, b) if n in self.advertised]
        return min([real, *claims])

    def nodes_of(self, kind: NodeKind) -> list[str]:
        """Nodes of ``kind`` in id order."""
        return sorted(n for n, k in self.kinds.items() if k is kind)

    def only(self, kind: NodeKind) -> str:
        """The single node of ``kind``."""
        found = self.nodes_of(kind)
        if len(found) != 1:
            msg = f"expected exactly one {kind} node, found {len(found)}"
            raise ConfigError("topology.nodes", msg)
        return found[0]

    def route(
        self, src: str, dst: str, *, excluded: Collection[str] = frozenset()
    ) -> Path:
        """Minimum-latency path from ``src`` to ``dst``.

        Ties go to the lexicographically smallest node-id sequence. Nodes in
        ``excluded`` are never used as intermediate hops.
        """
        for end in (src, dst):
            if end not in self.kinds:
                msg = f"unknown node {end!r}"
                raise ConfigError("route", msg)
        heap: list[tuple[int, Path]] = [(0, (src,))]
        done: set[str] = set()
        while heap:
            cost, path = heapq.heappop(heap)
            node = path[-1]
            if node in done:
                continue
            if node == dst:
                return path
            done.add(node)
            for nxt in self.neighbours(node):
                if nxt in done or (nxt in excluded and nxt != dst):
                    continue
                heapq.heappush(
                    heap, (cost + self.routing_latency(node, nxt), (*path, nxt))
                )
        msg = f"no live path from {src} to {dst}"
        raise UnreachableError(msg)

    def path_latency(self, path: Path) -> int:
        """Real end-to-end latency of ``path``."""
        return sum(self.latency(a, b) for a, b in zip(path, path[1:], strict=False))

    def validate(self) -> None:
        """Check the BS gateway constraint and initiator connectivity."""
        bs = self.only(NodeKind.BASE_STATION)
        info = self.only(NodeKind.INFO_SERVER)
        repo = self.only(NodeKind.REPO_SERVER)
        initiators = sorted(n for n, k in self.kinds.items() if k in INITIATOR_NODES)
        for initiator in initiators:
            try:
                self.route(initiator, bs)
            except UnreachableError as exc:
                raise ConfigError("topology", str(exc)) from exc
            for server in (info, repo):
                try:
                    path = self.route(initiator, server, excluded={bs})
                except UnreachableError:
                    continue
                msg = f"{initiator} reaches {server} without passing {bs}: {path}"
                raise ConfigError("topology", msg)
        for a, b in ((bs, info), (info, repo)):
            try:
                self.route(a, b)
            except UnreachableError as exc:
                raise ConfigError("topology", str(exc)) from exc
