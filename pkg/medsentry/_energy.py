"""Per-node energy accounting; a node halts when its budget is spent."""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field
from enum import StrEnum


class EnergyOp(StrEnum):
    """Operations that draw energy."""

    SEND = "send"
    RECEIVE = "receive"
    SIGN_VERIFY = "sign_verify"
    ENCRYPT_DECRYPT = "encrypt_decrypt"


@dataclass(frozen=True)
class EnergyCosts:
    """Units drawn per invocation of each operation."""

    send: float = 2.0
    receive: float = 1.0
    sign_verify: float = 5.0
    encrypt_decrypt: float = 3.0

    def cost(self, op: EnergyOp) -> float:
        """Price of one ``op``."""
        return getattr(self, op.value)


@dataclass
class EnergyBudget:
    """Remaining and consumed energy per node.

    Nodes absent from ``capacity`` are mains-powered and never run out.
    """

    costs: EnergyCosts = field(default_factory=EnergyCosts)
    capacity: dict[str, float] = field(default_factory=dict)
    consumed: defaultdict[str, float] = field(
        default_factory=lambda: defaultdict(float)
    )
    ledger: defaultdict[tuple[str, EnergyOp], float] = field(
        default_factory=lambda: defaultdict(float)
    )

    def remaining(self, node: str) -> float:
        """Energy left, ``inf`` for unbounded nodes."""
        if node not in self.capacity:
            return float("inf")
        return self.capacity[node] - self.consumed[node]

    def alive(self, node: str) -> bool:
        """Whether ``node`` still has energy."""
        return self.remaining(node) > 0

    def charge(self, node: str, op: EnergyOp, count: int = 1) -> bool:
        """Draw ``count`` operations' worth; return whether the node survives.

        The draw is capped at what is left, so remaining energy never goes
        negative.
        """
        if count <= 0:
            return self.alive(node)
        amount = min(self.costs.cost(op) * count, self.remaining(node))
        self.consumed[node] += amount
        self.ledger[node, op] += amount
        return self.alive(node)

    @property
    def total(self) -> float:
        """Energy consumed by all nodes."""
        return sum(self.consumed.values())
