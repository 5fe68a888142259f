"""Delivery-ratio watchdog over forwarding nodes."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import structlog

logger = structlog.get_logger(__name__)


@dataclass
class Watchdog:
    """Flags a forwarder whose recent delivery ratio drops below ``threshold``.

    Neighbours overhear every packet handed to a forwarder and whether it was
    passed on; only the last ``window`` observations count.
    """

    threshold: float = 0.5
    window: int = 20
    history: dict[str, deque[bool]] = field(default_factory=dict)
    flagged: set[str] = field(default_factory=set)
    misses: int = 0

    def observe(self, node: str, *, forwarded: bool) -> bool:
        """Record one observation; return whether the node is now flagged."""
        seen = self.history.setdefault(node, deque(maxlen=self.window))
        seen.append(forwarded)
        if not forwarded:
            self.misses += 1
        if (
            node not in self.flagged
            and len(seen) == self.window
            and self.ratio(node) < self.threshold
        ):
            self.flagged.add(node)
            logger.info("forwarder_flagged", node=node, ratio=self.ratio(node))
        return node in self.flagged

    def ratio(self, node: str) -> float:
        """Fraction of observed packets ``node`` forwarded."""
        seen = self.history.get(node)
        if not seen:
            return 1.0
        return sum(seen) / len(seen)
