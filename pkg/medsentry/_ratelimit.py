"""Token buckets on the simulated clock, one per network origin."""

from __future__ import annotations

from dataclasses import dataclass, field


@dataclass
class TokenBucket:
    """A token bucket refilled continuously at ``rate_per_s``."""

    capacity: float
    rate_per_s: float
    tokens: float = -1.0
    last_ms: int = 0

    def __post_init__(self) -> None:
        """Start full."""
        if self.tokens < 0:
            self.tokens = self.capacity

    def _refill(self, now_ms: int) -> None:
        if now_ms > self.last_ms:
            earned = self.rate_per_s * (now_ms - self.last_ms) / 1000
            self.tokens = min(self.capacity, self.tokens + earned)
            self.last_ms = now_ms

    def consume(self, now_ms: int, count: float = 1) -> bool:
        """Take ``count`` tokens if available; return whether it succeeded."""
        self._refill(now_ms)
        if count <= self.tokens:
            self.tokens -= count
            return True
        return False


@dataclass
class RateLimiter:
    """Per-origin admission control in front of an expensive handler."""

    rate_per_s: float = 5.0
    burst: float = 10.0
    buckets: dict[str, TokenBucket] = field(default_factory=dict)

    def allow(self, origin: str, now_ms: int) -> bool:
        """Admit one request from ``origin`` at ``now_ms``."""
        bucket = self.buckets.get(origin)
        if bucket is None:
            bucket = TokenBucket(self.burst, self.rate_per_s, last_ms=now_ms)
            self.buckets[origin] = bucket
        return bucket.consume(now_ms)
