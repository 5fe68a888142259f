"""Shamir threshold secret sharing over a prime field."""

from __future__ import annotations

import random
from dataclasses import dataclass
from typing import TYPE_CHECKING

from medsentry._types import (
    DegenerateShareError,
    InsufficientSharesError,
    ParameterError,
)

if TYPE_CHECKING:
    from collections.abc import Sequence

# Largest prime below 2**256.
PRIME_256 = 2**256 - 189
DEFAULT_THRESHOLD = 3


@dataclass(frozen=True)
class Share:
    """One evaluation ``(x, f(x))`` of the sharing polynomial."""

    x: int
    y: int


@dataclass(frozen=True)
class MasterSecret:
    """The shared secret ``f(0)``."""

    value: int


def polynomial(
    secret: MasterSecret, t: int, seed: int | bytes, prime: int = PRIME_256
) -> list[int]:
    """Coefficients ``[secret, c1, ..., c_{t-1}]`` drawn from ``seed``."""
    rng = random.Random(seed)  # noqa: S311
    return [secret.value] + [rng.randrange(prime) for _ in range(t - 1)]


def _evaluate(coefficients: Sequence[int], x: int, prime: int) -> int:
    acc = 0
    for c in reversed(coefficients):
        acc = (acc * x + c) % prime
    return acc


def split(
    secret: MasterSecret,
    n: int,
    t: int,
    seed: int | bytes,
    prime: int = PRIME_256,
) -> list[Share]:
    """Split ``secret`` into ``n`` shares at ``x = 1..n``; any ``t`` recover it."""
    if not 0 <= secret.value < prime:
        msg = "secret is not a field element"
        raise ParameterError(msg)
    if t < 1 or t > n:
        msg = f"threshold must satisfy 1 <= t <= n, got t={t}, n={n}"
        raise ParameterError(msg)
    if n >= prime:
        msg = f"n={n} leaves no room for distinct nonzero points mod {prime}"
        raise ParameterError(msg)
    coefficients = polynomial(secret, t, seed, prime)
    return [Share(x, _evaluate(coefficients, x, prime)) for x in range(1, n + 1)]


def reconstruct(
    shares: Sequence[Share], t: int, prime: int = PRIME_256
) -> MasterSecret:
    """Lagrange-interpolate the supplied shares at zero.

    A forged ``y`` is not detected here; it simply yields a different value.
    """
    if len(shares) < t:
        msg = f"need {t} shares, got {len(shares)}"
        raise InsufficientSharesError(msg)
    xs = [share.x % prime for share in shares]
    if 0 in xs:
        msg = "share evaluated at x = 0"
        raise DegenerateShareError(msg)
    if len(set(xs)) != len(xs):
        msg = "two shares use the same evaluation point"
        raise DegenerateShareError(msg)
    total = 0
    for i, share in enumerate(shares):
        numerator, denominator = 1, 1
        for j, xj in enumerate(xs):
            if i != j:
                numerator = numerator * -xj % prime
                denominator = denominator * (xs[i] - xj) % prime
        total += share.y * numerator * pow(denominator, -1, prime)
    return MasterSecret(total % prime)
