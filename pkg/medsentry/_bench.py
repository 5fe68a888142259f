"""Micro-benchmarks for the hash, signature and cipher primitives."""

from __future__ import annotations

import csv
import io
import random
import statistics
import time
from dataclasses import asdict, dataclass, fields
from typing import TYPE_CHECKING

import structlog

from medsentry._aes import KEY_BYTES, RoundConfig, encrypt_payload
from medsentry._ecdsa import keygen, sign
from medsentry._hashing import Digest
from medsentry._types import IV_BYTES, ParameterError

if TYPE_CHECKING:
    from collections.abc import Callable, Iterable

logger = structlog.get_logger(__name__)

PRIMITIVES = ("sha1", "llw", "ecdsa-sha1", "ecdsa-llw", "aes10", "aes12")
MIN_ITERATIONS = 100
WARMUP_ITERATIONS = 10


@dataclass(frozen=True)
class BenchResult:
    """Timing of one primitive at one input size.

    ``ns_per_op`` is the median of the timed iterations; ``total_ms`` their sum.
    """

    primitive: str
    size: int
    iterations: int
    total_ms: float
    ns_per_op: float


def _operation(primitive: str, payload: bytes) -> Callable[[], object]:
    rng = random.Random(len(payload))  # noqa: S311
    match primitive:
        case "sha1":
            return lambda: Digest.SHA1.compute(payload)
        case "llw":
            return lambda: Digest.LLW256.compute(payload)
        case "ecdsa-sha1" | "ecdsa-llw":
            digest = Digest.SHA1 if primitive == "ecdsa-sha1" else Digest.LLW256
            private = keygen(rng.randbytes(32)).private
            return lambda: sign(private, payload, digest)
        case "aes10" | "aes12":
            cfg = RoundConfig(10 if primitive == "aes10" else 12)
            key = rng.randbytes(KEY_BYTES)
            iv = rng.randbytes(IV_BYTES)
            return lambda: encrypt_payload(payload, key, cfg, iv)
        case _:
            choices = ", ".join(PRIMITIVES)
            msg = f"unknown primitive {primitive!r}; choose from {choices}"
            raise ParameterError(msg)


def bench(
    primitive: str,
    size: int,
    iterations: int = MIN_ITERATIONS,
    *,
    clock: Callable[[], int] = time.perf_counter_ns,
) -> BenchResult:
    """Time ``iterations`` runs of ``primitive`` on ``size`` bytes after a warmup."""
    if iterations < MIN_ITERATIONS:
        msg = f"iterations must be >= {MIN_ITERATIONS}, got {iterations}"
        raise ParameterError(msg)
    if size < 0:
        msg = f"size must not be negative, got {size}"
        raise ParameterError(msg)
    payload = random.Random(size).randbytes(size)  # noqa: S311
    operation = _operation(primitive, payload)
    for _ in range(WARMUP_ITERATIONS):
        operation()
    samples: list[int] = []
    for _ in range(iterations):
        start = clock()
        operation()
        samples.append(clock() - start)
    result = BenchResult(
        primitive=primitive,
        size=size,
        iterations=iterations,
        total_ms=sum(samples) / 1e6,
        ns_per_op=statistics.median(samples),
    )
    logger.debug("bench_finished", **asdict(result))
    return result


def bench_all(
    primitives: Iterable[str], sizes: Iterable[int], iterations: int = MIN_ITERATIONS
) -> list[BenchResult]:
    """One result per primitive and size, primitives outermost."""
    primitives = list(primitives)
    unknown = [p for p in primitives if p not in PRIMITIVES]
    if unknown:
        msg = f"unknown primitives {unknown}; choose from {', '.join(PRIMITIVES)}"
        raise ParameterError(msg)
    sizes = list(sizes)
    if not sizes:
        msg = "at least one size is required"
        raise ParameterError(msg)
    return [bench(p, s, iterations) for p in primitives for s in sizes]


def bench_csv(results: Iterable[BenchResult]) -> str:
    """CSV with one row per result."""
    buffer = io.StringIO()
    names = [f.name for f in fields(BenchResult)]
    writer = csv.DictWriter(buffer, fieldnames=names, lineterminator="\n")
    writer.writeheader()
    for result in results:
        writer.writerow(asdict(result))
    return buffer.getvalue()
