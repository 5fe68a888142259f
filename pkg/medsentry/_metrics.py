"""Run metrics, the metrics CSV and the text report built from it."""

from __future__ import annotations

import csv
import io
from collections import Counter
from dataclasses import dataclass, field
from typing import TYPE_CHECKING

from medsentry._scenario import AttackKind
from medsentry._types import ConfigError, RejectReason

if TYPE_CHECKING:
    from collections.abc import Iterable, Sequence
    from pathlib import Path

    from medsentry._scenario import Expectations

ROLES = ("sensor", "bs", "is", "rs")

# Published comparison figures per authorization session.
PUBLISHED_SENSOR_HASHES = 1
PUBLISHED_BS_HASHES = 2
PUBLISHED_TOTAL_HASHES = 3
PUBLISHED_REQUESTS = 6
PUBLISHED_BITS = 253

BASE_COLUMNS = (
    "run_id",
    "sessions",
    "delivered",
    "rejected_integrity",
    "rejected_freshness",
    "rejected_policy",
    "attacks_detected",
    "energy_total",
)
EXTRA_COLUMNS = (
    "sessions_completed",
    "sessions_denied",
    "sent",
    "dropped",
    "rejected_malformed",
    "rejected_rate_limited",
    "alarms",
    "envelopes",
    "bits_total",
    "energy_bs",
    "reroutes",
    "forged_reached_rs",
    *(f"injected_{kind}" for kind in AttackKind),
    *(f"detected_{kind}" for kind in AttackKind),
    *(f"hashes_{role}" for role in ROLES),
)
COLUMNS = BASE_COLUMNS + EXTRA_COLUMNS


@dataclass
class Metrics:
    """Counters of one simulation run.

    Every envelope handed to the network ends as exactly one of delivered,
    dropped or rejected.
    """

    run_id: str
    sessions: int = 0
    sessions_completed: int = 0
    sessions_denied: int = 0
    sent: int = 0
    delivered: int = 0
    dropped: int = 0
    rejected: Counter[RejectReason] = field(default_factory=Counter)
    alarms: int = 0
    envelopes: int = 0
    bits_total: int = 0
    reroutes: int = 0
    forged_reached_rs: int = 0
    injected: Counter[AttackKind] = field(default_factory=Counter)
    detected: Counter[AttackKind] = field(default_factory=Counter)
    energy: dict[str, float] = field(default_factory=dict)
    energy_bs: float = 0.0
    hashes: dict[str, int] = field(default_factory=lambda: dict.fromkeys(ROLES, 0))
    flagged: list[str] = field(default_factory=list)
    observed_plaintext: int = 0

    @property
    def rejected_total(self) -> int:
        """Rejections over all reasons."""
        return sum(self.rejected.values())

    @property
    def attacks_detected(self) -> int:
        """Detections over all attack kinds."""
        return sum(self.detected.values())

    @property
    def energy_total(self) -> float:
        """Energy consumed by every node."""
        return sum(self.energy.values())

    @property
    def balanced(self) -> bool:
        """Whether delivered + dropped + rejected accounts for every send."""
        return self.delivered + self.dropped + self.rejected_total == self.sent

    def row(self) -> dict[str, str]:
        """CSV row in :data:`COLUMNS` order."""
        values: dict[str, object] = {
            "run_id": self.run_id,
            "sessions": self.sessions,
            "delivered": self.delivered,
            "attacks_detected": self.attacks_detected,
            "energy_total": self.energy_total,
            "sessions_completed": self.sessions_completed,
            "sessions_denied": self.sessions_denied,
            "sent": self.sent,
            "dropped": self.dropped,
            "alarms": self.alarms,
            "envelopes": self.envelopes,
            "bits_total": self.bits_total,
            "energy_bs": self.energy_bs,
            "reroutes": self.reroutes,
            "forged_reached_rs": self.forged_reached_rs,
        }
        for reason in RejectReason:
            values[f"rejected_{reason}"] = self.rejected[reason]
        for kind in AttackKind:
            values[f"injected_{kind}"] = self.injected[kind]
            values[f"detected_{kind}"] = self.detected[kind]
        for role in ROLES:
            values[f"hashes_{role}"] = self.hashes[role]
        return {column: _fmt(values[column]) for column in COLUMNS}


def _fmt(value: object) -> str:
    if isinstance(value, float):
        return f"{value:.1f}"
    return str(value)


def metrics_csv(results: Iterable[Metrics]) -> str:
    """Header plus one row per run."""
    buffer = io.StringIO()
    writer = csv.DictWriter(buffer, fieldnames=COLUMNS, lineterminator="\n")
    writer.writeheader()
    for metrics in results:
        writer.writerow(metrics.row())
    return buffer.getvalue()


def read_metrics_csv(path: Path) -> list[dict[str, str]]:
    """Load rows written by :func:`metrics_csv`, checking the schema."""
    with path.open(encoding="utf-8", newline="") as handle:
        reader = csv.DictReader(handle)
        missing = [c for c in COLUMNS if c not in (reader.fieldnames or ())]
        if missing:
            raise ConfigError(str(path), f"missing columns: {', '.join(missing)}")
        return list(reader)


def _per_session(total: int, sessions: int) -> str:
    if sessions == 0:
        return "n/a"
    return f"{total / sessions:g}"


def render_report(rows: Sequence[dict[str, str]]) -> str:
    """Detection matrix, per-entity hash counters and comparison rows."""
    lines = ["Attack detection", ""]
    header = f"{'attack':<16}{'injected':>10}{'detected':>10}  status"
    lines.append(header)
    totals = {
        kind: (
            sum(int(r[f"injected_{kind}"]) for r in rows),
            sum(int(r[f"detected_{kind}"]) for r in rows),
        )
        for kind in AttackKind
    }
    for kind, (injected, detected) in totals.items():
        if injected == 0:
            status = "not exercised"
        elif detected == injected:
            status = "all detected"
        else:
            status = f"{injected - detected} undetected"
        lines.append(f"{kind:<16}{injected:>10}{detected:>10}  {status}")

    lines += ["", "Cost per completed session (runs without attacks)", ""]
    honest = [
        r for r in rows if all(int(r[f"injected_{kind}"]) == 0 for kind in AttackKind)
    ]
    completed = sum(int(r["sessions_completed"]) for r in honest)
    hashes = {role: sum(int(r[f"hashes_{role}"]) for r in honest) for role in ROLES}
    envelopes = sum(int(r["envelopes"]) for r in honest)
    bits = sum(int(r["bits_total"]) for r in honest)
    lines.append(f"{'counter':<18}{'measured':>12}{'published':>12}")
    lines.append(
        f"{'hashes sensor':<18}{_per_session(hashes['sensor'], completed):>12}"
        f"{PUBLISHED_SENSOR_HASHES:>12}"
    )
    lines.append(
        f"{'hashes bs':<18}{_per_session(hashes['bs'], completed):>12}"
        f"{PUBLISHED_BS_HASHES:>12}"
    )
    lines.append(
        f"{'hashes sensor+bs':<18}"
        f"{_per_session(hashes['sensor'] + hashes['bs'], completed):>12}"
        f"{PUBLISHED_TOTAL_HASHES:>12}"
    )
    for role in ("is", "rs"):
        measured = _per_session(hashes[role], completed)
        lines.append(f"{'hashes ' + role:<18}{measured:>12}{'-':>12}")
    lines.append(
        f"{'envelopes':<18}{_per_session(envelopes, completed):>12}"
        f"{PUBLISHED_REQUESTS:>12}"
    )
    lines.append(
        f"{'bits':<18}{_per_session(bits, completed):>12}{PUBLISHED_BITS:>12}"
    )
    lines.append("")
    lines.append("The published bit count has no breakdown; it is shown, not matched.")
    return "\n".join(lines) + "\n"


def failed_expectations(expect: Expectations, metrics: Metrics) -> list[str]:
    """Describe every expectation ``metrics`` misses; empty when all hold."""
    failures: list[str] = []

    def check(ok: bool, message: str) -> None:  # noqa: FBT001
        if not ok:
            failures.append(message)

    if expect.sessions_completed is not None:
        check(
            metrics.sessions_completed == expect.sessions_completed,
            f"sessions_completed {metrics.sessions_completed} "
            f"!= {expect.sessions_completed}",
        )
    if expect.min_completion_ratio is not None:
        ratio = (
            metrics.sessions_completed / metrics.sessions if metrics.sessions else 1.0
        )
        check(
            ratio >= expect.min_completion_ratio,
            f"completion ratio {ratio:.3f} < {expect.min_completion_ratio}",
        )
    if expect.envelopes is not None:
        check(
            metrics.envelopes == expect.envelopes,
            f"envelopes {metrics.envelopes} != {expect.envelopes}",
        )
    if expect.no_rejections:
        check(metrics.rejected_total == 0, f"rejections {dict(metrics.rejected)}")
    if expect.all_attacks_detected:
        for kind, injected in sorted(metrics.injected.items()):
            detected = metrics.detected[kind]
            check(detected == injected, f"{kind}: {detected} of {injected} detected")
    if expect.alarms_equal_drops:
        check(
            metrics.alarms == metrics.dropped,
            f"alarms {metrics.alarms} != drops {metrics.dropped}",
        )
    if expect.forged_reached_rs is not None:
        check(
            metrics.forged_reached_rs == expect.forged_reached_rs,
            f"forged_reached_rs {metrics.forged_reached_rs} "
            f"!= {expect.forged_reached_rs}",
        )
    if expect.flagged is not None:
        check(
            metrics.flagged == sorted(expect.flagged),
            f"flagged {metrics.flagged} != {sorted(expect.flagged)}",
        )
    for node, ceiling in sorted(expect.max_energy.items()):
        used = metrics.energy.get(node, 0.0)
        check(used <= ceiling, f"energy of {node} {used:.1f} > {ceiling}")
    for reason, count in sorted(expect.rejected.items()):
        seen = metrics.rejected[reason]
        check(seen == count, f"rejected_{reason} {seen} != {count}")
    return failures
