"""``medsentry`` command line: provision, run, bench, policy and report."""

from __future__ import annotations

import argparse
import os
import sys
from contextlib import ExitStack
from pathlib import Path
from typing import TYPE_CHECKING

import structlog

from medsentry._bench import PRIMITIVES, bench_all, bench_csv
from medsentry._datasets import IS_STORE_FILE, atomic_write, scan_split
from medsentry._ec import load_curve
from medsentry._logging import configure_logging, trace_logger
from medsentry._metrics import (
    failed_expectations,
    metrics_csv,
    read_metrics_csv,
    render_report,
)
from medsentry._netsim import run, run_many
from medsentry._policy import (
    PolicyRule,
    add_rule,
    default_rules,
    load_store,
    parse_rule,
    remove_rule,
    save_store,
)
from medsentry._registry import (
    DEPLOYMENT_FILE,
    POLICIES_FILE,
    ProtocolConfig,
    load_registry,
    provision,
    save_registry,
)
from medsentry._scenario import load_scenario
from medsentry._types import ConfigError, MedSentryError

if TYPE_CHECKING:
    from collections.abc import Sequence

    from medsentry._policy import StoreKey

logger = structlog.get_logger(__name__)

HOME_ENV = "MEDSENTRY_HOME"
EXIT_OK = 0
EXIT_FAILED = 1
EXIT_USAGE = 2


def data_home() -> Path:
    """``$MEDSENTRY_HOME`` or ``~/.medsentry``."""
    return Path(os.environ.get(HOME_ENV) or Path.home() / ".medsentry")


def _emit(text: str, out: Path | None) -> None:
    if out is None:
        sys.stdout.write(text)
    else:
        atomic_write(out, text)


def cmd_provision(args: argparse.Namespace) -> int:
    """Write a fresh deployment plus a permissive policy skeleton."""
    out: Path = args.out or data_home()
    config = ProtocolConfig()
    if args.curve is not None:
        config = ProtocolConfig(curve=load_curve(args.curve))
    registry = provision(args.sensors, args.seed, n_users=args.users, config=config)
    save_registry(registry, out, force=args.force)
    save_store(
        out / POLICIES_FILE, default_rules(), key=registry.policy_key(signing=True)
    )
    leaked = scan_split(out / IS_STORE_FILE)
    if leaked:
        msg = f"patient fields in the info store: {leaked}"
        raise ConfigError(IS_STORE_FILE, msg)
    sys.stdout.write(
        f"provisioned {len(registry.entities)} entities "
        f"({args.sensors} sensors, {args.users} users) in {out}\n"
    )
    return EXIT_OK


def cmd_run(args: argparse.Namespace) -> int:
    """Run every config of a scenario file and check its expectations."""
    scenario = load_scenario(args.scenario)
    configs = [
        c.model_copy(update={"seed": args.seed}) if args.seed is not None else c
        for c in scenario.runs
    ]
    with ExitStack() as stack:
        if args.trace is not None:
            handle = stack.enter_context(args.trace.open("w", encoding="utf-8"))
            trace = trace_logger(handle)
            results = [run(config, trace=trace) for config in configs]
        else:
            # Runs sharing a deployment append to one RS store, so they go in turn.
            shared = [c.deployment for c in configs if c.deployment is not None]
            workers = 1 if len(shared) != len(set(shared)) else args.jobs
            results = run_many(configs, workers=workers)
    _emit(metrics_csv(results), args.out)

    status = EXIT_OK
    for config, metrics in zip(configs, results, strict=True):
        if not metrics.balanced:
            status = EXIT_FAILED
            sys.stderr.write(f"{config.run_id}: envelope accounting is unbalanced\n")
        for failure in failed_expectations(config.expect, metrics):
            status = EXIT_FAILED
            sys.stderr.write(f"{config.run_id}: {failure}\n")
    return status


def cmd_bench(args: argparse.Namespace) -> int:
    """Time the primitives and print a CSV."""
    results = bench_all(args.primitive or PRIMITIVES, args.sizes, args.iterations)
    _emit(bench_csv(results), args.out)
    return EXIT_OK


def _store_path(args: argparse.Namespace) -> Path:
    return args.store or data_home() / POLICIES_FILE


def _store_key(path: Path) -> StoreKey | None:
    """The deployment IS key when the store sits in a provisioned folder."""
    if not (path.parent / DEPLOYMENT_FILE).exists():
        return None
    return load_registry(path.parent).policy_key(signing=True)


def cmd_policy(args: argparse.Namespace) -> int:
    """Add, list or remove rules in the policy store."""
    path = _store_path(args)
    key = _store_key(path)
    match args.action:
        case "add":
            rule = parse_rule(args.rule)
            add_rule(path, rule, key=key)
            sys.stdout.write(f"{rule.canonical()}\n")
        case "list":
            for entry in load_store(path, key=key):
                if isinstance(entry, PolicyRule):
                    sys.stdout.write(f"{entry.canonical()}\n")
                else:
                    sys.stdout.write(f"# malformed: {entry.raw}\n")
        case "remove":
            if not remove_rule(path, args.policy_id, key=key):
                msg = f"no policy named {args.policy_id!r}"
                raise ConfigError("policy_id", msg)
    return EXIT_OK


def cmd_report(args: argparse.Namespace) -> int:
    """Print the detection matrix and cost counters of a metrics CSV."""
    sys.stdout.write(render_report(read_metrics_csv(args.metrics)))
    return EXIT_OK


def _sizes(raw: str) -> list[int]:
    try:
        sizes = [int(part) for part in raw.split(",") if part]
    except ValueError:
        msg = f"sizes must be comma-separated integers, got {raw!r}"
        raise argparse.ArgumentTypeError(msg) from None
    if not sizes:
        msg = "at least one size is required"
        raise argparse.ArgumentTypeError(msg)
    return sizes


def build_parser() -> argparse.ArgumentParser:
    """The argument parser for every subcommand."""
    parser = argparse.ArgumentParser(
        prog="medsentry",
        description="Sensor-network authorization protocol: keys, runs, benchmarks.",
    )
    parser.add_argument(
        "--log-level",
        default="warning",
        choices=["debug", "info", "warning", "error"],
    )
    parser.add_argument("--log-json", action="store_true")
    commands = parser.add_subparsers(dest="command", required=True)

    prov = commands.add_parser("provision", help="generate keys, shares and IDs")
    prov.add_argument("sensors", type=int)
    prov.add_argument("--users", type=int, default=0)
    prov.add_argument("--seed", type=int, default=0)
    prov.add_argument("--curve", type=Path, help="curve constants as JSON hex")
    prov.add_argument("--out", type=Path)
    prov.add_argument("--force", action="store_true")
    prov.set_defaults(handler=cmd_provision)

    run_cmd = commands.add_parser("run", help="simulate a scenario file")
    run_cmd.add_argument("scenario", type=Path)
    run_cmd.add_argument("--seed", type=int)
    run_cmd.add_argument("--out", type=Path)
    run_cmd.add_argument("--jobs", type=int, default=1)
    run_cmd.add_argument("--trace", type=Path)
    run_cmd.set_defaults(handler=cmd_run)

    bench_cmd = commands.add_parser("bench", help="time the crypto primitives")
    bench_cmd.add_argument(
        "--primitive", action="append", choices=PRIMITIVES, dest="primitive"
    )
    bench_cmd.add_argument("--sizes", type=_sizes, default=[64, 1024, 4096])
    bench_cmd.add_argument("--iterations", type=int, default=100)
    bench_cmd.add_argument("--out", type=Path)
    bench_cmd.set_defaults(handler=cmd_bench)

    policy = commands.add_parser("policy", help="administer the policy store")
    policy.add_argument("--store", type=Path)
    policy_actions = policy.add_subparsers(dest="action", required=True)
    add = policy_actions.add_parser("add")
    add.add_argument("rule", help="rule as a JSON object")
    policy_actions.add_parser("list")
    remove = policy_actions.add_parser("remove")
    remove.add_argument("policy_id")
    policy.set_defaults(handler=cmd_policy)

    report = commands.add_parser("report", help="summarize a metrics CSV")
    report.add_argument("metrics", type=Path)
    report.set_defaults(handler=cmd_report)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    """Entry point; returns the process exit status."""
    parser = build_parser()
    args = parser.parse_args(argv)
    configure_logging(args.log_level, json_output=args.log_json)
    try:
        return args.handler(args)
    except (MedSentryError, OSError) as exc:
        logger.debug("command_failed", command=args.command, error=str(exc))
        sys.stderr.write(f"medsentry {args.command}: {exc}\n")
        return EXIT_USAGE
