"""structlog setup for the command line and the simulator trace file."""

from __future__ import annotations

import logging
import sys
from typing import TYPE_CHECKING, TextIO

import structlog

if TYPE_CHECKING:
    from structlog.typing import FilteringBoundLogger


def configure_logging(level: str = "warning", *, json_output: bool = False) -> None:
    """Install the processor chain; called once by the CLI, never by the library."""
    renderer = (
        structlog.processors.JSONRenderer()
        if json_output
        else structlog.dev.ConsoleRenderer(colors=False)
    )
    structlog.configure(
        processors=[
            structlog.contextvars.merge_contextvars,
            structlog.processors.add_log_level,
            structlog.processors.TimeStamper(fmt="iso"),
            renderer,
        ],
        wrapper_class=structlog.make_filtering_bound_logger(
            logging.getLevelNamesMapping()[level.upper()]
        ),
        logger_factory=structlog.WriteLoggerFactory(file=sys.stderr),
        cache_logger_on_first_use=False,
    )


def trace_logger(handle: TextIO) -> FilteringBoundLogger:
    """Per-event trace writer: sorted-key JSON lines, no timestamps.

    Identical runs write byte-identical traces.
    """
    return structlog.wrap_logger(
        structlog.WriteLogger(handle),
        processors=[structlog.processors.JSONRenderer(sort_keys=True)],
        wrapper_class=structlog.make_filtering_bound_logger(logging.DEBUG),
    )
