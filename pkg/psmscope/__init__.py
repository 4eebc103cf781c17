"""psmscope: protocol state machine inference from mixed unknown-protocol traces."""
from __future__ import annotations

import logging
import sys

import structlog

__version__ = "0.3.0"


def _stderr_logger(*_args: object) -> structlog.PrintLogger:
    # sys.stderr is looked up per logger; it may be swapped after configuration.
    return structlog.PrintLogger(sys.stderr)


def configure_logging(level: str = "info", json: bool = False) -> None:
    """Configure structlog for CLI use; logs go to stderr so stdout stays clean."""
    renderer = structlog.processors.JSONRenderer() if json else structlog.dev.ConsoleRenderer()
    structlog.configure(
        processors=[
            structlog.stdlib.add_log_level,
            structlog.processors.TimeStamper(fmt="iso"),
            renderer,
        ],
        wrapper_class=structlog.make_filtering_bound_logger(
            logging.getLevelName(level.upper())
        ),
        logger_factory=_stderr_logger,
        cache_logger_on_first_use=False,
    )


configure_logging()
