# src/dtorus/logging_utils.py
"""
Application-wide logging utilities.

Purpose:
- One logging configuration for every stage (flow integration, dichotomy
  certificates, quadrature, torus sampling).
- Console output goes to stderr: stdout is reserved for the data products
  (CSV/JSON) the CLI may stream.
- Optional file log for long torus runs.

Every module logs through its own namespaced logger ("dtorus.flow",
"dtorus.green", ...) with key=value telemetry lines, so a run log can be
filtered per stage.
"""
from __future__ import annotations

import logging
import sys
from pathlib import Path
from typing import Optional

LOG_FORMAT = "%(asctime)s | %(levelname)s | %(name)s | %(message)s"


def setup_logging(
    level: str = "INFO",
    log_file: Optional[Path] = None,
) -> None:
    """
    Configure application logging.
    - Logs to stderr (console)
    - Optionally also logs to a file
    Calling it again replaces the handlers (the CLI may run several times in one
    process, e.g. under pytest).
    """
    log_level = getattr(logging, level.upper(), logging.INFO)

    handlers: list[logging.Handler] = []

    console = logging.StreamHandler(sys.stderr)
    console.setLevel(log_level)
    handlers.append(console)

    if log_file is not None:
        log_file.parent.mkdir(parents=True, exist_ok=True)
        file_handler = logging.FileHandler(log_file, encoding="utf-8")
        file_handler.setLevel(log_level)
        handlers.append(file_handler)

    logging.basicConfig(
        level=log_level,
        handlers=handlers,
        format=LOG_FORMAT,
        force=True,
    )
