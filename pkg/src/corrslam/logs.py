"""Logging setup for the CLI and per-step phase timing."""
from __future__ import annotations

import logging
import time
from contextlib import contextmanager
from typing import Dict, Iterator

from rich.console import Console
from rich.logging import RichHandler

LOG_FORMAT = "%(name)s: %(message)s"


def configure_logging(level: int = logging.INFO) -> None:
    """Route library loggers to a rich handler on stderr (CLI only)."""
    handler = RichHandler(console=Console(stderr=True), show_path=False, rich_tracebacks=False)
    handler.setFormatter(logging.Formatter(LOG_FORMAT))
    root = logging.getLogger("corrslam")
    root.handlers[:] = [handler]
    root.setLevel(level)
    root.propagate = False


class PhaseTimer:
    """Accumulates wall time per named phase."""

    def __init__(self) -> None:
        self.seconds: Dict[str, float] = {}

    @contextmanager
    def phase(self, name: str) -> Iterator[None]:
        start = time.perf_counter()
        try:
            yield
        finally:
            self.seconds[name] = self.seconds.get(name, 0.0) + time.perf_counter() - start

    def as_dict(self) -> Dict[str, float]:
        return dict(self.seconds)
