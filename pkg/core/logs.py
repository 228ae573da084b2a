from __future__ import annotations

import logging
import sys

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


def configure_logging(level: str = "WARNING", quiet: bool = False) -> None:
    """Send all package logs to stderr; ``quiet`` keeps only errors."""
    resolved = logging.ERROR if quiet else getattr(logging, str(level).upper(), logging.WARNING)
    root = logging.getLogger()
    for handler in list(root.handlers):
        if getattr(handler, "_sepcor", False):
            root.removeHandler(handler)
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter(LOG_FORMAT))
    handler._sepcor = True  # type: ignore[attr-defined]
    root.addHandler(handler)
    root.setLevel(resolved)
