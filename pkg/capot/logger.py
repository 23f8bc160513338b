from __future__ import annotations

import logging
import sys
from typing import Optional

LOG_FORMAT = "%(asctime)s [%(levelname)s] %(name)s :: %(message)s"
HANDLER_NAMES = ("capot-file", "capot-stderr")


def configure_logging(log_file: Optional[str], stream_level: str = "WARNING") -> None:
    """Send INFO and above to the run log file and `stream_level` and above to stderr."""
    logger = logging.getLogger()
    logger.setLevel(logging.INFO)

    handler_exists = any(h.get_name() in HANDLER_NAMES for h in logger.handlers)
    if handler_exists:
        return

    formatter = logging.Formatter(LOG_FORMAT, datefmt="%Y-%m-%d %H:%M:%S")

    if log_file:
        file_handler = logging.FileHandler(log_file)
        file_handler.set_name("capot-file")
        file_handler.setFormatter(formatter)
        logger.addHandler(file_handler)

    stream_handler = logging.StreamHandler(sys.stderr)
    stream_handler.set_name("capot-stderr")
    stream_handler.setLevel(stream_level.upper())
    stream_handler.setFormatter(formatter)
    logger.addHandler(stream_handler)
