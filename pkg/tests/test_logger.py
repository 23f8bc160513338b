from __future__ import annotations

import logging

import pytest

from capot.logger import HANDLER_NAMES, configure_logging


@pytest.fixture
def root_logger():
    root = logging.getLogger()
    saved = list(root.handlers)
    level = root.level
    root.handlers = [h for h in saved if h.get_name() not in HANDLER_NAMES]
    yield root
    for handler in root.handlers:
        if handler not in saved:
            handler.close()
    root.handlers = saved
    root.setLevel(level)


def _ours(root: logging.Logger) -> list[str]:
    return [h.get_name() for h in root.handlers if h.get_name() in HANDLER_NAMES]


def test_repeated_calls_without_log_file_add_one_stream_handler(root_logger):
    configure_logging(None)
    configure_logging(None)
    configure_logging(None, "INFO")
    assert _ours(root_logger) == ["capot-stderr"]


def test_repeated_calls_with_log_file_add_each_handler_once(root_logger, tmp_path):
    log_file = tmp_path / "capot.log"
    configure_logging(str(log_file))
    configure_logging(str(log_file))
    assert _ours(root_logger) == ["capot-file", "capot-stderr"]

    logging.getLogger("capot.test").info("written once")
    for handler in root_logger.handlers:
        handler.flush()
    assert log_file.read_text(encoding="utf-8").count("written once") == 1
