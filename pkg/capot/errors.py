from __future__ import annotations

import re

MAX_ERROR_CHARS = 320


class CapotError(Exception):
    """Base error; `code` is the machine label, `exit_code` the CLI status."""

    code = "capot_error"
    exit_code = 2

    def __init__(self, message: str):
        super().__init__(message)
        self.message = message


class UsageError(CapotError):
    code = "usage_error"
    exit_code = 1


class DataError(CapotError, ValueError):
    code = "data_error"
    exit_code = 2


class ConfigError(DataError):
    code = "config_error"


class FrozenEncoderError(DataError):
    code = "frozen_encoder"


class BackendError(CapotError, RuntimeError):
    code = "backend_error"
    exit_code = 3


def sanitize_error(exc: BaseException, fallback: str) -> str:
    """Collapse an exception message onto one bounded line."""
    message = str(exc or "").strip()
    if not message:
        return fallback
    redacted = re.sub(r"(https?://)[^/@\s]+@", r"\1[REDACTED]@", message)
    redacted = " ".join(redacted.split())
    if len(redacted) > MAX_ERROR_CHARS:
        redacted = redacted[:MAX_ERROR_CHARS].rstrip() + "..."
    return redacted
