from __future__ import annotations

from typing import Optional

from dotenv import load_dotenv

from .config import load_run_config
from .logger import configure_logging
from .runtime import Runtime


def create_runtime(config_path: Optional[str] = None, overrides: Optional[dict[str, str]] = None) -> Runtime:
    """Runtime factory."""
    load_dotenv()
    settings = load_run_config(config_path, overrides)
    settings.resolve_paths()

    configure_logging(settings.log_file, settings.log_level)
    return Runtime(settings=settings)


__all__ = ["Runtime", "create_runtime"]
