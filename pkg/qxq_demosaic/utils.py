"""Utility functions for the QxQ demosaicing toolkit."""

import logging
import time
from datetime import datetime
from pathlib import Path
from typing import Optional

from .config import LoggingSection
from .errors import ConfigError

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


def setup_logging(cfg: LoggingSection) -> logging.Logger:
    """Configure the package logger from the ``logging`` config section."""
    level = logging.getLevelName(str(cfg.level).upper())
    if not isinstance(level, int):
        raise ConfigError(f"unknown log level '{cfg.level}'")

    logger = logging.getLogger("qxq_demosaic")
    logger.setLevel(level)
    for handler in list(logger.handlers):
        logger.removeHandler(handler)
        handler.close()

    console = logging.StreamHandler()
    console.setFormatter(logging.Formatter(LOG_FORMAT))
    logger.addHandler(console)
    if cfg.file:
        path = Path(cfg.file)
        path.parent.mkdir(parents=True, exist_ok=True)
        file_handler = logging.FileHandler(path, encoding="utf-8")
        file_handler.setFormatter(logging.Formatter(LOG_FORMAT))
        logger.addHandler(file_handler)
    logger.propagate = False
    return logger


def format_timestamp(timestamp: int) -> str:
    """Format a Unix timestamp as a human-readable string."""
    return datetime.fromtimestamp(timestamp).strftime("%Y-%m-%d %H:%M:%S")


def format_relative_time(timestamp: int) -> str:
    """Format a Unix timestamp as relative time (e.g., '2 minutes ago')."""
    now = int(time.time())
    diff = now - timestamp

    if diff < 60:
        return f"{diff} seconds ago"
    elif diff < 3600:
        minutes = diff // 60
        return f"{minutes} minute{'s' if minutes != 1 else ''} ago"
    elif diff < 86400:
        hours = diff // 3600
        return f"{hours} hour{'s' if hours != 1 else ''} ago"
    else:
        days = diff // 86400
        return f"{days} day{'s' if days != 1 else ''} ago"


def format_number(n: int) -> str:
    """Format a number with thousands separators."""
    return f"{n:,}"


def sanitize_run_name(name: str) -> str:
    """Sanitize a run name for use as a directory name and registry key."""
    sanitized = "".join(c if c.isalnum() or c in "-." else "-" for c in name.lower())
    while "--" in sanitized:
        sanitized = sanitized.replace("--", "-")
    return sanitized.strip("-.")


def generate_run_name(mode: str, seed: int, sigma: Optional[float] = None) -> str:
    """Default run name from the distillation mode and seed."""
    if mode == "saturation" and sigma is not None:
        return f"{mode}-s{sigma:g}-seed{seed}"
    return f"{mode}-seed{seed}"
