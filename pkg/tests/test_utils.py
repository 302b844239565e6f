import logging
import time
from datetime import datetime

import pytest

from qxq_demosaic.config import LoggingSection
from qxq_demosaic.errors import ConfigError
from qxq_demosaic.utils import (
    format_number,
    format_relative_time,
    format_timestamp,
    generate_run_name,
    sanitize_run_name,
    setup_logging,
)


def test_setup_logging_levels(tmp_path):
    logger = setup_logging(LoggingSection(level="warning", file=str(tmp_path / "logs" / "run.log")))
    assert logger.level == logging.WARNING
    assert len(logger.handlers) == 2
    logger.warning("disk nearly full")
    for handler in logger.handlers:
        handler.flush()
    assert "disk nearly full" in (tmp_path / "logs" / "run.log").read_text()
    assert len(setup_logging(LoggingSection(level="INFO")).handlers) == 1


def test_setup_logging_rejects_unknown_level():
    with pytest.raises(ConfigError):
        setup_logging(LoggingSection(level="chatty"))


@pytest.mark.parametrize(
    "name, expected",
    [("My Run!!", "my-run"), ("saturation-s1e-06-seed0", "saturation-s1e-06-seed0"), ("--a__b--", "a-b")],
)
def test_sanitize_run_name(name, expected):
    assert sanitize_run_name(name) == expected


def test_generate_run_name():
    assert generate_run_name("schedule", 3) == "schedule-seed3"
    assert generate_run_name("saturation", 0, 1e-6) == "saturation-s1e-06-seed0"


def test_format_helpers():
    assert format_number(1234567) == "1,234,567"
    assert format_relative_time(int(time.time()) - 7200) == "2 hours ago"
    assert format_timestamp(int(datetime(2024, 5, 1, 12, 30).timestamp())) == "2024-05-01 12:30:00"
