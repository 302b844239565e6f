"""Run registry for qxq-demosaic."""

from .database import Database
from .models import LogEntry, TrainingRun

__all__ = ["Database", "LogEntry", "TrainingRun"]
