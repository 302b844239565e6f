"""Data classes for the training run registry."""

import time
from dataclasses import dataclass
from typing import Optional

RUN_STATUSES = ("idle", "running", "paused", "completed", "failed")


@dataclass
class TrainingRun:
    """A training run and how far it got."""

    name: str
    run_dir: str
    status: str = "idle"  # idle, running, paused, completed, failed
    stage: Optional[str] = None  # level1, teacher, level0, done
    phase: Optional[str] = None  # e.g. solo, distill(2)
    epoch: int = 0
    config_json: Optional[str] = None  # resolved run config
    started_at: Optional[int] = None
    updated_at: Optional[int] = None
    id: Optional[int] = None

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "run_dir": self.run_dir,
            "status": self.status,
            "stage": self.stage,
            "phase": self.phase,
            "epoch": self.epoch,
            "config_json": self.config_json,
            "started_at": self.started_at,
            "updated_at": self.updated_at,
        }

    @classmethod
    def from_row(cls, row: dict) -> "TrainingRun":
        return cls(
            id=row.get("id"),
            name=row["name"],
            run_dir=row["run_dir"],
            status=row.get("status", "idle") or "idle",
            stage=row.get("stage"),
            phase=row.get("phase"),
            epoch=row.get("epoch", 0) or 0,
            config_json=row.get("config_json"),
            started_at=row.get("started_at"),
            updated_at=row.get("updated_at"),
        )


@dataclass
class LogEntry:
    """A run log entry."""

    run_name: str
    timestamp: int
    level: str  # info, warning, error
    message: str
    id: Optional[int] = None

    @classmethod
    def info(cls, run_name: str, message: str) -> "LogEntry":
        return cls(run_name=run_name, timestamp=int(time.time()), level="info", message=message)

    @classmethod
    def warning(cls, run_name: str, message: str) -> "LogEntry":
        return cls(run_name=run_name, timestamp=int(time.time()), level="warning", message=message)

    @classmethod
    def error(cls, run_name: str, message: str) -> "LogEntry":
        return cls(run_name=run_name, timestamp=int(time.time()), level="error", message=message)
