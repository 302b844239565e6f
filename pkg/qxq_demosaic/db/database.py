"""Database operations for the training run registry."""

import sqlite3
import time
from pathlib import Path
from typing import Optional

from ..errors import StateError
from .models import RUN_STATUSES, LogEntry, TrainingRun
from .schema import ALL_INDEXES, ALL_TABLES, SCHEMA_VERSION


class Database:
    """SQLite wrapper holding training runs and their log."""

    def __init__(self, db_path: str):
        self.db_path = Path(db_path)
        self.db_path.parent.mkdir(parents=True, exist_ok=True)
        self._conn: Optional[sqlite3.Connection] = None

    def _get_connection(self) -> sqlite3.Connection:
        if self._conn is None:
            self._conn = sqlite3.connect(str(self.db_path))
            self._conn.row_factory = sqlite3.Row
            self._conn.execute("PRAGMA foreign_keys = ON")
            self._conn.execute("PRAGMA journal_mode = WAL")
        return self._conn

    @property
    def conn(self) -> sqlite3.Connection:
        return self._get_connection()

    def close(self):
        if self._conn is not None:
            self._conn.close()
            self._conn = None

    def initialize(self):
        """Create tables; refuses a database written with another schema version."""
        cursor = self.conn.cursor()
        for table_sql in ALL_TABLES:
            cursor.execute(table_sql)
        for index_sql in ALL_INDEXES:
            cursor.execute(index_sql)

        cursor.execute("SELECT version FROM schema_version LIMIT 1")
        row = cursor.fetchone()
        if row is None:
            cursor.execute("INSERT INTO schema_version (version) VALUES (?)", (SCHEMA_VERSION,))
        elif row[0] != SCHEMA_VERSION:
            raise StateError(f"run database {self.db_path} has schema v{row[0]}, expected v{SCHEMA_VERSION}")
        self.conn.commit()

    # Runs

    def create_run(self, run: TrainingRun) -> TrainingRun:
        cursor = self.conn.cursor()
        now = int(time.time())
        try:
            cursor.execute(
                """
                INSERT INTO runs (
                    name, status, stage, phase, epoch, run_dir, config_json, started_at, updated_at
                ) VALUES (?, ?, ?, ?, ?, ?, ?, ?, ?)
                """,
                (run.name, run.status, run.stage, run.phase, run.epoch, run.run_dir, run.config_json, now, now),
            )
        except sqlite3.IntegrityError:
            raise StateError(f"a run named '{run.name}' already exists") from None
        self.conn.commit()
        run.id = cursor.lastrowid
        run.started_at = now
        run.updated_at = now
        return run

    def get_run(self, name: str) -> Optional[TrainingRun]:
        cursor = self.conn.cursor()
        cursor.execute("SELECT * FROM runs WHERE name = ?", (name,))
        row = cursor.fetchone()
        if row is None:
            return None
        return TrainingRun.from_row(dict(row))

    def get_all_runs(self) -> list[TrainingRun]:
        cursor = self.conn.cursor()
        cursor.execute("SELECT * FROM runs ORDER BY updated_at DESC, id DESC")
        return [TrainingRun.from_row(dict(row)) for row in cursor.fetchall()]

    def update_run(self, run: TrainingRun):
        cursor = self.conn.cursor()
        run.updated_at = int(time.time())
        cursor.execute(
            """
            UPDATE runs SET
                status = ?,
                stage = ?,
                phase = ?,
                epoch = ?,
                run_dir = ?,
                config_json = ?,
                updated_at = ?
            WHERE name = ?
            """,
            (run.status, run.stage, run.phase, run.epoch, run.run_dir, run.config_json, run.updated_at, run.name),
        )
        self.conn.commit()

    def set_run_status(self, name: str, status: str):
        if status not in RUN_STATUSES:
            raise StateError(f"unknown run status '{status}'")
        cursor = self.conn.cursor()
        cursor.execute(
            "UPDATE runs SET status = ?, updated_at = ? WHERE name = ?",
            (status, int(time.time()), name),
        )
        self.conn.commit()

    def delete_run(self, name: str) -> bool:
        cursor = self.conn.cursor()
        cursor.execute("DELETE FROM runs WHERE name = ?", (name,))
        deleted = cursor.rowcount > 0
        cursor.execute("DELETE FROM run_log WHERE run_name = ?", (name,))
        self.conn.commit()
        return deleted

    # Log

    def add_log(self, entry: LogEntry):
        cursor = self.conn.cursor()
        cursor.execute(
            "INSERT INTO run_log (run_name, timestamp, level, message) VALUES (?, ?, ?, ?)",
            (entry.run_name, entry.timestamp, entry.level, entry.message),
        )
        self.conn.commit()

    def get_logs(self, run_name: Optional[str] = None, limit: int = 100) -> list[LogEntry]:
        cursor = self.conn.cursor()
        if run_name:
            cursor.execute(
                "SELECT * FROM run_log WHERE run_name = ? ORDER BY timestamp DESC, id DESC LIMIT ?",
                (run_name, limit),
            )
        else:
            cursor.execute("SELECT * FROM run_log ORDER BY timestamp DESC, id DESC LIMIT ?", (limit,))
        return [
            LogEntry(
                id=row["id"],
                run_name=row["run_name"],
                timestamp=row["timestamp"],
                level=row["level"],
                message=row["message"],
            )
            for row in cursor.fetchall()
        ]
