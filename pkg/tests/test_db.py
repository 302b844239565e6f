import sqlite3

import pytest

from qxq_demosaic.db import Database, LogEntry, TrainingRun
from qxq_demosaic.errors import StateError


@pytest.fixture
def db(tmp_path):
    database = Database(tmp_path / "runs.db")
    database.initialize()
    yield database
    database.close()


def test_create_and_get_run(db):
    run = db.create_run(TrainingRun(name="r1", run_dir="/tmp/r1", config_json="{}"))
    assert run.id is not None
    assert run.started_at is not None
    fetched = db.get_run("r1")
    assert (fetched.name, fetched.status, fetched.epoch) == ("r1", "idle", 0)
    assert db.get_run("nope") is None


def test_duplicate_run_name(db):
    db.create_run(TrainingRun(name="r1", run_dir="a"))
    with pytest.raises(StateError, match="r1"):
        db.create_run(TrainingRun(name="r1", run_dir="b"))


def test_update_run(db):
    run = db.create_run(TrainingRun(name="r1", run_dir="a"))
    run.stage, run.phase, run.epoch, run.status = "level0", "distill(1)", 6, "running"
    db.update_run(run)
    fetched = db.get_run("r1")
    assert (fetched.stage, fetched.phase, fetched.epoch, fetched.status) == ("level0", "distill(1)", 6, "running")


def test_set_run_status(db):
    db.create_run(TrainingRun(name="r1", run_dir="a"))
    db.set_run_status("r1", "paused")
    assert db.get_run("r1").status == "paused"
    with pytest.raises(StateError):
        db.set_run_status("r1", "sleeping")


def test_get_all_runs(db):
    for name in ("a", "b"):
        db.create_run(TrainingRun(name=name, run_dir=name))
    assert sorted(r.name for r in db.get_all_runs()) == ["a", "b"]


def test_delete_run_removes_logs(db):
    db.create_run(TrainingRun(name="r1", run_dir="a"))
    db.add_log(LogEntry.info("r1", "started"))
    assert db.delete_run("r1")
    assert not db.delete_run("r1")
    assert db.get_logs("r1") == []


def test_logs_newest_first(db):
    db.add_log(LogEntry(run_name="r1", timestamp=1, level="info", message="one"))
    db.add_log(LogEntry(run_name="r1", timestamp=2, level="warning", message="two"))
    db.add_log(LogEntry.error("r2", "other run"))
    logs = db.get_logs("r1")
    assert [entry.message for entry in logs] == ["two", "one"]
    assert len(db.get_logs(limit=1)) == 1
    assert len(db.get_logs()) == 3


def test_run_to_dict():
    run = TrainingRun(name="r", run_dir="d", stage="level1")
    assert run.to_dict()["stage"] == "level1"
    assert TrainingRun.from_row({**run.to_dict(), "id": 4}).id == 4


def test_records_schema_version(db):
    assert db.conn.execute("SELECT version FROM schema_version").fetchone()[0] == 1


def test_rejects_other_schema_version(tmp_path):
    path = tmp_path / "future.db"
    conn = sqlite3.connect(path)
    conn.execute("CREATE TABLE schema_version (version INTEGER PRIMARY KEY)")
    conn.execute("INSERT INTO schema_version (version) VALUES (7)")
    conn.commit()
    conn.close()

    db = Database(path)
    with pytest.raises(StateError, match="schema v7"):
        db.initialize()
    db.close()
