"""SQL schema for the training run registry."""

SCHEMA_VERSION = 1

CREATE_RUNS_TABLE = """
CREATE TABLE IF NOT EXISTS runs (
    id INTEGER PRIMARY KEY,
    name TEXT UNIQUE NOT NULL,
    status TEXT DEFAULT 'idle',
    stage TEXT,
    phase TEXT,
    epoch INTEGER DEFAULT 0,
    run_dir TEXT NOT NULL,
    config_json TEXT,
    started_at INTEGER,
    updated_at INTEGER
);
"""

CREATE_RUN_LOG_TABLE = """
CREATE TABLE IF NOT EXISTS run_log (
    id INTEGER PRIMARY KEY AUTOINCREMENT,
    run_name TEXT NOT NULL,
    timestamp INTEGER NOT NULL,
    level TEXT NOT NULL,
    message TEXT NOT NULL
);
"""

CREATE_RUN_LOG_INDEXES = [
    "CREATE INDEX IF NOT EXISTS idx_log_run ON run_log(run_name);",
    "CREATE INDEX IF NOT EXISTS idx_log_timestamp ON run_log(timestamp);",
]

CREATE_SCHEMA_VERSION_TABLE = """
CREATE TABLE IF NOT EXISTS schema_version (
    version INTEGER PRIMARY KEY
);
"""

ALL_TABLES = [
    CREATE_RUNS_TABLE,
    CREATE_RUN_LOG_TABLE,
    CREATE_SCHEMA_VERSION_TABLE,
]

ALL_INDEXES = CREATE_RUN_LOG_INDEXES
