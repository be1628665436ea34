"""
ssep-lab Run Store
SQLite registry of CLI runs: manifest, exit code and the error-table rows they produced.
"""

import json
import logging
import os
import sqlite3
import uuid
from datetime import datetime
from typing import Iterable, Optional

log = logging.getLogger(__name__)

DB_NAME = "runs.db"

ERROR_COLUMNS = (
    "n", "t", "observable", "engine",
    "particle_value", "particle_stderr", "gaussian_value", "abs_error",
)


class RunStore:
    """Run registry kept next to the experiment outputs."""

    def __init__(self, db_path: str):
        os.makedirs(os.path.dirname(os.path.abspath(db_path)), exist_ok=True)
        self.conn = sqlite3.connect(db_path)
        self.conn.row_factory = sqlite3.Row
        self.conn.execute("PRAGMA journal_mode=WAL")
        self.conn.execute("PRAGMA foreign_keys=ON")
        self._create_tables()

    @classmethod
    def in_directory(cls, out_dir: str) -> "RunStore":
        return cls(os.path.join(out_dir, DB_NAME))

    def _create_tables(self):
        self.conn.executescript("""
            CREATE TABLE IF NOT EXISTS runs (
                id TEXT PRIMARY KEY,
                command TEXT NOT NULL,
                config_hash TEXT NOT NULL,
                master_seed INTEGER NOT NULL,
                started_at TEXT NOT NULL,
                finished_at TEXT,
                exit_code INTEGER,
                manifest TEXT
            );

            CREATE TABLE IF NOT EXISTS error_rows (
                id INTEGER PRIMARY KEY AUTOINCREMENT,
                run_id TEXT NOT NULL,
                n INTEGER NOT NULL,
                t REAL NOT NULL,
                observable TEXT NOT NULL,
                engine TEXT NOT NULL,
                particle_value REAL NOT NULL,
                particle_stderr REAL NOT NULL,
                gaussian_value REAL NOT NULL,
                abs_error REAL NOT NULL,
                FOREIGN KEY (run_id) REFERENCES runs(id) ON DELETE CASCADE
            );

            CREATE INDEX IF NOT EXISTS idx_runs_hash ON runs(config_hash);
            CREATE INDEX IF NOT EXISTS idx_error_rows_run ON error_rows(run_id);
        """)
        self.conn.commit()

    # ------------------------------------------------------------------ #
    #  Runs                                                               #
    # ------------------------------------------------------------------ #

    def start_run(self, command: str, config_hash: str, master_seed: int) -> str:
        run_id = str(uuid.uuid4())
        self.conn.execute(
            "INSERT INTO runs (id, command, config_hash, master_seed, started_at) VALUES (?, ?, ?, ?, ?)",
            (run_id, command, config_hash, master_seed, datetime.now().isoformat()),
        )
        self.conn.commit()
        return run_id

    def finish_run(self, run_id: str, exit_code: int, manifest: Optional[dict] = None):
        self.conn.execute(
            "UPDATE runs SET finished_at = ?, exit_code = ?, manifest = ? WHERE id = ?",
            (datetime.now().isoformat(), exit_code, json.dumps(manifest, sort_keys=True) if manifest else None, run_id),
        )
        self.conn.commit()

    def get_run(self, run_id: str) -> Optional[dict]:
        row = self.conn.execute("SELECT * FROM runs WHERE id = ?", (run_id,)).fetchone()
        if not row:
            return None
        run = dict(row)
        run["manifest"] = json.loads(run["manifest"]) if run["manifest"] else None
        return run

    def runs_for_config(self, config_hash: str) -> list[dict]:
        cursor = self.conn.execute(
            "SELECT id, command, started_at, exit_code FROM runs WHERE config_hash = ? ORDER BY started_at ASC",
            (config_hash,),
        )
        return [dict(row) for row in cursor.fetchall()]

    def delete_run(self, run_id: str):
        self.conn.execute("DELETE FROM runs WHERE id = ?", (run_id,))
        self.conn.commit()

    # ------------------------------------------------------------------ #
    #  Error rows                                                         #
    # ------------------------------------------------------------------ #

    def add_error_rows(self, run_id: str, rows: Iterable[dict]):
        placeholders = ", ".join("?" for _ in ERROR_COLUMNS)
        self.conn.executemany(
            f"INSERT INTO error_rows (run_id, {', '.join(ERROR_COLUMNS)}) VALUES (?, {placeholders})",
            [(run_id, *(row[c] for c in ERROR_COLUMNS)) for row in rows],
        )
        self.conn.commit()

    def error_rows(self, run_id: str) -> list[dict]:
        cursor = self.conn.execute(
            f"SELECT {', '.join(ERROR_COLUMNS)} FROM error_rows WHERE run_id = ? ORDER BY id ASC",
            (run_id,),
        )
        return [dict(row) for row in cursor.fetchall()]

    def close(self):
        self.conn.close()
