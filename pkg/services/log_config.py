"""Centralized logging: console handler plus an optional SQLite run log.

Console output goes to stderr. When a run writes artifacts, setup_logging()
also attaches a SQLiteLogHandler that persists records to the app_logs table
of <output_dir>/harness_logs.db so a finished run can be queried later.
"""

import json
import logging
import sqlite3
import threading
from datetime import datetime, timezone
from pathlib import Path

_BATCH_SIZE = 10

LOG_FORMAT = "%(asctime)s  %(levelname)-8s  %(name)s.%(funcName)s  %(message)s"

_SCHEMA = """
CREATE TABLE IF NOT EXISTS app_logs (
    id INTEGER PRIMARY KEY AUTOINCREMENT,
    timestamp TEXT NOT NULL,
    level TEXT NOT NULL,
    module TEXT NOT NULL,
    function TEXT NOT NULL,
    message TEXT NOT NULL,
    metadata TEXT NOT NULL DEFAULT '{}'
)
"""


class SQLiteLogHandler(logging.Handler):
    """Logging handler that writes records to an app_logs SQLite table.

    Batches inserts: flushes every _BATCH_SIZE records or immediately on
    WARNING and above.
    """

    def __init__(self, db_path: str | Path):
        super().__init__()
        self.db_path = Path(db_path)
        self._buffer: list[tuple] = []
        self._lock = threading.Lock()
        self.db_path.parent.mkdir(parents=True, exist_ok=True)
        conn = self._get_conn()
        try:
            conn.execute(_SCHEMA)
            conn.commit()
        finally:
            conn.close()

    def _get_conn(self) -> sqlite3.Connection:
        conn = sqlite3.connect(str(self.db_path), timeout=5)
        conn.execute("PRAGMA busy_timeout = 3000")
        return conn

    def emit(self, record: logging.LogRecord):
        try:
            metadata = getattr(record, "log_metadata", None) or {}
            row = (
                datetime.now(timezone.utc).isoformat(timespec="seconds"),
                record.levelname,
                record.module,
                record.funcName or "",
                self.format(record),
                json.dumps(metadata, sort_keys=True, default=str),
            )
            with self._lock:
                self._buffer.append(row)
                if record.levelno >= logging.WARNING or len(self._buffer) >= _BATCH_SIZE:
                    self._flush_buffer()
        except Exception:
            self.handleError(record)

    def _flush_buffer(self):
        """Write buffered records. Caller must hold self._lock."""
        if not self._buffer:
            return
        rows = list(self._buffer)
        self._buffer.clear()
        conn = self._get_conn()
        try:
            conn.executemany(
                "INSERT INTO app_logs (timestamp, level, module, function, message, metadata)"
                " VALUES (?, ?, ?, ?, ?, ?)",
                rows,
            )
            conn.commit()
        finally:
            conn.close()

    def flush(self):
        with self._lock:
            self._flush_buffer()

    def close(self):
        self.flush()
        super().close()


def setup_logging(level: int = logging.INFO, log_db: str | Path | None = None):
    """Configure the root logger with a console handler and, optionally, SQLite.

    Safe to call multiple times: the console handler is added once and a
    SQLite handler once per database path.
    """
    root = logging.getLogger()
    root.setLevel(level)
    fmt = logging.Formatter(LOG_FORMAT, datefmt="%H:%M:%S")

    if not any(getattr(h, "_oppo_console", False) for h in root.handlers):
        console = logging.StreamHandler()
        console.setFormatter(fmt)
        console._oppo_console = True
        root.addHandler(console)
    for h in root.handlers:
        if getattr(h, "_oppo_console", False):
            h.setLevel(level)

    if log_db is not None:
        log_db = Path(log_db).resolve()
        if not any(isinstance(h, SQLiteLogHandler) and h.db_path.resolve() == log_db for h in root.handlers):
            db_handler = SQLiteLogHandler(log_db)
            db_handler.setLevel(level)
            db_handler.setFormatter(fmt)
            root.addHandler(db_handler)

    for name in ("numexpr", "matplotlib"):
        logging.getLogger(name).setLevel(logging.WARNING)


def detach_log_db(log_db: str | Path):
    """Flush and remove the SQLite handler for one database, if attached."""
    root = logging.getLogger()
    target = Path(log_db).resolve()
    for h in list(root.handlers):
        if isinstance(h, SQLiteLogHandler) and h.db_path.resolve() == target:
            root.removeHandler(h)
            h.close()


def get_logs(db_path: str | Path, level: str = "", module: str = "", limit: int = 100) -> list[dict]:
    """Query a run's app_logs table, newest first.

    Args:
        db_path: harness_logs.db of a run.
        level: Filter by log level (e.g. 'WARNING'). Empty = all levels.
        module: Filter by module name substring. Empty = all modules.
        limit: Max rows to return.
    """
    for h in logging.getLogger().handlers:
        if isinstance(h, SQLiteLogHandler):
            h.flush()

    clauses = []
    params: list = []
    if level:
        clauses.append("level = ?")
        params.append(level)
    if module:
        clauses.append("module LIKE ?")
        params.append(f"%{module}%")
    where = (" WHERE " + " AND ".join(clauses)) if clauses else ""
    params.append(limit)

    conn = sqlite3.connect(str(db_path), timeout=5)
    try:
        conn.row_factory = sqlite3.Row
        rows = conn.execute(f"SELECT * FROM app_logs{where} ORDER BY id DESC LIMIT ?", params).fetchall()
        return [dict(r) for r in rows]
    finally:
        conn.close()
