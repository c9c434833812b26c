import datetime
import logging
import sqlite3
from contextlib import contextmanager
from pathlib import Path

logger = logging.getLogger(__name__)

CELL_COLUMNS = ["cell_id", "content_hash", "k", "n", "seed", "status", "started", "finished", "error", "record_path"]


@contextmanager
def get_db_connection(db_path):
    """Context manager for ledger connections"""
    conn = None
    try:
        conn = sqlite3.connect(str(db_path))
        yield conn
    except Exception as e:
        if conn:
            conn.rollback()
        logger.error(f"Ledger database error: {e}")
        raise
    finally:
        if conn:
            conn.close()


def _now():
    return datetime.datetime.now().isoformat()


def init_db(db_path):
    """Create the cells and events tables"""
    Path(db_path).parent.mkdir(parents=True, exist_ok=True)
    with get_db_connection(db_path) as conn:
        c = conn.cursor()
        c.execute("""CREATE TABLE IF NOT EXISTS cells (
            cell_id TEXT PRIMARY KEY,
            content_hash TEXT,
            k INTEGER,
            n INTEGER,
            seed INTEGER,
            status TEXT,
            started TEXT,
            finished TEXT,
            error TEXT,
            record_path TEXT
        )""")
        c.execute("""CREATE TABLE IF NOT EXISTS events (
            id INTEGER PRIMARY KEY AUTOINCREMENT,
            timestamp TEXT,
            cell_id TEXT,
            stage TEXT,
            detail TEXT
        )""")
        conn.commit()


def log_event(cell_id, stage, detail="", db_path="ledger.db"):
    """Append one event row"""
    with get_db_connection(db_path) as conn:
        conn.execute(
            "INSERT INTO events (timestamp, cell_id, stage, detail) VALUES (?, ?, ?, ?)",
            (_now(), cell_id, stage, str(detail)[:5000]),
        )
        conn.commit()


def get_cell(cell_id, db_path="ledger.db"):
    with get_db_connection(db_path) as conn:
        row = conn.execute(f"SELECT {', '.join(CELL_COLUMNS)} FROM cells WHERE cell_id = ?", (cell_id,)).fetchone()
        return dict(zip(CELL_COLUMNS, row)) if row else None


class RunLedger:
    """SQLite record of grid cells and their lifecycle events; one writer per process tree"""

    def __init__(self, db_path):
        self.db_path = Path(db_path)
        init_db(self.db_path)

    def mark_started(self, cell_id, content_hash, k, n, seed):
        with get_db_connection(self.db_path) as conn:
            conn.execute(
                """INSERT INTO cells (cell_id, content_hash, k, n, seed, status, started, finished, error, record_path)
                VALUES (?, ?, ?, ?, ?, 'running', ?, NULL, NULL, NULL)
                ON CONFLICT(cell_id) DO UPDATE SET
                    content_hash = excluded.content_hash, status = 'running', started = excluded.started,
                    finished = NULL, error = NULL, record_path = NULL""",
                (cell_id, content_hash, k, n, seed, _now()),
            )
            conn.commit()
        log_event(cell_id, "started", content_hash, self.db_path)

    def mark_completed(self, cell_id, record_path):
        with get_db_connection(self.db_path) as conn:
            conn.execute(
                "UPDATE cells SET status = 'completed', finished = ?, record_path = ? WHERE cell_id = ?",
                (_now(), str(record_path), cell_id),
            )
            conn.commit()
        log_event(cell_id, "completed", record_path, self.db_path)
        logger.info(f"Cell {cell_id} completed")

    def mark_failed(self, cell_id, error):
        with get_db_connection(self.db_path) as conn:
            conn.execute(
                "UPDATE cells SET status = 'failed', finished = ?, error = ? WHERE cell_id = ?",
                (_now(), str(error)[:5000], cell_id),
            )
            conn.commit()
        log_event(cell_id, "failed", error, self.db_path)
        logger.warning(f"Cell {cell_id} failed: {error}")

    def log_event(self, cell_id, stage, detail=""):
        log_event(cell_id, stage, detail, self.db_path)

    def get_cell(self, cell_id):
        return get_cell(cell_id, self.db_path)

    def is_complete(self, cell_id, content_hash):
        """True iff the cell completed with this content hash and its record still exists"""
        row = self.get_cell(cell_id)
        return bool(
            row
            and row["status"] == "completed"
            and row["content_hash"] == content_hash
            and row["record_path"]
            and Path(row["record_path"]).exists()
        )

    def cells(self, status=None):
        with get_db_connection(self.db_path) as conn:
            query = f"SELECT {', '.join(CELL_COLUMNS)} FROM cells"
            if status:
                rows = conn.execute(query + " WHERE status = ? ORDER BY cell_id", (status,)).fetchall()
            else:
                rows = conn.execute(query + " ORDER BY cell_id").fetchall()
        return [dict(zip(CELL_COLUMNS, row)) for row in rows]

    def events(self, cell_id=None, limit=100):
        with get_db_connection(self.db_path) as conn:
            if cell_id:
                rows = conn.execute(
                    "SELECT timestamp, cell_id, stage, detail FROM events WHERE cell_id = ? ORDER BY id DESC LIMIT ?",
                    (cell_id, limit),
                ).fetchall()
            else:
                rows = conn.execute(
                    "SELECT timestamp, cell_id, stage, detail FROM events ORDER BY id DESC LIMIT ?", (limit,)
                ).fetchall()
        return [dict(zip(["timestamp", "cell_id", "stage", "detail"], row)) for row in rows]
