from __future__ import annotations

import sqlite3
from contextlib import contextmanager
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Generator, Optional

CACHE_FILENAME = "rewrites.db"


@dataclass
class CachedRewrite:
    mode: str
    text: str
    rewritten: str
    backend: str
    created_at: datetime


class RewriteCache:
    """Disk cache of live rewrite-service responses keyed by (mode, text)."""

    def __init__(self, db_path: str):
        self.db_path = Path(db_path)
        self.db_path.parent.mkdir(parents=True, exist_ok=True)
        self._initialize()

    @classmethod
    def in_directory(cls, cache_dir: str) -> "RewriteCache":
        return cls(str(Path(cache_dir) / CACHE_FILENAME))

    def _initialize(self) -> None:
        with self._connection() as conn:
            conn.executescript(
                """
                CREATE TABLE IF NOT EXISTS rewrites (
                    mode TEXT NOT NULL,
                    text TEXT NOT NULL,
                    rewritten TEXT NOT NULL,
                    backend TEXT NOT NULL,
                    created_at TEXT NOT NULL,
                    PRIMARY KEY (mode, text)
                );
                """
            )
            conn.commit()

    @contextmanager
    def _connection(self) -> Generator[sqlite3.Connection, None, None]:
        conn = sqlite3.connect(self.db_path, timeout=30, isolation_level=None)
        conn.row_factory = sqlite3.Row
        try:
            yield conn
        finally:
            conn.close()

    def fetch(self, mode: str, text: str) -> Optional[CachedRewrite]:
        with self._connection() as conn:
            row = conn.execute(
                "SELECT * FROM rewrites WHERE mode = ? AND text = ?", (mode, text)
            ).fetchone()
            return self._row_to_rewrite(row) if row else None

    def store(self, mode: str, text: str, rewritten: str, backend: str) -> None:
        with self._connection() as conn:
            conn.execute("BEGIN EXCLUSIVE")
            try:
                conn.execute(
                    """
                    INSERT OR REPLACE INTO rewrites (mode, text, rewritten, backend, created_at)
                    VALUES (?, ?, ?, ?, ?)
                    """,
                    (mode, text, rewritten, backend, self._now_iso()),
                )
                conn.execute("COMMIT")
            except Exception:
                conn.execute("ROLLBACK")
                raise

    def count(self) -> int:
        with self._connection() as conn:
            return int(conn.execute("SELECT COUNT(*) FROM rewrites").fetchone()[0])

    def _row_to_rewrite(self, row: sqlite3.Row) -> CachedRewrite:
        return CachedRewrite(
            mode=row["mode"],
            text=row["text"],
            rewritten=row["rewritten"],
            backend=row["backend"],
            created_at=datetime.fromisoformat(row["created_at"]),
        )

    def _now_iso(self) -> str:
        return datetime.now(timezone.utc).isoformat()
