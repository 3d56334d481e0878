"""
SQLite ledger of segmentation runs.
Each segment/bench invocation gets a row that starts as 'running' and is
closed as 'finished' or 'error' with its estimates and timings.
"""
import sqlite3
from typing import Dict, List, Optional

DB_PATH = 'rsrg_runs.db'


def get_connection(db_path: str = DB_PATH):
    """Get database connection"""
    conn = sqlite3.connect(db_path)
    conn.row_factory = sqlite3.Row
    return conn


def init_database(db_path: str = DB_PATH):
    """Initialize database schema"""
    conn = get_connection(db_path)
    cursor = conn.cursor()

    cursor.execute('''
        CREATE TABLE IF NOT EXISTS runs (
            id INTEGER PRIMARY KEY AUTOINCREMENT,
            command TEXT NOT NULL,               -- 'segment' or 'bench'
            input TEXT NOT NULL,
            q INTEGER NOT NULL,
            R INTEGER NOT NULL,
            seed INTEGER NOT NULL,
            status TEXT NOT NULL,                -- 'running', 'finished', 'error'
            started_at INTEGER NOT NULL DEFAULT (strftime('%s','now')),
            ended_at INTEGER,
            alpha_R REAL,
            alpha_0 REAL,
            estimate_ms REAL,
            total_ms REAL,
            message TEXT
        )
    ''')
    cursor.execute('''
        CREATE INDEX IF NOT EXISTS idx_runs_started
        ON runs(started_at)
    ''')

    conn.commit()
    conn.close()


def create_run(db_path: str, command: str, input_path: str, q: int, R: int, seed: int) -> int:
    """Create a run record in 'running' state and return its ID"""
    conn = get_connection(db_path)
    cur = conn.cursor()
    cur.execute('''
        INSERT INTO runs(command, input, q, R, seed, status, started_at)
        VALUES (?, ?, ?, ?, ?, 'running', strftime('%s','now'))
    ''', (command, input_path, q, R, seed))
    conn.commit()
    run_id = cur.lastrowid
    conn.close()
    return run_id


def finish_run(db_path: str, run_id: int, status: str,
               alpha_R: Optional[float] = None, alpha_0: Optional[float] = None,
               estimate_ms: Optional[float] = None, total_ms: Optional[float] = None,
               message: Optional[str] = None):
    """Close a run as 'finished' or 'error' and store whatever results exist"""
    if status not in ('finished', 'error'):
        raise ValueError(f"status must be 'finished' or 'error', got {status!r}")
    conn = get_connection(db_path)
    cur = conn.cursor()
    cur.execute('''
        UPDATE runs
        SET status = ?, ended_at = strftime('%s','now'),
            alpha_R = ?, alpha_0 = ?, estimate_ms = ?, total_ms = ?, message = ?
        WHERE id = ?
    ''', (status, alpha_R, alpha_0, estimate_ms, total_ms, message, run_id))
    conn.commit()
    conn.close()


def get_runs(db_path: str = DB_PATH, limit: Optional[int] = 20) -> List[Dict]:
    """Most recent runs first"""
    conn = get_connection(db_path)
    cur = conn.cursor()
    query = '''
        SELECT id, command, input, q, R, seed, status, started_at, ended_at,
               alpha_R, alpha_0, estimate_ms, total_ms, message
        FROM runs
        ORDER BY id DESC
    '''
    params: List = []
    if limit:
        query += ' LIMIT ?'
        params.append(limit)
    cur.execute(query, params)
    rows = [dict(row) for row in cur.fetchall()]
    conn.close()
    return rows
