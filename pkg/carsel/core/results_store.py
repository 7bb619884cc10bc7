import json
import logging
import sqlite3
import threading
from datetime import datetime, timedelta
from typing import Dict, List, Optional

logger = logging.getLogger(__name__)


class ResultsStore:
    """SQLite ledger of benchmark runs, per-replicate results and resource samples"""

    def __init__(self, db_path: str = "carsel_runs.db"):
        self.db_path = db_path
        self.lock = threading.Lock()
        self.init_database()

    def init_database(self):
        """Initialize database with all required tables"""
        with self.lock:
            conn = sqlite3.connect(self.db_path)
            cursor = conn.cursor()

            cursor.execute('''
                CREATE TABLE IF NOT EXISTS runs (
                    run_id INTEGER PRIMARY KEY AUTOINCREMENT,
                    created DATETIME NOT NULL,
                    subcommand TEXT NOT NULL,
                    config_hash TEXT NOT NULL,
                    version TEXT NOT NULL,
                    config_json TEXT
                )
            ''')

            cursor.execute('''
                CREATE TABLE IF NOT EXISTS replicate_results (
                    id INTEGER PRIMARY KEY AUTOINCREMENT,
                    run_id INTEGER NOT NULL REFERENCES runs(run_id),
                    replicate INTEGER NOT NULL,
                    method TEXT NOT NULL,
                    model_size INTEGER,
                    tp_own_size INTEGER,
                    eta0 REAL,
                    null_scale REAL
                )
            ''')

            cursor.execute('''
                CREATE TABLE IF NOT EXISTS resource_samples (
                    id INTEGER PRIMARY KEY AUTOINCREMENT,
                    run_id INTEGER NOT NULL REFERENCES runs(run_id),
                    created DATETIME NOT NULL,
                    rss_mb REAL,
                    elapsed_s REAL
                )
            ''')

            conn.commit()
            conn.close()

    def start_run(self, subcommand: str, config_hash: str, version: str,
                  config: Optional[Dict] = None) -> Optional[int]:
        """Register a run; returns its id, or None when the ledger is unwritable"""
        with self.lock:
            try:
                conn = sqlite3.connect(self.db_path)
                cursor = conn.cursor()
                cursor.execute('''
                    INSERT INTO runs (created, subcommand, config_hash, version, config_json)
                    VALUES (?, ?, ?, ?, ?)
                ''', (datetime.now().isoformat(), subcommand, config_hash, version,
                      json.dumps(config, sort_keys=True) if config else None))
                run_id = cursor.lastrowid
                conn.commit()
                conn.close()
                return run_id
            except sqlite3.Error as e:
                logger.error("could not register run in %s: %s", self.db_path, e)
                return None

    def log_replicate(self, run_id: int, replicate: int, method: str,
                      model_size: Optional[int] = None, tp_own_size: Optional[int] = None,
                      eta0: Optional[float] = None, null_scale: Optional[float] = None) -> bool:
        """Record one method's outcome on one replicate"""
        with self.lock:
            try:
                conn = sqlite3.connect(self.db_path)
                cursor = conn.cursor()
                cursor.execute('''
                    INSERT INTO replicate_results
                    (run_id, replicate, method, model_size, tp_own_size, eta0, null_scale)
                    VALUES (?, ?, ?, ?, ?, ?, ?)
                ''', (run_id, replicate, method, model_size, tp_own_size, eta0, null_scale))
                conn.commit()
                conn.close()
                return True
            except sqlite3.Error as e:
                logger.error("could not log replicate %d (%s): %s", replicate, method, e)
                return False

    def log_resources(self, run_id: int, rss_mb: float, elapsed_s: float) -> bool:
        with self.lock:
            try:
                conn = sqlite3.connect(self.db_path)
                cursor = conn.cursor()
                cursor.execute('''
                    INSERT INTO resource_samples (run_id, created, rss_mb, elapsed_s)
                    VALUES (?, ?, ?, ?)
                ''', (run_id, datetime.now().isoformat(), rss_mb, elapsed_s))
                conn.commit()
                conn.close()
                return True
            except sqlite3.Error as e:
                logger.error("could not log resource sample: %s", e)
                return False

    def get_runs(self, limit: int = 100, subcommand: str = None) -> List[Dict]:
        """Most recent runs first"""
        with self.lock:
            conn = sqlite3.connect(self.db_path)
            cursor = conn.cursor()

            query = 'SELECT * FROM runs'
            params = []
            if subcommand:
                query += ' WHERE subcommand = ?'
                params.append(subcommand)
            query += ' ORDER BY run_id DESC LIMIT ?'
            params.append(limit)

            cursor.execute(query, params)
            rows = cursor.fetchall()
            columns = [desc[0] for desc in cursor.description]
            conn.close()

        runs = []
        for row in rows:
            run = dict(zip(columns, row))
            config_json = run.pop('config_json')
            run['config'] = json.loads(config_json) if config_json else None
            runs.append(run)
        return runs

    def get_replicates(self, run_id: int, method: str = None) -> List[Dict]:
        with self.lock:
            conn = sqlite3.connect(self.db_path)
            cursor = conn.cursor()

            query = '''
                SELECT replicate, method, model_size, tp_own_size, eta0, null_scale
                FROM replicate_results WHERE run_id = ?
            '''
            params = [run_id]
            if method:
                query += ' AND method = ?'
                params.append(method)
            query += ' ORDER BY replicate ASC, method ASC'

            cursor.execute(query, params)
            rows = cursor.fetchall()
            columns = [desc[0] for desc in cursor.description]
            conn.close()
        return [dict(zip(columns, row)) for row in rows]

    def get_statistics(self, run_id: int) -> Dict:
        """Per-method replicate counts, mean model size and mean TP, plus peak memory"""
        with self.lock:
            conn = sqlite3.connect(self.db_path)
            cursor = conn.cursor()

            cursor.execute('''
                SELECT method, COUNT(*), AVG(model_size), AVG(tp_own_size)
                FROM replicate_results WHERE run_id = ?
                GROUP BY method ORDER BY method
            ''', (run_id,))
            methods = {
                method: {'replicates': count, 'mean_model_size': size, 'mean_tp': tp}
                for method, count, size, tp in cursor.fetchall()
            }

            cursor.execute('''
                SELECT MAX(rss_mb), MAX(elapsed_s) FROM resource_samples WHERE run_id = ?
            ''', (run_id,))
            peak_rss, elapsed = cursor.fetchone()
            conn.close()

        return {
            'run_id': run_id,
            'methods': methods,
            'peak_rss_mb': peak_rss,
            'elapsed_s': elapsed,
        }

    def cleanup_old_runs(self, days: int = 30) -> int:
        """Delete runs older than ``days`` with their results; returns runs removed"""
        with self.lock:
            conn = sqlite3.connect(self.db_path)
            cursor = conn.cursor()

            cutoff = datetime.now() - timedelta(days=days)
            cursor.execute('SELECT run_id FROM runs WHERE created < ?', (cutoff.isoformat(),))
            stale = [row[0] for row in cursor.fetchall()]
            for table in ('replicate_results', 'resource_samples', 'runs'):
                cursor.executemany(f'DELETE FROM {table} WHERE run_id = ?',
                                   [(run_id,) for run_id in stale])

            conn.commit()
            conn.close()
        if stale:
            logger.info("removed %d runs older than %d days", len(stale), days)
        return len(stale)
