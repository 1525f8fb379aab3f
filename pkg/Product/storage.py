import sqlite3
import json
import os
import sys
from datetime import datetime
from typing import Dict, Any, List, Optional

# Add parent directory to path to import config.py from project root
parent_dir = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
if parent_dir not in sys.path:
    sys.path.insert(0, parent_dir)

from config import Config


class ExperimentDatabase:
    """SQLite database holding the history of train/eval runs"""

    def __init__(self, db_path: str):
        self.db_path = db_path
        self.conn = None
        self.init_database()

    def init_database(self):
        """Create the runs table if it doesn't exist"""
        self.conn = sqlite3.connect(self.db_path, check_same_thread=False)
        self.conn.row_factory = sqlite3.Row

        cursor = self.conn.cursor()
        cursor.execute('''
            CREATE TABLE IF NOT EXISTS runs (
                run_id TEXT PRIMARY KEY,
                timestamp TEXT NOT NULL,
                command TEXT NOT NULL,
                status TEXT NOT NULL,
                metric_name TEXT,
                metric_value REAL,
                config_json TEXT NOT NULL,
                output_json TEXT NOT NULL,
                created_at TEXT DEFAULT CURRENT_TIMESTAMP
            )
        ''')
        cursor.execute('CREATE INDEX IF NOT EXISTS idx_runs_timestamp ON runs(timestamp DESC)')
        cursor.execute('CREATE INDEX IF NOT EXISTS idx_runs_command ON runs(command)')
        self.conn.commit()

    def close(self):
        """Close database connection"""
        if self.conn:
            self.conn.close()
            self.conn = None

    def __del__(self):
        self.close()


class RunStorage:
    """Persistent registry of experiment runs"""

    def __init__(self, db_path: str = None):
        """
        Args:
            db_path: Path to SQLite database file (default: Config.DB_PATH)
        """
        if db_path is None:
            db_path = Config.DB_PATH

        db_dir = os.path.dirname(db_path)
        if db_dir and not os.path.exists(db_dir):
            os.makedirs(db_dir, exist_ok=True)

        self.db = ExperimentDatabase(db_path)

    def save_run(
        self,
        command: str,
        config: Dict[str, Any],
        result: Dict[str, Any],
        run_id: str = None,
        status: str = "completed",
    ) -> str:
        """
        Save a run to the database

        Args:
            command: CLI command that produced the run (train, eval-lm, ...)
            config: Experiment configuration as a JSON-able dict
            result: Command output; 'metric_name' / 'metric_value' are indexed
            run_id: Optional run ID (generated if not provided)
            status: completed or failed

        Returns:
            Run ID
        """
        if not run_id:
            run_id = f"{command}_{datetime.now().strftime('%Y%m%d_%H%M%S_%f')}"

        cursor = self.db.conn.cursor()
        cursor.execute('''
            INSERT OR REPLACE INTO runs
            (run_id, timestamp, command, status, metric_name, metric_value, config_json, output_json)
            VALUES (?, ?, ?, ?, ?, ?, ?, ?)
        ''', (
            run_id,
            datetime.now().isoformat(),
            command,
            status,
            result.get('metric_name'),
            result.get('metric_value'),
            json.dumps(config),
            json.dumps(result),
        ))
        self.db.conn.commit()

        print(f"💾 Saved run {run_id} to database", file=sys.stderr)
        return run_id

    def load_run(self, run_id: str) -> Dict[str, Any]:
        """
        Load a run by ID

        Returns:
            Run data dictionary with config and output
        """
        cursor = self.db.conn.cursor()
        cursor.execute('''
            SELECT run_id, timestamp, command, status, config_json, output_json
            FROM runs
            WHERE run_id = ?
        ''', (run_id,))

        row = cursor.fetchone()
        if not row:
            raise FileNotFoundError(f"Run {run_id} not found in database")

        return {
            'run_id': row['run_id'],
            'timestamp': row['timestamp'],
            'command': row['command'],
            'status': row['status'],
            'config': json.loads(row['config_json']),
            'output': json.loads(row['output_json']),
        }

    def list_runs(self, limit: int = None, command: str = None) -> List[str]:
        """Run IDs ordered newest first, optionally filtered by command"""
        query = 'SELECT run_id FROM runs'
        params: List[Any] = []
        if command:
            query += ' WHERE command = ?'
            params.append(command)
        query += ' ORDER BY timestamp DESC'
        if limit:
            query += ' LIMIT ?'
            params.append(limit)

        cursor = self.db.conn.cursor()
        cursor.execute(query, params)
        return [row['run_id'] for row in cursor.fetchall()]

    def get_latest_run(self, command: str = None) -> Optional[Dict[str, Any]]:
        runs = self.list_runs(limit=1, command=command)
        if not runs:
            return None
        return self.load_run(runs[0])

    def get_run_history(self, limit: int = 10) -> List[Dict[str, Any]]:
        """Recent runs with summary information, newest first"""
        cursor = self.db.conn.cursor()
        cursor.execute('''
            SELECT run_id, timestamp, command, status, metric_name, metric_value
            FROM runs
            ORDER BY timestamp DESC
            LIMIT ?
        ''', (limit,))
        return [dict(row) for row in cursor.fetchall()]

    def get_run_statistics(self) -> Dict[str, Any]:
        """
        Statistics across all runs

        Returns:
            total_runs, runs_by_command, runs_by_status and the best (lowest)
            metric per command and metric name
        """
        cursor = self.db.conn.cursor()

        cursor.execute('SELECT COUNT(*) as total FROM runs')
        total_runs = cursor.fetchone()['total']

        cursor.execute('SELECT command, COUNT(*) as count FROM runs GROUP BY command')
        runs_by_command = {row['command']: row['count'] for row in cursor.fetchall()}

        cursor.execute('SELECT status, COUNT(*) as count FROM runs GROUP BY status')
        runs_by_status = {row['status']: row['count'] for row in cursor.fetchall()}

        # every stored metric (bpc, ppl) is lower-is-better except f1
        cursor.execute('''
            SELECT command, metric_name, MIN(metric_value) as best_min, MAX(metric_value) as best_max
            FROM runs
            WHERE metric_value IS NOT NULL AND status = 'completed'
            GROUP BY command, metric_name
        ''')
        best_metrics: Dict[str, Dict[str, float]] = {}
        for row in cursor.fetchall():
            best = row['best_max'] if row['metric_name'] == 'f1' else row['best_min']
            best_metrics.setdefault(row['command'], {})[row['metric_name']] = best

        return {
            'total_runs': total_runs,
            'runs_by_command': runs_by_command,
            'runs_by_status': runs_by_status,
            'best_metrics': best_metrics,
        }

    def delete_run(self, run_id: str):
        cursor = self.db.conn.cursor()
        cursor.execute('DELETE FROM runs WHERE run_id = ?', (run_id,))
        self.db.conn.commit()
        print(f"🗑️  Deleted run {run_id}", file=sys.stderr)

    def close(self):
        self.db.close()
