#!/usr/bin/env python3
"""
Dashboard for the BETIS run registry.
Shows totals, recent runs and a health check of the estimates.
"""

import os
import sqlite3
from datetime import datetime, timedelta
from typing import Dict, List

from dotenv import load_dotenv

from harness import RunDatabase

load_dotenv()

# below this share of overestimated steps the filter looks miscalibrated
MIN_OVERESTIMATION = 0.85
LOG_STALE_AFTER = timedelta(hours=1)


class RunDashboard:
    """Dashboard over the SQLite registry written by `main.py run` and `main.py suite`."""

    def __init__(self, db_file: str = None, log_file: str = None):
        self.db_file = db_file or os.getenv("BETIS_DB_FILE", "runs.db")
        self.log_file = log_file or os.getenv("BETIS_LOG_FILE", "betis.log")

    def _database(self) -> RunDatabase:
        return RunDatabase(self.db_file)

    def get_recent_runs(self, limit: int = 10) -> List[Dict]:
        try:
            return self._database().get_run_summaries(limit)
        except sqlite3.Error as e:
            print(f"Database error: {e}")
            return []

    def get_total_stats(self) -> Dict:
        try:
            return self._database().get_total_stats()
        except sqlite3.Error as e:
            print(f"Database error: {e}")
            return {}

    def check_health(self) -> Dict:
        """Registry present, no degenerate evidence, estimates on the high side, log fresh."""
        health = {
            'status': 'healthy',
            'issues': [],
            'warnings': []
        }

        try:
            if not os.path.exists(self.db_file):
                health['status'] = 'error'
                health['issues'].append('Run registry not found')
                return health

            runs = self.get_recent_runs(50)
            if not runs:
                health['warnings'].append('No runs recorded yet')

            violations = sum(run['immunity_violations'] or 0 for run in runs)
            if violations:
                health['issues'].append(f'{violations} repeat entries into E across recent runs')

            degenerate = sum(run['degenerate_count'] or 0 for run in runs)
            if degenerate:
                health['warnings'].append(f'{degenerate} degenerate-evidence updates in recent runs')

            for run in runs:
                ratio = run['overestimation_I']
                if ratio is not None and ratio < MIN_OVERESTIMATION:
                    health['warnings'].append(
                        f"{run['scenario']} seed {run['seed']}: I overestimated at only {ratio:.0%} of steps"
                    )

            if os.path.exists(self.log_file):
                log_modified = datetime.fromtimestamp(os.path.getmtime(self.log_file))
                if datetime.now() - log_modified > LOG_STALE_AFTER:
                    health['warnings'].append('Log file not updated recently')
            else:
                health['warnings'].append('Log file not found')

            if health['issues']:
                health['status'] = 'error'
            elif health['warnings']:
                health['status'] = 'warning'

        except Exception as e:
            health['status'] = 'error'
            health['issues'].append(f'Health check failed: {str(e)}')

        return health

    def print_dashboard(self):
        """Print a formatted dashboard."""
        print("=" * 78)
        print("    BETIS RUN DASHBOARD")
        print("=" * 78)

        health = self.check_health()
        status_icon = "🟢" if health['status'] == 'healthy' else "🟡" if health['status'] == 'warning' else "🔴"
        print(f"\n{status_icon} Status: {health['status'].upper()}")

        if health['issues']:
            print("\n❌ Issues:")
            for issue in health['issues']:
                print(f"   • {issue}")

        if health['warnings']:
            print("\n⚠️ Warnings:")
            for warning in health['warnings']:
                print(f"   • {warning}")

        if health['status'] == 'error' and not os.path.exists(self.db_file):
            print("\n" + "=" * 78)
            return

        total_stats = self.get_total_stats()
        if total_stats:
            print(f"\n📊 TOTALS")
            print(f"   Runs: {total_stats['total_runs']} over {total_stats['scenarios']} scenarios")
            print(f"   Steps filtered: {total_stats['total_steps']}")
            print(f"   Compute time: {total_stats['total_duration_s']:.1f}s")
            if total_stats['avg_tp_fraction_I'] is not None:
                print(f"   Mean TP fraction (I): {total_stats['avg_tp_fraction_I']:.3f}")
            if total_stats['degenerate_updates']:
                print(f"   Degenerate updates: {total_stats['degenerate_updates']}")

        runs = self.get_recent_runs(10)
        if runs:
            print(f"\n🧪 RECENT RUNS (Last {len(runs)})")
            print(f"{'Scenario':<22} {'Seed':<6} {'Steps':<6} {'|dI|':<8} {'Over':<6} {'TP':<6} {'Pos/Rand':<9}")
            print("-" * 78)
            for run in runs:
                scenario = run['scenario'][:19] + "..." if len(run['scenario']) > 21 else run['scenario']
                over = f"{run['overestimation_I']:.2f}" if run['overestimation_I'] is not None else "-"
                tp = f"{run['tp_fraction_I']:.2f}" if run['tp_fraction_I'] is not None else "-"
                if run['random_expected']:
                    ratio = f"{run['positives'] / run['random_expected']:.1f}x"
                else:
                    ratio = "-"
                error = run['mean_abs_error_I'] if run['mean_abs_error_I'] is not None else 0.0
                print(f"{scenario:<22} {run['seed']:<6} {run['steps']:<6} {error:<8.1f} {over:<6} {tp:<6} {ratio:<9}")

        print("\n" + "=" * 78)
        print(f"Dashboard generated at: {datetime.now().strftime('%Y-%m-%d %H:%M:%S')}")
        print("=" * 78)


def main():
    """Main dashboard function."""
    dashboard = RunDashboard()

    try:
        dashboard.print_dashboard()
    except Exception as e:
        print(f"Error generating dashboard: {e}")
        print("Make sure at least one run has been recorded in the registry.")


if __name__ == "__main__":
    main()
