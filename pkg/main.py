#!/usr/bin/env python3
"""
BETIS command line.

Subcommands:
  simulate   ground truth + observation stream for one seed
  filter     replay the filter from an exported run directory
  run        simulate, filter and evaluate every seed of a scenario
  suite      run one experiment family (fig1, fig2, fig3 and their _limits variants)

Process settings come from the environment (a .env file is honoured):
BETIS_LOG_LEVEL, BETIS_LOG_FILE, BETIS_OUTPUT_DIR, BETIS_THREADS, BETIS_DB_FILE.
Command line flags override the environment, which overrides the config file.
"""

import argparse
import logging
import os
import sys
from typing import Any, Dict, List, Optional

from dotenv import load_dotenv

from betis_filter import write_beliefs_csv
from epidemic import ConfigurationError
from harness import (
    METRICS_FILE,
    PRESETS,
    SUITES,
    RunDatabase,
    export_simulation,
    load_config,
    replay,
    resolve_contact_model,
    run_directory,
    run_scenario,
    run_suite,
    simulate,
)
from metrics import summarize, write_metrics_csv
from observation import ReplayError

load_dotenv()

logger = logging.getLogger("betis")


def setup_logging(log_file: Optional[str] = None, level: Optional[str] = None):
    """Set up logging configuration."""
    log_file = log_file or os.getenv("BETIS_LOG_FILE", "betis.log")
    level = (level or os.getenv("BETIS_LOG_LEVEL") or os.getenv("LOG_LEVEL") or "INFO").upper()
    logging.basicConfig(
        level=getattr(logging, level, logging.INFO),
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
        handlers=[
            logging.FileHandler(log_file),
            logging.StreamHandler()
        ]
    )
    return logging.getLogger("betis")


def env_overrides() -> Dict[str, Any]:
    overrides: Dict[str, Any] = {}
    if os.getenv("BETIS_OUTPUT_DIR"):
        overrides["output_dir"] = os.getenv("BETIS_OUTPUT_DIR")
    if os.getenv("BETIS_THREADS"):
        try:
            overrides["threads"] = int(os.getenv("BETIS_THREADS"))
        except ValueError:
            raise ConfigurationError(f"BETIS_THREADS must be an integer, got {os.getenv('BETIS_THREADS')!r}") from None
    return overrides


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="betis", description="Epidemic simulation and per-user Bayesian filtering")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default="config.json", help="scenario JSON file")
    common.add_argument("--preset", choices=sorted(PRESETS), help="population-size preset (full is an alias of paper)")
    common.add_argument("--out", help="output root directory")
    common.add_argument("--threads", type=int, help="worker threads for the filter")
    common.add_argument("--dump-beliefs", action="store_true", help="also write beliefs.csv")
    common.add_argument("--no-registry", action="store_true", help="do not record runs in the SQLite registry")

    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("simulate", parents=[common], help="ground truth and observation stream")
    p.add_argument("--seed", type=int, help="master seed (default: first seed in the config)")
    p = sub.add_parser("filter", parents=[common], help="replay the filter from a run directory")
    p.add_argument("run_dir", help="directory written by `simulate` or `run`")
    p = sub.add_parser("run", parents=[common], help="end-to-end run")
    p.add_argument("--seed", type=int, help="run only this seed")
    p = sub.add_parser("suite", parents=[common], help="experiment family")
    p.add_argument("name", choices=SUITES)
    p.add_argument("--seeds", type=int, nargs="+", help="override the suite seeds")
    return parser


def _overrides(args: argparse.Namespace) -> Dict[str, Any]:
    overrides = env_overrides()
    if args.out:
        overrides["output_dir"] = args.out
    if args.threads is not None:
        overrides["threads"] = args.threads
    if args.dump_beliefs:
        overrides["dump_beliefs"] = True
    if getattr(args, "seed", None) is not None:
        overrides["seeds"] = [args.seed]
    return overrides


def _registry(args: argparse.Namespace) -> Optional[RunDatabase]:
    if args.no_registry:
        return None
    return RunDatabase(os.getenv("BETIS_DB_FILE", "runs.db"))


def _config_path(args: argparse.Namespace) -> Optional[str]:
    # a missing default config.json means "all defaults"
    if args.config == "config.json" and not os.path.exists(args.config):
        return None
    return args.config


def cmd_simulate(args: argparse.Namespace) -> int:
    cfg = load_config(_config_path(args), _overrides(args), args.preset)
    seed = cfg.seeds[0]
    sim = simulate(cfg, seed)
    f = resolve_contact_model(cfg, sim.snapshots)
    run_dir = run_directory(cfg, seed)
    export_simulation(sim, f, run_dir)
    logger.info(f"Observation stream for seed {seed} written to {run_dir} ({len(sim.times)} steps)")
    return 0


def cmd_filter(args: argparse.Namespace) -> int:
    cfg = None
    if args.config != "config.json" or args.preset:
        cfg = load_config(_config_path(args), _overrides(args), args.preset)
    result = replay(args.run_dir, cfg, threads=args.threads)
    if result.rows:
        path = os.path.join(args.out or args.run_dir, METRICS_FILE)
        os.makedirs(os.path.dirname(path), exist_ok=True)
        write_metrics_csv(result.rows, path)
        logger.info(f"Replay metrics written to {path}: {summarize(result.rows)}")
    if args.dump_beliefs:
        write_beliefs_csv(result.states, os.path.join(args.out or args.run_dir, "beliefs.csv"))
    return 0


def cmd_run(args: argparse.Namespace) -> int:
    cfg = load_config(_config_path(args), _overrides(args), args.preset)
    records = run_scenario(cfg, db=_registry(args))
    for record in records:
        logger.info(f"seed={record.seed}: {record.summary}")
    return 0


def cmd_suite(args: argparse.Namespace) -> int:
    overrides = _overrides(args)
    base = load_config(_config_path(args), overrides, args.preset)
    results = run_suite(args.name, base, threads=args.threads, db=_registry(args), seeds=args.seeds)
    for name, records in results.items():
        logger.info(f"{name}: {len(records)} runs")
    return 0


COMMANDS = {"simulate": cmd_simulate, "filter": cmd_filter, "run": cmd_run, "suite": cmd_suite}


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    setup_logging()
    try:
        return COMMANDS[args.command](args)
    except (ConfigurationError, ReplayError) as e:
        logger.error(f"❌ {e}")
        return 2
    except KeyboardInterrupt:
        logger.info("Stopped by user")
        return 1
    except Exception as e:
        logger.exception(f"❌ Unexpected error: {e}")
        return 1


if __name__ == "__main__":
    sys.exit(main())
