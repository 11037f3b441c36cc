"""
Scenario orchestration: simulator -> observation log -> filter -> metrics.

A scenario is a flat JSON document validated by ScenarioConfig. Each seed
produces one run directory holding the metrics CSV, the exported observation
stream, the measured f(m), the ground truth and (optionally) beliefs and
contacts. Finished runs are registered in a SQLite database so the dashboard
can report on them.
"""

import hashlib
import json
import logging
import math
import os
import sqlite3
import time
from dataclasses import dataclass, field
from datetime import datetime
from typing import Any, Dict, List, Literal, Optional, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from betis_filter import FilterState, NonUserContactModel, Prior, run_filter, write_beliefs_csv
from epidemic import (
    ACTIVE,
    Compartment,
    ConfigurationError,
    EpidemicParams,
    ImmunityTracker,
    PopulationState,
    compartment_shares,
    derive_rng,
    describe_params,
    sample_initial_states,
    step_population,
)
from metrics import StepMetrics, step_metrics, summarize, write_metrics_csv
from mobility import (
    ContactSnapshot,
    compute_contacts,
    expected_nonuser_contacts,
    init_locations,
    move_step,
    nonuser_contact_distribution,
    poisson_contact_model,
    write_contacts_csv,
)
from observation import ObservationLog, ReplayError, observe_step, read_observation_stream, write_observation_stream

logger = logging.getLogger(__name__)

METRICS_FILE = "metrics.csv"
BELIEFS_FILE = "beliefs.csv"
CONTACTS_FILE = "contacts.csv"
CONTACT_MODEL_FILE = "nonuser_f.json"
GROUND_TRUTH_FILE = "ground_truth.npz"
RUN_CONFIG_FILE = "config.json"
SUMMARY_FILE = "summary.json"

SUITE_SEEDS = [1, 2, 3, 4, 5]
DEFAULT_TEST_SHARE = 0.02
LIMITS_OVERRIDES = {"p_fa": 0.2, "p_tp": 0.75}

PRESETS: Dict[str, Dict[str, Any]] = {
    "desk": {"n": 2000, "rescale_d_inf": True},
    "paper": {"n": 10000, "rescale_d_inf": False},
    # alias of paper
    "full": {"n": 10000, "rescale_d_inf": False},
}

# fields that never change the numbers a run produces
_HASH_EXCLUDED = {"name", "seeds", "output_dir", "threads", "dump_beliefs", "dump_contacts"}


class ScenarioConfig(BaseModel):
    """One scenario; unset fields fall back to the standard model parameters."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    name: str = "run"
    n: int = Field(2000, ge=1)
    c0: float = Field(0.6, gt=0.0, le=1.0)
    horizon: int = Field(150, ge=1)

    beta: float = Field(0.5, ge=0.0, le=1.0)
    delta: float = Field(0.25, ge=0.0, le=1.0)
    gamma: float = Field(0.5, ge=0.0, le=1.0)
    alpha: float = Field(0.1, ge=0.0, le=1.0)
    vartheta: float = Field(0.05, ge=0.0, le=1.0)
    p_fa: float = Field(0.1, ge=0.0, le=1.0)
    p_tp: float = Field(0.9, ge=0.0, le=1.0)
    p_move: float = Field(0.1, ge=0.0, le=1.0)
    d_inf: float = Field(0.007, gt=0.0)
    n_reference: int = Field(10000, ge=1)
    rescale_d_inf: bool = True

    prior: Optional[Dict[str, float]] = None
    f_source: Literal["empirical", "poisson", "file"] = "empirical"
    f_lambda: Optional[float] = Field(None, ge=0.0)
    f_file: Optional[str] = None

    n_test: Optional[int] = Field(None, ge=0)
    seeds: List[int] = Field(default_factory=lambda: [42], min_length=1)
    output_dir: str = "results"
    early_stop: bool = True
    e_positive: bool = False
    dump_beliefs: bool = False
    dump_contacts: bool = False
    threads: int = Field(1, ge=1)

    @field_validator("seeds")
    @classmethod
    def _non_negative_seeds(cls, seeds: List[int]) -> List[int]:
        if any(s < 0 for s in seeds):
            raise ValueError("seeds must be non-negative")
        return seeds

    @field_validator("prior")
    @classmethod
    def _valid_prior(cls, prior: Optional[Dict[str, float]]) -> Optional[Dict[str, float]]:
        if prior is not None:
            Prior.from_mapping(prior)
        return prior

    @model_validator(mode="after")
    def _consistent(self) -> "ScenarioConfig":
        if self.f_source == "file" and not self.f_file:
            raise ValueError("f_source 'file' needs f_file")
        exact = self.n * self.c0
        if math.floor(exact + 1e-9) < 1:
            raise ValueError(f"n * c0 = {exact} leaves no app users")
        if abs(exact - round(exact)) > 1e-9:
            logger.warning(f"n * c0 = {exact} is not integral; using {self.n_users} users")
        return self

    @property
    def n_users(self) -> int:
        return int(math.floor(self.n * self.c0 + 1e-9))

    @property
    def effective_d_inf(self) -> float:
        if not self.rescale_d_inf:
            return self.d_inf
        return self.d_inf * math.sqrt(self.n_reference / self.n)

    @property
    def tests_per_step(self) -> int:
        if self.n_test is not None:
            return self.n_test
        return max(1, int(round(DEFAULT_TEST_SHARE * self.n_users)))

    def epidemic_params(self) -> EpidemicParams:
        return EpidemicParams(
            beta=self.beta,
            delta=self.delta,
            gamma=self.gamma,
            alpha=self.alpha,
            vartheta=self.vartheta,
            p_fa=self.p_fa,
            p_tp=self.p_tp,
            d_inf=self.effective_d_inf,
            p_move=self.p_move,
        )

    def prior_model(self) -> Prior:
        if self.prior is None:
            return Prior.default(self.alpha)
        return Prior.from_mapping(self.prior)

    def config_hash(self) -> str:
        payload = self.model_dump(mode="json", exclude=_HASH_EXCLUDED)
        return hashlib.sha256(json.dumps(payload, sort_keys=True).encode("utf-8")).hexdigest()

    def with_updates(self, **changes: Any) -> "ScenarioConfig":
        return validate_config({**self.model_dump(), **changes})


def validate_config(data: Dict[str, Any]) -> ScenarioConfig:
    """Validate a raw mapping; any violation becomes a ConfigurationError naming the field."""
    try:
        return ScenarioConfig.model_validate(data)
    except ValidationError as e:
        problems = []
        for error in e.errors():
            location = ".".join(str(part) for part in error["loc"]) or "config"
            problems.append(f"{location}: {error['msg']}")
        raise ConfigurationError("Invalid configuration - " + "; ".join(problems)) from None


def load_config(
    path: Optional[str] = None,
    overrides: Optional[Dict[str, Any]] = None,
    preset: Optional[str] = None,
) -> ScenarioConfig:
    """Read a flat JSON scenario, then apply the preset and explicit overrides in that order."""
    data: Dict[str, Any] = {}
    if path:
        try:
            with open(path, "r", encoding="utf-8") as f:
                data = json.load(f)
        except FileNotFoundError:
            logger.error(f"Configuration file {path} not found")
            raise ConfigurationError(f"Configuration file {path} not found") from None
        except json.JSONDecodeError as e:
            logger.error(f"Invalid JSON in configuration file {path}: {e}")
            raise ConfigurationError(f"Invalid JSON in {path}: {e}") from None
        if not isinstance(data, dict):
            raise ConfigurationError(f"{path} must hold a single JSON object")
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigurationError(f"Unknown preset {preset!r}; choose from {sorted(PRESETS)}")
        data.update(PRESETS[preset])
    data.update({k: v for k, v in (overrides or {}).items() if v is not None})
    return validate_config(data)


@dataclass
class SimulationResult:
    """Ground truth and everything the app recorded for one seed."""

    config: ScenarioConfig
    seed: int
    true_states: np.ndarray
    log: ObservationLog
    snapshots: List[ContactSnapshot] = field(repr=False)
    immunity_violations: int = 0

    @property
    def times(self) -> List[int]:
        return self.log.times

    def truth_at(self, k: int) -> np.ndarray:
        return self.true_states[k - self.times[0]]


def simulate(cfg: ScenarioConfig, seed: int) -> SimulationResult:
    """Run the ground-truth model for up to cfg.horizon steps and record the app's view."""
    params = cfg.epidemic_params()
    prior = cfg.prior_model()
    n_users = cfg.n_users
    logger.info(f"Simulating '{cfg.name}' seed={seed}: N={cfg.n}, N_u={n_users}, d_inf={params.d_inf:.5f}")
    logger.debug(f"Model parameters: {describe_params(params)}")

    states = sample_initial_states(cfg.n, prior.distribution, derive_rng(seed, "init_states"))
    pop = PopulationState(states, n_users, time=1)
    locs = init_locations(cfg.n, derive_rng(seed, "init_locations"))
    tracker = ImmunityTracker.from_states(pop.states)
    log = ObservationLog(n_users)
    history: List[np.ndarray] = []
    snapshots: List[ContactSnapshot] = []
    logger.info(f"Initial states: {compartment_shares(pop.states)}")

    while True:
        k = pop.time
        contacts = compute_contacts(locs, params.d_inf, n_users, time=k)
        observe_step(pop, contacts, params, derive_rng(seed, "report", k), log)
        history.append(pop.states.copy())
        snapshots.append(contacts)
        if k % 10 == 0:
            counts = pop.counts()
            logger.info(f"k={k}: I={counts[Compartment.I]}, I_a={counts[Compartment.I_A]}, E={counts[Compartment.E]}")
        if k >= cfg.horizon:
            break
        if cfg.early_stop and not np.isin(pop.states, ACTIVE).any():
            logger.info(f"Epidemic extinct at k={k}; stopping early")
            break
        previous = pop.states
        pop = step_population(pop, contacts, params, derive_rng(seed, "transition", k))
        tracker.update(previous, pop.states)
        locs = move_step(locs, params.p_move, derive_rng(seed, "move", k))

    return SimulationResult(cfg, seed, np.stack(history), log, snapshots, tracker.violations)


def save_contact_model(model: NonUserContactModel, path: str) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(model.to_dict(), f)


def load_contact_model(path: str) -> NonUserContactModel:
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = json.load(f)
        return NonUserContactModel(np.asarray(data["pmf"], dtype=float))
    except FileNotFoundError:
        raise ConfigurationError(f"f(m) file {path} not found") from None
    except (json.JSONDecodeError, KeyError, TypeError) as e:
        raise ConfigurationError(f"Invalid f(m) file {path}: {e}") from None


def resolve_contact_model(
    cfg: ScenarioConfig, snapshots: Optional[Sequence[ContactSnapshot]] = None
) -> NonUserContactModel:
    """f(m) according to cfg.f_source."""
    if cfg.f_source == "empirical":
        if not snapshots:
            raise ConfigurationError("An empirical f(m) needs the contact snapshots of the run")
        return nonuser_contact_distribution(snapshots)
    if cfg.f_source == "poisson":
        lam = cfg.f_lambda
        if lam is None:
            lam = expected_nonuser_contacts(cfg.n, cfg.n_users, cfg.effective_d_inf)
        logger.debug(f"Poisson f(m) with mean {lam:.4f}")
        return poisson_contact_model(lam)
    return load_contact_model(cfg.f_file)


def evaluate(
    cfg: ScenarioConfig, states: Sequence[FilterState], log: ObservationLog, true_states: np.ndarray
) -> List[StepMetrics]:
    """One metrics row per filtered step; true_states[t] belongs to the t-th observed step."""
    if len(true_states) < len(states):
        raise ConfigurationError(f"{len(true_states)} ground-truth steps for {len(states)} filter steps")
    rows = []
    for position, (fs, frame) in enumerate(zip(states, log.frames)):
        rows.append(
            step_metrics(
                fs.time,
                true_states[position],
                cfg.n_users,
                fs.beliefs,
                frame.reports,
                cfg.tests_per_step,
                cfg.e_positive,
            )
        )
    return rows


@dataclass
class RunRecord:
    """Outcome of one (config, seed) run."""

    scenario: str
    config_hash: str
    seed: int
    rows: List[StepMetrics] = field(repr=False)
    summary: Dict[str, Any]
    duration: float
    degenerate_count: int = 0
    immunity_violations: int = 0
    run_dir: Optional[str] = None

    def as_dict(self) -> Dict[str, Any]:
        return {
            "scenario": self.scenario,
            "config_hash": self.config_hash,
            "seed": self.seed,
            "duration_s": self.duration,
            "degenerate_count": self.degenerate_count,
            "immunity_violations": self.immunity_violations,
            **self.summary,
        }


def run_directory(cfg: ScenarioConfig, seed: int, out_root: Optional[str] = None) -> str:
    return os.path.join(out_root or cfg.output_dir, cfg.name, f"seed_{seed}")


def export_simulation(sim: SimulationResult, f: NonUserContactModel, run_dir: str) -> None:
    """Write everything `replay` needs next to the run's metrics."""
    os.makedirs(run_dir, exist_ok=True)
    write_observation_stream(sim.log, run_dir)
    save_contact_model(f, os.path.join(run_dir, CONTACT_MODEL_FILE))
    np.savez_compressed(
        os.path.join(run_dir, GROUND_TRUTH_FILE),
        states=sim.true_states,
        times=np.asarray(sim.times, dtype=np.int64),
        n_users=np.int64(sim.config.n_users),
    )
    with open(os.path.join(run_dir, RUN_CONFIG_FILE), "w", encoding="utf-8") as out:
        json.dump(sim.config.model_dump(mode="json"), out, indent=2, sort_keys=True)
    if sim.config.dump_contacts:
        write_contacts_csv(sim.snapshots, os.path.join(run_dir, CONTACTS_FILE))


def run_seed(
    cfg: ScenarioConfig,
    seed: int,
    out_root: Optional[str] = None,
    threads: Optional[int] = None,
    db: Optional["RunDatabase"] = None,
) -> RunRecord:
    """Simulate, filter and evaluate one seed, writing its run directory."""
    started = time.perf_counter()
    threads = threads or cfg.threads
    run_dir = run_directory(cfg, seed, out_root)
    params = cfg.epidemic_params()
    logger.info(f"Starting run '{cfg.name}' seed={seed} (tau={params.effective_infection_rate:.2f}, threads={threads})")

    sim = simulate(cfg, seed)
    f = resolve_contact_model(cfg, sim.snapshots)
    states = run_filter(sim.log, params, cfg.prior_model(), f, threads=threads)
    rows = evaluate(cfg, states, sim.log, sim.true_states)

    try:
        export_simulation(sim, f, run_dir)
        write_metrics_csv(rows, os.path.join(run_dir, METRICS_FILE))
        if cfg.dump_beliefs:
            write_beliefs_csv(states, os.path.join(run_dir, BELIEFS_FILE))
    except OSError as e:
        logger.error(f"Could not write run output to {run_dir}: {e}")
        raise

    record = RunRecord(
        scenario=cfg.name,
        config_hash=cfg.config_hash(),
        seed=seed,
        rows=rows,
        summary=summarize(rows),
        duration=time.perf_counter() - started,
        degenerate_count=states[-1].degenerate_count,
        immunity_violations=sim.immunity_violations,
        run_dir=run_dir,
    )
    logger.info(
        f"Finished '{cfg.name}' seed={seed}: {len(rows)} steps in {record.duration:.1f}s, "
        f"mean |I_est - I| = {record.summary.get('mean_abs_error_I', 0.0):.2f}"
    )
    if db is not None:
        db.record_run(record, cfg)
    return record


def run_scenario(
    cfg: ScenarioConfig,
    out_root: Optional[str] = None,
    threads: Optional[int] = None,
    db: Optional["RunDatabase"] = None,
) -> List[RunRecord]:
    """Run every seed of cfg in turn and write the scenario's summary.json."""
    records = [run_seed(cfg, seed, out_root, threads, db) for seed in cfg.seeds]
    write_summary_json(records, os.path.join(out_root or cfg.output_dir, cfg.name, SUMMARY_FILE))
    return records


@dataclass
class ReplayResult:
    states: List[FilterState]
    rows: List[StepMetrics]


def load_ground_truth(run_dir: str) -> Optional[np.ndarray]:
    path = os.path.join(run_dir, GROUND_TRUTH_FILE)
    if not os.path.exists(path):
        return None
    with np.load(path) as data:
        return data["states"]


def replay(run_dir: str, cfg: Optional[ScenarioConfig] = None, threads: Optional[int] = None) -> ReplayResult:
    """Run the filter from exported stream files alone; metrics need ground_truth.npz."""
    if cfg is None:
        cfg = load_config(os.path.join(run_dir, RUN_CONFIG_FILE))
    log = read_observation_stream(run_dir)
    if log.n_users != cfg.n_users:
        raise ReplayError(f"Stream has {log.n_users} users, config expects {cfg.n_users}")
    if cfg.f_source == "empirical":
        f_path = os.path.join(run_dir, CONTACT_MODEL_FILE)
        if not os.path.exists(f_path):
            raise ReplayError(f"Empirical f(m) replay needs {CONTACT_MODEL_FILE} in {run_dir}")
        f = load_contact_model(f_path)
    else:
        f = resolve_contact_model(cfg)
    states = run_filter(log, cfg.epidemic_params(), cfg.prior_model(), f, threads=threads or cfg.threads)

    truth = load_ground_truth(run_dir)
    if truth is None:
        logger.warning(f"No {GROUND_TRUTH_FILE} in {run_dir}; replay yields beliefs only")
        return ReplayResult(states, [])
    return ReplayResult(states, evaluate(cfg, states, log, truth))


def write_summary_json(records: Sequence[RunRecord], path: str) -> None:
    """Per-run aggregates plus across-seed mean and standard deviation of every numeric entry."""
    runs = [record.as_dict() for record in records]
    aggregate: Dict[str, Dict[str, float]] = {}
    if runs:
        for key, value in runs[0].items():
            if key in ("seed", "scenario", "config_hash") or not isinstance(value, (int, float)):
                continue
            values = [run[key] for run in runs if isinstance(run.get(key), (int, float))]
            if values:
                aggregate[key] = {"mean": float(np.mean(values)), "std": float(np.std(values))}
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump({"runs": runs, "aggregate": aggregate}, f, indent=2)
    logger.info(f"Wrote summary of {len(runs)} runs to {path}")


SUITES = ("fig1", "fig2", "fig3", "fig1_limits", "fig2_limits", "fig3_limits")


def scenario_suite(
    name: str, base: Optional[ScenarioConfig] = None, seeds: Optional[List[int]] = None
) -> List[ScenarioConfig]:
    """Configs behind one experiment family; `_limits` variants use the degraded reports."""
    if name not in SUITES:
        raise ConfigurationError(f"Unknown suite {name!r}; choose from {', '.join(SUITES)}")
    base = base or ScenarioConfig()
    family, _, variant = name.partition("_")
    common: Dict[str, Any] = {"seeds": seeds or SUITE_SEEDS}
    if variant == "limits":
        common.update(LIMITS_OVERRIDES)

    if family == "fig1":
        sweep = [{"c0": c0, "name": f"{name}_c0_{c0}"} for c0 in (0.2, 0.4, 0.6, 0.8, 1.0)]
    elif family == "fig2":
        sweep = [{"c0": 0.6, "name": name}]
    else:
        sweep = [{"c0": 0.6, "n_test": n_test, "name": f"{name}_ntest_{n_test}"} for n_test in (25, 50, 100)]
    return [base.with_updates(**common, **changes) for changes in sweep]


def run_suite(
    name: str,
    base: Optional[ScenarioConfig] = None,
    out_root: Optional[str] = None,
    threads: Optional[int] = None,
    db: Optional["RunDatabase"] = None,
    seeds: Optional[List[int]] = None,
) -> Dict[str, List[RunRecord]]:
    configs = scenario_suite(name, base, seeds)
    logger.info(f"Suite '{name}': {len(configs)} configs x {len(configs[0].seeds)} seeds")
    return {cfg.name: run_scenario(cfg, out_root, threads, db) for cfg in configs}


_RUN_COLUMNS = (
    "mean_abs_error_I", "mean_abs_error_Ia", "overestimation_I", "overestimation_Ia",
    "tp_fraction_I", "max_map_Ia", "positives", "random_expected",
)


class RunDatabase:
    """SQLite registry of finished runs and their per-step metrics."""

    def __init__(self, db_file: str = "runs.db"):
        self.db_file = db_file
        self.init_database()

    def init_database(self):
        """Create the runs and run_steps tables if needed."""
        with sqlite3.connect(self.db_file) as conn:
            cursor = conn.cursor()
            cursor.execute('''
                CREATE TABLE IF NOT EXISTS runs (
                    id INTEGER PRIMARY KEY AUTOINCREMENT,
                    scenario TEXT NOT NULL,
                    config_hash TEXT NOT NULL,
                    seed INTEGER NOT NULL,
                    timestamp DATETIME DEFAULT CURRENT_TIMESTAMP,
                    n INTEGER,
                    n_users INTEGER,
                    steps INTEGER,
                    duration_s REAL,
                    degenerate_count INTEGER DEFAULT 0,
                    immunity_violations INTEGER DEFAULT 0,
                    mean_abs_error_I REAL,
                    mean_abs_error_Ia REAL,
                    overestimation_I REAL,
                    overestimation_Ia REAL,
                    tp_fraction_I REAL,
                    max_map_Ia INTEGER,
                    positives INTEGER,
                    random_expected REAL,
                    run_dir TEXT,
                    UNIQUE(config_hash, seed, scenario)
                )
            ''')
            cursor.execute('''
                CREATE TABLE IF NOT EXISTS run_steps (
                    run_id INTEGER NOT NULL,
                    k INTEGER NOT NULL,
                    true_I INTEGER,
                    est_I REAL,
                    true_Ia INTEGER,
                    est_Ia REAL,
                    tp_I INTEGER,
                    fp_I INTEGER,
                    tp_Ia INTEGER,
                    fp_Ia INTEGER,
                    n_tested INTEGER,
                    positives INTEGER,
                    PRIMARY KEY(run_id, k)
                )
            ''')
            conn.commit()

    def is_run_recorded(self, config_hash: str, seed: int, scenario: str) -> bool:
        with sqlite3.connect(self.db_file) as conn:
            cursor = conn.cursor()
            cursor.execute(
                "SELECT COUNT(*) FROM runs WHERE config_hash = ? AND seed = ? AND scenario = ?",
                (config_hash, seed, scenario),
            )
            return cursor.fetchone()[0] > 0

    def record_run(self, record: RunRecord, cfg: ScenarioConfig) -> int:
        """Insert or replace the run and its step rows; returns the run id."""
        summary = record.summary
        with sqlite3.connect(self.db_file) as conn:
            cursor = conn.cursor()
            cursor.execute(
                "DELETE FROM run_steps WHERE run_id IN "
                "(SELECT id FROM runs WHERE config_hash = ? AND seed = ? AND scenario = ?)",
                (record.config_hash, record.seed, record.scenario),
            )
            cursor.execute(
                f'''
                INSERT OR REPLACE INTO runs
                (scenario, config_hash, seed, timestamp, n, n_users, steps, duration_s,
                 degenerate_count, immunity_violations, {", ".join(_RUN_COLUMNS)}, run_dir)
                VALUES ({", ".join("?" * (10 + len(_RUN_COLUMNS) + 1))})
                ''',
                (
                    record.scenario, record.config_hash, record.seed,
                    datetime.now().strftime('%Y-%m-%d %H:%M:%S'),
                    cfg.n, cfg.n_users, summary.get("steps", 0), record.duration,
                    record.degenerate_count, record.immunity_violations,
                    *(summary.get(column) for column in _RUN_COLUMNS),
                    record.run_dir,
                ),
            )
            run_id = cursor.lastrowid
            cursor.executemany(
                '''
                INSERT INTO run_steps
                (run_id, k, true_I, est_I, true_Ia, est_Ia, tp_I, fp_I, tp_Ia, fp_Ia, n_tested, positives)
                VALUES (?, ?, ?, ?, ?, ?, ?, ?, ?, ?, ?, ?)
                ''',
                [
                    (run_id, r.k, r.true_I, r.est_I, r.true_Ia, r.est_Ia,
                     r.tp_I, r.fp_I, r.tp_Ia, r.fp_Ia, r.n_tested, r.positives)
                    for r in record.rows
                ],
            )
            conn.commit()
        logger.debug(f"Registered run {run_id}: {record.scenario} seed={record.seed}")
        return run_id

    def get_run_summaries(self, limit: int = 20) -> List[Dict[str, Any]]:
        """Most recent runs first."""
        with sqlite3.connect(self.db_file) as conn:
            conn.row_factory = sqlite3.Row
            cursor = conn.cursor()
            cursor.execute("SELECT * FROM runs ORDER BY timestamp DESC, id DESC LIMIT ?", (limit,))
            return [dict(row) for row in cursor.fetchall()]

    def get_run_steps(self, run_id: int) -> List[Dict[str, Any]]:
        with sqlite3.connect(self.db_file) as conn:
            conn.row_factory = sqlite3.Row
            cursor = conn.cursor()
            cursor.execute("SELECT * FROM run_steps WHERE run_id = ? ORDER BY k", (run_id,))
            return [dict(row) for row in cursor.fetchall()]

    def get_total_stats(self) -> Dict[str, Any]:
        with sqlite3.connect(self.db_file) as conn:
            cursor = conn.cursor()
            cursor.execute('''
                SELECT COUNT(*), COUNT(DISTINCT scenario), COALESCE(SUM(steps), 0),
                       COALESCE(SUM(duration_s), 0), COALESCE(SUM(degenerate_count), 0),
                       COALESCE(SUM(immunity_violations), 0), AVG(overestimation_I), AVG(tp_fraction_I)
                FROM runs
            ''')
            runs, scenarios, steps, duration, degenerate, violations, over_I, tp_I = cursor.fetchone()
        return {
            "total_runs": runs,
            "scenarios": scenarios,
            "total_steps": steps,
            "total_duration_s": duration,
            "degenerate_updates": degenerate,
            "immunity_violations": violations,
            "avg_overestimation_I": over_I,
            "avg_tp_fraction_I": tp_I,
        }
