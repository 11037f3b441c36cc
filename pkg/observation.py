"""
App-visible measurements.

Users report one of three symbols every step. Symptomless users (S, E, I_a, R)
always report healthy; users with symptoms (S_fa, I) are classified as COVID
with probability p_fa and p_tp respectively. Together with the user-only
contact pairs these reports form the observation log M[k], the only input the
filter ever sees.

Stream files:
  observations.ndjson  one {"k", "i", "report"} record per user and step
  user_contacts.csv    k,i,j rows for user-user contacts
  stream.json          n_users and the list of observed steps
"""

import json
import logging
import os
from dataclasses import dataclass, field
from enum import IntEnum
from typing import TYPE_CHECKING, Dict, List, Sequence, Union

import numpy as np

from epidemic import (
    N_COMPARTMENTS,
    Compartment,
    ConfigurationError,
    EpidemicParams,
    PopulationState,
    adjacency_from_pairs,
)

if TYPE_CHECKING:
    from mobility import ContactSnapshot

logger = logging.getLogger(__name__)

OBSERVATIONS_FILE = "observations.ndjson"
USER_CONTACTS_FILE = "user_contacts.csv"
STREAM_META_FILE = "stream.json"


class ReplayError(RuntimeError):
    """Observation stream files are missing, malformed or incomplete."""


class ReportSymbol(IntEnum):
    REP_S = 0
    REP_SFA = 1
    REP_I = 2

    @property
    def label(self) -> str:
        return REPORT_LABELS[self.value]

    @classmethod
    def parse(cls, text: Union[str, int, "ReportSymbol"]) -> "ReportSymbol":
        if isinstance(text, (int, np.integer)):
            return cls(int(text))
        try:
            return cls(REPORT_LABELS.index(str(text)))
        except ValueError:
            raise ReplayError(f"Unknown report symbol: {text!r}") from None


REPORT_LABELS = ("RepS", "RepSfa", "RepI")
N_REPORTS = len(REPORT_LABELS)


def likelihood_matrix(p_fa: float, p_tp: float) -> np.ndarray:
    """3x6 table of Pr[report r | compartment c]; every column sums to 1."""
    for name, value in (("p_fa", p_fa), ("p_tp", p_tp)):
        if not 0.0 <= value <= 1.0:
            raise ConfigurationError(f"{name} must be in [0, 1], got {value}")
    table = np.zeros((N_REPORTS, N_COMPARTMENTS))
    for c in (Compartment.S, Compartment.E, Compartment.I_A, Compartment.R):
        table[ReportSymbol.REP_S, c] = 1.0
    table[ReportSymbol.REP_I, Compartment.S_FA] = p_fa
    table[ReportSymbol.REP_SFA, Compartment.S_FA] = 1.0 - p_fa
    table[ReportSymbol.REP_I, Compartment.I] = p_tp
    table[ReportSymbol.REP_SFA, Compartment.I] = 1.0 - p_tp
    return table


def report_likelihood(r: ReportSymbol, c: Compartment, p_fa: float, p_tp: float) -> float:
    return float(likelihood_matrix(p_fa, p_tp)[ReportSymbol(r), Compartment(c)])


def _draw_reports(states: np.ndarray, table: np.ndarray, u: np.ndarray) -> np.ndarray:
    columns = table[:, np.asarray(states, dtype=np.int64)].T
    cum = np.cumsum(columns, axis=1)
    cum /= cum[:, -1:]
    return np.argmax(u[:, None] < cum, axis=1).astype(np.int8)


def generate_report(c: Compartment, p_fa: float, p_tp: float, rng: np.random.Generator) -> ReportSymbol:
    table = likelihood_matrix(p_fa, p_tp)
    return ReportSymbol(int(_draw_reports(np.array([int(c)]), table, rng.random(1))[0]))


def generate_reports(states: np.ndarray, p_fa: float, p_tp: float, rng: np.random.Generator) -> np.ndarray:
    """One report per entry of `states`; entry i consumes uniform i."""
    states = np.asarray(states)
    u = rng.random(len(states))
    if not len(states):
        return np.zeros(0, dtype=np.int8)
    return _draw_reports(states, likelihood_matrix(p_fa, p_tp), u)


@dataclass(frozen=True)
class ObservationFrame:
    """Everything the app records at one step: a report per user and the user-user contacts."""

    time: int
    reports: np.ndarray = field(repr=False)
    user_pairs: np.ndarray = field(repr=False)

    def __post_init__(self):
        reports = np.asarray(self.reports, dtype=np.int8)
        pairs = np.asarray(self.user_pairs, dtype=np.int64).reshape(-1, 2)
        if len(reports) and (reports.min() < 0 or reports.max() >= N_REPORTS):
            raise ConfigurationError("unknown report symbol in frame")
        if len(pairs) and (pairs.min() < 0 or pairs.max() >= len(reports)):
            raise ConfigurationError("user contact references an index outside the users")
        if (pairs[:, 0] == pairs[:, 1]).any():
            raise ConfigurationError("a user cannot be in contact with itself")
        # neighbour sets: one (min, max) row per contact, sorted
        if len(pairs):
            pairs = np.unique(np.sort(pairs, axis=1), axis=0)
        object.__setattr__(self, "reports", reports)
        object.__setattr__(self, "user_pairs", pairs)

    @property
    def n_users(self) -> int:
        return len(self.reports)

    def neighbor_lists(self) -> List[np.ndarray]:
        indptr, indices = adjacency_from_pairs(self.user_pairs, self.n_users)
        return [indices[indptr[i]:indptr[i + 1]] for i in range(self.n_users)]


@dataclass
class ObservationLog:
    """Append-only measurement set M[k]."""

    n_users: int
    frames: List[ObservationFrame] = field(default_factory=list)

    def append(self, frame: ObservationFrame) -> None:
        if frame.n_users != self.n_users:
            raise ConfigurationError(f"frame carries {frame.n_users} reports, log expects {self.n_users}")
        expected = self.frames[-1].time + 1 if self.frames else frame.time
        if frame.time != expected or frame.time < 1:
            raise ConfigurationError(f"frame for k={frame.time} cannot follow k={expected - 1}")
        self.frames.append(frame)

    @property
    def times(self) -> List[int]:
        return [frame.time for frame in self.frames]

    def frame(self, k: int) -> ObservationFrame:
        if not self.frames:
            raise KeyError(k)
        return self.frames[k - self.frames[0].time]

    def __len__(self) -> int:
        return len(self.frames)


def observe_step(
    pop: PopulationState,
    contacts: "ContactSnapshot",
    params: EpidemicParams,
    rng: np.random.Generator,
    log: ObservationLog,
) -> ObservationLog:
    """Append the reports of all users and their user-only contacts at pop.time."""
    if contacts.time != pop.time:
        raise ConfigurationError(f"Contacts are for k={contacts.time}, population is at k={pop.time}")
    if contacts.n_users != pop.n_users or log.n_users != pop.n_users:
        raise ConfigurationError("User count differs between population, contacts and log")
    reports = generate_reports(pop.user_states, params.p_fa, params.p_tp, rng)
    log.append(ObservationFrame(pop.time, reports, contacts.user_pairs))
    return log


def write_observation_stream(log: ObservationLog, out_dir: str) -> None:
    """Export the log as observations.ndjson + user_contacts.csv + stream.json."""
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, OBSERVATIONS_FILE), "w", encoding="utf-8") as f:
        for frame in log.frames:
            for i, r in enumerate(frame.reports):
                f.write(json.dumps({"k": frame.time, "i": i, "report": REPORT_LABELS[r]}) + "\n")
    # mobility imports the filter module, which imports this one
    from mobility import ContactSnapshot, write_contacts_csv

    snapshots = [ContactSnapshot(frame.time, log.n_users, log.n_users, frame.user_pairs) for frame in log.frames]
    write_contacts_csv(snapshots, os.path.join(out_dir, USER_CONTACTS_FILE), users_only=True)
    with open(os.path.join(out_dir, STREAM_META_FILE), "w", encoding="utf-8") as f:
        json.dump({"n_users": log.n_users, "times": log.times}, f)
    logger.info(f"Exported observation stream ({len(log)} steps, {log.n_users} users) to {out_dir}")


def read_observation_stream(in_dir: str) -> ObservationLog:
    """Rebuild an ObservationLog from the exported stream files."""
    try:
        with open(os.path.join(in_dir, STREAM_META_FILE), "r", encoding="utf-8") as f:
            meta = json.load(f)
        n_users, times = int(meta["n_users"]), [int(k) for k in meta["times"]]
    except FileNotFoundError as e:
        raise ReplayError(f"Missing stream file: {e.filename}") from e
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
        raise ReplayError(f"Invalid {STREAM_META_FILE}: {e}") from e

    reports: Dict[int, np.ndarray] = {k: np.full(n_users, -1, dtype=np.int8) for k in times}
    try:
        with open(os.path.join(in_dir, OBSERVATIONS_FILE), "r", encoding="utf-8") as f:
            for line_no, line in enumerate(f, start=1):
                if not line.strip():
                    continue
                record = json.loads(line)
                k, i = int(record["k"]), int(record["i"])
                if k not in reports or not 0 <= i < n_users:
                    raise ReplayError(f"{OBSERVATIONS_FILE}:{line_no}: record (k={k}, i={i}) outside the stream")
                if reports[k][i] != -1:
                    raise ReplayError(f"{OBSERVATIONS_FILE}:{line_no}: second report for user {i} at k={k}")
                reports[k][i] = ReportSymbol.parse(record["report"])
    except FileNotFoundError as e:
        raise ReplayError(f"Missing stream file: {e.filename}") from e
    except (json.JSONDecodeError, KeyError) as e:
        raise ReplayError(f"Invalid record in {OBSERVATIONS_FILE}: {e}") from e

    from mobility import read_contacts_csv

    try:
        snapshots = read_contacts_csv(os.path.join(in_dir, USER_CONTACTS_FILE), n_users, n_users, times)
    except FileNotFoundError as e:
        raise ReplayError(f"Missing stream file: {e.filename}") from e
    except (ValueError, TypeError) as e:
        raise ReplayError(f"Invalid {USER_CONTACTS_FILE}: {e}") from e

    log = ObservationLog(n_users)
    for k, snapshot in zip(times, snapshots):
        if (reports[k] < 0).any():
            missing = int(np.count_nonzero(reports[k] < 0))
            raise ReplayError(f"{missing} users have no report at k={k}")
        log.append(ObservationFrame(k, reports[k], snapshot.pairs))
    logger.info(f"Loaded observation stream from {in_dir}: {len(log)} steps, {n_users} users")
    return log


def report_counts(reports: Sequence[int]) -> Dict[str, int]:
    counts = np.bincount(np.asarray(reports, dtype=np.int64), minlength=N_REPORTS)
    return {label: int(counts[i]) for i, label in enumerate(REPORT_LABELS)}
