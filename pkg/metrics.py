"""
Evaluation of filter output against the ground truth.

Covers the whole-population prevalence estimate, MAP identification with
true/false positive counts, and allocation of a limited number of tests to the
symptomless users with the highest asymptomatic-infection risk.
"""

import csv
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from betis_filter import Belief
from epidemic import Compartment, ConfigurationError, count_compartments
from observation import ReportSymbol

logger = logging.getLogger(__name__)

METRICS_COLUMNS = [
    "k", "true_I", "est_I", "true_Ia", "est_Ia",
    "tp_I", "fp_I", "tp_Ia", "fp_Ia", "n_tested", "positives",
]

# steps counted as the epidemic window in run summaries
WINDOW_MIN_TRUE_I = 20
OVERESTIMATION_MIN_TRUE = 10

BeliefArray = Union[np.ndarray, Sequence[Belief]]


def _belief_matrix(beliefs: BeliefArray) -> np.ndarray:
    if isinstance(beliefs, np.ndarray):
        matrix = beliefs
    else:
        matrix = np.array([b.probabilities if isinstance(b, Belief) else b for b in beliefs], dtype=float)
    if matrix.ndim != 2 or not len(matrix):
        raise ConfigurationError("Need a non-empty (n_users, 6) belief array")
    return matrix


@dataclass
class PrevalenceSeries:
    """True and estimated whole-population counts of I and I_a per step."""

    times: List[int] = field(default_factory=list)
    true_I: List[int] = field(default_factory=list)
    true_Ia: List[int] = field(default_factory=list)
    est_I: List[float] = field(default_factory=list)
    est_Ia: List[float] = field(default_factory=list)


@dataclass
class IdentificationCounts:
    """Per-step true and false positives of MAP estimates for one target compartment."""

    target: str
    times: List[int] = field(default_factory=list)
    tp: List[int] = field(default_factory=list)
    fp: List[int] = field(default_factory=list)


@dataclass
class StepMetrics:
    k: int
    true_I: int
    est_I: float
    true_Ia: int
    est_Ia: float
    tp_I: int
    fp_I: int
    tp_Ia: int
    fp_Ia: int
    n_tested: int
    positives: int
    # not part of the metrics CSV
    users_I: int = 0
    users_Ia: int = 0
    map_Ia: int = 0
    random_expected: float = 0.0

    def csv_row(self) -> List[str]:
        return [repr(v) if isinstance(v, float) else str(v) for v in (getattr(self, c) for c in METRICS_COLUMNS)]


def prevalence_estimate(beliefs: BeliefArray, n_total: int, target: Compartment) -> float:
    """(N / N_u) * sum of the users' target masses."""
    matrix = _belief_matrix(beliefs)
    return n_total / len(matrix) * float(np.sum(matrix[:, Compartment(target)]))


def map_estimate(b: Union[Belief, np.ndarray]) -> Compartment:
    """Most probable compartment; ties go to the earliest compartment."""
    vector = b.probabilities if isinstance(b, Belief) else np.asarray(b, dtype=float)
    return Compartment(int(np.argmax(vector)))


def map_estimates(beliefs: BeliefArray) -> np.ndarray:
    return np.argmax(_belief_matrix(beliefs), axis=1).astype(np.int8)


def classification_counts(estimates: Sequence[int], truths: Sequence[int], target: Compartment) -> Tuple[int, int]:
    """(true positives, false positives) of estimates == target against truths."""
    estimates, truths = np.asarray(estimates), np.asarray(truths)
    if estimates.shape != truths.shape:
        raise ConfigurationError(f"{len(estimates)} estimates against {len(truths)} true states")
    predicted = estimates == Compartment(target)
    actual = truths == Compartment(target)
    return int(np.count_nonzero(predicted & actual)), int(np.count_nonzero(predicted & ~actual))


def _eligible(current_reports: Sequence[int]) -> np.ndarray:
    return np.flatnonzero(np.asarray(current_reports) == ReportSymbol.REP_S)


def select_for_testing(beliefs: BeliefArray, current_reports: Sequence[int], n_test: int) -> List[int]:
    """Symptomless users with the highest I_a mass, descending; ties go to the smaller id."""
    if n_test < 0:
        raise ConfigurationError(f"n_test must be non-negative, got {n_test}")
    if n_test == 0:
        return []
    matrix = _belief_matrix(beliefs)
    eligible = _eligible(current_reports)
    risk = matrix[eligible, Compartment.I_A]
    order = np.lexsort((eligible, -risk))
    return [int(i) for i in eligible[order[:n_test]]]


def select_random_for_testing(current_reports: Sequence[int], n_test: int, rng: np.random.Generator) -> List[int]:
    """Uniform draw without replacement from the same eligible pool."""
    eligible = _eligible(current_reports)
    size = min(n_test, len(eligible))
    return sorted(int(i) for i in rng.choice(eligible, size=size, replace=False))


def _is_positive(truths: np.ndarray, e_positive: bool) -> np.ndarray:
    positive = truths == Compartment.I_A
    if e_positive:
        positive |= truths == Compartment.E
    return positive


def evaluate_tests(selected: Sequence[int], truths: Sequence[int], e_positive: bool = False) -> int:
    """Positive results among the tested users; the test itself is error-free."""
    if not len(selected):
        return 0
    truths = np.asarray(truths)
    return int(np.count_nonzero(_is_positive(truths[np.asarray(selected, dtype=np.int64)], e_positive)))


def random_selection_expected(
    current_reports: Sequence[int], truths: Sequence[int], n_test: int, e_positive: bool = False
) -> float:
    """Expected positives when n_test eligible users are picked uniformly at random."""
    eligible = _eligible(current_reports)
    if not len(eligible) or n_test <= 0:
        return 0.0
    positives = np.count_nonzero(_is_positive(np.asarray(truths)[eligible], e_positive))
    return min(n_test, len(eligible)) * positives / len(eligible)


def step_metrics(
    k: int,
    true_states: np.ndarray,
    n_users: int,
    beliefs: np.ndarray,
    reports: np.ndarray,
    n_test: int,
    e_positive: bool = False,
) -> StepMetrics:
    """All per-step quantities for one filter state against the full true state vector."""
    true_states = np.asarray(true_states)
    user_truth = true_states[:n_users]
    n_total = len(true_states)
    counts = count_compartments(true_states)
    estimates = map_estimates(beliefs)
    tp_I, fp_I = classification_counts(estimates, user_truth, Compartment.I)
    tp_Ia, fp_Ia = classification_counts(estimates, user_truth, Compartment.I_A)
    selected = select_for_testing(beliefs, reports, n_test)
    user_counts = count_compartments(user_truth)
    return StepMetrics(
        k=k,
        true_I=int(counts[Compartment.I]),
        est_I=prevalence_estimate(beliefs, n_total, Compartment.I),
        true_Ia=int(counts[Compartment.I_A]),
        est_Ia=prevalence_estimate(beliefs, n_total, Compartment.I_A),
        tp_I=tp_I,
        fp_I=fp_I,
        tp_Ia=tp_Ia,
        fp_Ia=fp_Ia,
        n_tested=len(selected),
        positives=evaluate_tests(selected, user_truth, e_positive),
        users_I=int(user_counts[Compartment.I]),
        users_Ia=int(user_counts[Compartment.I_A]),
        map_Ia=int(np.count_nonzero(estimates == Compartment.I_A)),
        random_expected=random_selection_expected(reports, user_truth, n_test, e_positive),
    )


def prevalence_series(rows: Sequence[StepMetrics]) -> PrevalenceSeries:
    series = PrevalenceSeries()
    for row in rows:
        series.times.append(row.k)
        series.true_I.append(row.true_I)
        series.true_Ia.append(row.true_Ia)
        series.est_I.append(row.est_I)
        series.est_Ia.append(row.est_Ia)
    return series


def identification_counts(rows: Sequence[StepMetrics], target: Compartment) -> IdentificationCounts:
    suffix = "I" if Compartment(target) == Compartment.I else "Ia"
    counts = IdentificationCounts(target=Compartment(target).label)
    for row in rows:
        counts.times.append(row.k)
        counts.tp.append(getattr(row, f"tp_{suffix}"))
        counts.fp.append(getattr(row, f"fp_{suffix}"))
    return counts


def _fraction(flags: List[bool]) -> Optional[float]:
    return sum(flags) / len(flags) if flags else None


def summarize(rows: Sequence[StepMetrics]) -> Dict[str, Optional[float]]:
    """Run-level aggregates used by summary.json, the registry and the acceptance checks."""
    if not rows:
        return {"steps": 0}
    window = [r for r in rows if r.users_I >= WINDOW_MIN_TRUE_I]
    positives = sum(r.positives for r in window)
    random_expected = sum(r.random_expected for r in window)
    return {
        "steps": len(rows),
        "peak_true_I": max(r.true_I for r in rows),
        "peak_true_Ia": max(r.true_Ia for r in rows),
        "mean_abs_error_I": float(np.mean([abs(r.est_I - r.true_I) for r in rows])),
        "mean_abs_error_Ia": float(np.mean([abs(r.est_Ia - r.true_Ia) for r in rows])),
        "overestimation_I": _fraction([r.est_I >= r.true_I for r in rows if r.true_I >= OVERESTIMATION_MIN_TRUE]),
        "overestimation_Ia": _fraction([r.est_Ia >= r.true_Ia for r in rows if r.true_Ia >= OVERESTIMATION_MIN_TRUE]),
        "tp_fraction_I": float(np.mean([r.tp_I / r.users_I for r in window])) if window else None,
        "window_steps": len(window),
        "max_map_Ia": max(r.map_Ia for r in rows),
        "positives": positives,
        "random_expected": random_expected,
        "allocation_ratio": positives / random_expected if random_expected > 0 else None,
    }


def write_metrics_csv(rows: Sequence[StepMetrics], path: str) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(METRICS_COLUMNS)
        for row in rows:
            writer.writerow(row.csv_row())
    logger.debug(f"Wrote {len(rows)} metric rows to {path}")
