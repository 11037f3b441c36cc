"""
BETIS: recursive Bayesian filtering of per-user infection states.

The filter keeps one marginal belief over the six compartments per app user
and alternates two updates per step:

  measurement update  Bayes' rule with the report likelihood table
  time update         propagation through the transition rows, mixing over
                      the Poisson-binomial number of infectious user contacts
                      and the mean-field hazard eps[k] from unseen non-users

It reads nothing but the observation log, the model parameters, the prior and
the non-user contact distribution f(m). True states, locations and non-user
contacts are out of its reach.
"""

import csv
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Union

import numpy as np
from scipy.special import comb

from epidemic import (
    COMPARTMENT_LABELS,
    N_COMPARTMENTS,
    Compartment,
    ConfigurationError,
    EpidemicParams,
    transition_matrix,
)
from observation import ObservationLog, ReportSymbol, likelihood_matrix

logger = logging.getLogger(__name__)

NORMALIZATION_TOLERANCE = 1e-9
NEGATIVE_TOLERANCE = 1e-15
FLUSH_BELOW = 1e-300
BELIEFS_CSV_HEADER = ["k", "i", "P_S", "P_Sfa", "P_E", "P_I", "P_Ia", "P_R"]


class DegenerateEvidenceError(ValueError):
    """The report has zero probability under the current belief."""


def _as_simplex(values, what: str, tolerance: float) -> np.ndarray:
    vector = np.asarray(values, dtype=float)
    if vector.shape != (N_COMPARTMENTS,):
        raise ConfigurationError(f"{what} needs {N_COMPARTMENTS} entries, got shape {vector.shape}")
    if not np.all(np.isfinite(vector)) or (vector < 0).any():
        raise ConfigurationError(f"{what} has negative or non-finite entries: {vector}")
    if abs(vector.sum() - 1.0) > tolerance:
        raise ConfigurationError(f"{what} sums to {vector.sum()!r}, not 1")
    return vector


def _from_mapping(mapping: Mapping[Union[str, Compartment], float]) -> np.ndarray:
    vector = np.zeros(N_COMPARTMENTS)
    for key, value in mapping.items():
        vector[Compartment.parse(key)] = float(value)
    return vector


@dataclass(frozen=True)
class Belief:
    """Marginal posterior of one user over the compartments."""

    probabilities: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "probabilities", _as_simplex(self.probabilities, "Belief", NORMALIZATION_TOLERANCE))

    @classmethod
    def point_mass(cls, c: Compartment) -> "Belief":
        vector = np.zeros(N_COMPARTMENTS)
        vector[Compartment(c)] = 1.0
        return cls(vector)

    @classmethod
    def from_mapping(cls, mapping: Mapping[Union[str, Compartment], float]) -> "Belief":
        return cls(_from_mapping(mapping))

    def __getitem__(self, c: Compartment) -> float:
        return float(self.probabilities[Compartment(c)])

    def as_dict(self) -> Dict[str, float]:
        return {label: float(self.probabilities[i]) for i, label in enumerate(COMPARTMENT_LABELS)}


@dataclass(frozen=True)
class Prior:
    """Distribution of X_i[1], shared by all users."""

    distribution: np.ndarray

    def __post_init__(self):
        try:
            vector = _as_simplex(self.distribution, "Prior", 1e-12)
        except ConfigurationError as e:
            raise ConfigurationError(f"Invalid prior: {e}") from None
        object.__setattr__(self, "distribution", vector)

    @classmethod
    def default(cls, alpha: float = 0.1) -> "Prior":
        """I w.p. 0.01, I_a w.p. 0.01 alpha, S otherwise."""
        return cls.from_mapping({"S": 0.99 - 0.01 * alpha, "I": 0.01, "I_a": 0.01 * alpha})

    @classmethod
    def from_mapping(cls, mapping: Mapping[Union[str, Compartment], float]) -> "Prior":
        return cls(_from_mapping(mapping))


@dataclass(frozen=True)
class NonUserContactModel:
    """f(m): distribution of the number of non-user contacts of a user in one step."""

    pmf: np.ndarray

    def __post_init__(self):
        pmf = np.asarray(self.pmf, dtype=float).ravel()
        if pmf.size == 0 or (pmf < 0).any() or not np.all(np.isfinite(pmf)):
            raise ConfigurationError("f(m) must be a non-empty vector of non-negative numbers")
        if abs(pmf.sum() - 1.0) > 1e-12:
            raise ConfigurationError(f"f(m) sums to {pmf.sum()!r}, not 1")
        object.__setattr__(self, "pmf", pmf)

    @classmethod
    def from_counts(cls, counts: Sequence[int]) -> "NonUserContactModel":
        counts = np.asarray(counts, dtype=float)
        if counts.sum() <= 0:
            raise ConfigurationError("Cannot build f(m) from an empty histogram")
        last = int(np.flatnonzero(counts)[-1])
        counts = counts[: last + 1]
        return cls(counts / counts.sum())

    @property
    def m_max(self) -> int:
        return len(self.pmf) - 1

    @property
    def mean(self) -> float:
        return float(np.dot(np.arange(len(self.pmf)), self.pmf))

    def to_dict(self) -> Dict[str, List[float]]:
        return {"pmf": [float(p) for p in self.pmf]}


@dataclass(frozen=True)
class FilterState:
    """Beliefs of all users at step `time` plus the non-user hazard inputs."""

    beliefs: np.ndarray
    time: int
    eps: float
    p_inf: float
    degenerate_count: int = 0

    def __post_init__(self):
        beliefs = np.asarray(self.beliefs, dtype=float)
        if beliefs.ndim != 2 or beliefs.shape[1] != N_COMPARTMENTS:
            raise ConfigurationError(f"beliefs must have shape (n_users, {N_COMPARTMENTS}), got {beliefs.shape}")
        for name in ("eps", "p_inf"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ConfigurationError(f"{name}={getattr(self, name)} outside [0, 1]")
        object.__setattr__(self, "beliefs", beliefs)

    @property
    def n_users(self) -> int:
        return self.beliefs.shape[0]

    def belief(self, i: int) -> Belief:
        return Belief(self.beliefs[i])


def _row_sums(x: np.ndarray) -> np.ndarray:
    # fixed left-to-right order per row, independent of how many rows are passed
    total = x[:, 0].copy()
    for c in range(1, x.shape[1]):
        total += x[:, c]
    return total


def _normalize_rows(x: np.ndarray) -> np.ndarray:
    lowest = x.min() if x.size else 0.0
    if lowest < -NEGATIVE_TOLERANCE:
        raise ArithmeticError(f"Belief entry {lowest!r} is negative beyond rounding")
    x = np.where(x < FLUSH_BELOW, 0.0, x)
    return x / _row_sums(x)[:, None]


def _run_chunks(work: Callable[[int, int], None], n: int, threads: int) -> None:
    """Call work(start, stop) over contiguous chunks of range(n)."""
    if threads <= 1 or n < 2 * threads:
        work(0, n)
        return
    bounds = np.linspace(0, n, threads + 1).astype(int)
    with ThreadPoolExecutor(max_workers=threads) as pool:
        futures = [pool.submit(work, int(a), int(b)) for a, b in zip(bounds[:-1], bounds[1:]) if b > a]
        for future in futures:
            future.result()


def poisson_binomial(success_probs: Sequence[float]) -> np.ndarray:
    """Exact pmf over 0..M of a sum of independent Bernoulli(p_j), by sequential convolution."""
    probs = np.asarray(success_probs, dtype=float).ravel()
    return poisson_binomial_batch(probs[None, :])[0]


def poisson_binomial_batch(success_probs: np.ndarray) -> np.ndarray:
    """Row-wise poisson_binomial for an (n, M) block; returns (n, M + 1)."""
    probs = np.asarray(success_probs, dtype=float)
    if probs.ndim != 2:
        raise ConfigurationError("success probabilities must form an (n, M) block")
    if probs.size and (probs.min() < 0.0 or probs.max() > 1.0):
        raise ConfigurationError("success probabilities must lie in [0, 1]")
    n, m_total = probs.shape
    pmf = np.zeros((n, m_total + 1))
    pmf[:, 0] = 1.0
    for j in range(m_total):
        p = probs[:, j : j + 1]
        head = pmf[:, : j + 2].copy()
        pmf[:, : j + 2] = head * (1.0 - p)
        pmf[:, 1 : j + 2] += head[:, : j + 1] * p
    return pmf


def nonuser_hazard(p_inf: float, f: NonUserContactModel, beta: float) -> float:
    """eps = sum_m f(m) sum_l Binom(l; m, p_inf) (1 - (1 - beta)^l)."""
    if not 0.0 <= p_inf <= 1.0 or not 0.0 <= beta <= 1.0:
        raise ConfigurationError(f"p_inf={p_inf} and beta={beta} must lie in [0, 1]")
    eps = 0.0
    for m, weight in enumerate(f.pmf):
        if weight == 0.0:
            continue
        l = np.arange(m + 1)
        p_l = comb(m, l) * np.power(p_inf, l) * np.power(1.0 - p_inf, m - l)
        eps += weight * float(np.sum(p_l * (1.0 - np.power(1.0 - beta, l))))
    return min(max(eps, 0.0), 1.0)


def nonuser_hazard_closed_form(p_inf: float, f: NonUserContactModel, beta: float) -> float:
    """1 - sum_m f(m) (1 - beta p_inf)^m."""
    m = np.arange(len(f.pmf))
    return min(max(1.0 - float(np.sum(f.pmf * np.power(1.0 - beta * p_inf, m))), 0.0), 1.0)


def _prevalence(beliefs: np.ndarray) -> float:
    if not len(beliefs):
        return 0.0
    infectious = beliefs[:, Compartment.I] + beliefs[:, Compartment.I_A]
    return min(max(float(np.mean(infectious)), 0.0), 1.0)


def mean_field_prevalence(fs: FilterState) -> float:
    """p_inf[k]: average I + I_a mass over all users."""
    return _prevalence(fs.beliefs)


def refresh_hazard(fs: FilterState, f: NonUserContactModel, beta: float) -> FilterState:
    """Recompute p_inf and eps from the beliefs currently held in fs."""
    p_inf = mean_field_prevalence(fs)
    return replace(fs, p_inf=p_inf, eps=nonuser_hazard(p_inf, f, beta))


def init_filter(
    n_users: int,
    prior: Prior,
    f: Optional[NonUserContactModel] = None,
    params: Optional[EpidemicParams] = None,
) -> FilterState:
    """Every user starts at the prior; the first step is k = 1, before any report."""
    if n_users < 1:
        raise ConfigurationError(f"The filter needs at least one user, got {n_users}")
    if not isinstance(prior, Prior):
        prior = Prior(prior)
    beliefs = np.tile(prior.distribution, (n_users, 1))
    fs = FilterState(beliefs, time=1, eps=0.0, p_inf=_prevalence(beliefs))
    if f is not None and params is not None:
        fs = replace(fs, eps=nonuser_hazard(fs.p_inf, f, params.beta))
    return fs


def measurement_update(b: Belief, r: ReportSymbol, p_fa: float, p_tp: float) -> Belief:
    """Posterior of one belief after report r."""
    likelihood = likelihood_matrix(p_fa, p_tp)[ReportSymbol(r)]
    joint = likelihood * b.probabilities
    evidence = float(_row_sums(joint[None, :])[0])
    if evidence <= 0.0:
        raise DegenerateEvidenceError(f"Report {ReportSymbol(r).label} is impossible under belief {b.as_dict()}")
    return Belief(_normalize_rows(joint[None, :])[0])


def measurement_update_all(fs: FilterState, reports: np.ndarray, p_fa: float, p_tp: float) -> FilterState:
    """Measurement update for every user; impossible reports leave that user's belief unchanged."""
    reports = np.asarray(reports, dtype=np.int64)
    if len(reports) != fs.n_users:
        raise ConfigurationError(f"{len(reports)} reports for {fs.n_users} users")
    joint = likelihood_matrix(p_fa, p_tp)[reports] * fs.beliefs
    degenerate = _row_sums(joint) <= 0.0
    n_degenerate = int(np.count_nonzero(degenerate))
    if n_degenerate:
        logger.warning(f"k={fs.time}: {n_degenerate} users sent a report with zero evidence; keeping their belief")
        joint[degenerate] = fs.beliefs[degenerate]
    return replace(fs, beliefs=_normalize_rows(joint), degenerate_count=fs.degenerate_count + n_degenerate)


def _validate_neighbors(neighbors: Sequence[np.ndarray], n_users: int) -> List[np.ndarray]:
    if len(neighbors) != n_users:
        raise ConfigurationError(f"{len(neighbors)} neighbour sets for {n_users} users")
    checked = []
    for i, nbrs in enumerate(neighbors):
        nbrs = np.asarray(nbrs, dtype=np.int64).ravel()
        if nbrs.size and (nbrs.min() < 0 or nbrs.max() >= n_users or (nbrs == i).any()):
            raise ConfigurationError(f"Neighbour set of user {i} references an invalid user index")
        checked.append(nbrs)
    return checked


def time_update(
    fs: FilterState,
    user_contacts: Sequence[np.ndarray],
    params: EpidemicParams,
    f: NonUserContactModel,
    threads: int = 1,
) -> FilterState:
    """Predict the beliefs at k + 1 from the post-measurement beliefs at k."""
    neighbors = _validate_neighbors(user_contacts, fs.n_users)
    beliefs = fs.beliefs
    p_infectious = beliefs[:, Compartment.I] + beliefs[:, Compartment.I_A]
    degrees = np.array([len(nbrs) for nbrs in neighbors], dtype=np.int64)
    predicted = np.empty_like(beliefs)
    matrices: Dict[int, np.ndarray] = {}

    def kernel(m: int) -> np.ndarray:
        if m not in matrices:
            matrices[m] = transition_matrix(m, fs.eps, params)
        return matrices[m]

    # users are processed in groups of equal contact count M
    for m_total in np.unique(degrees):
        m_total = int(m_total)
        users = np.flatnonzero(degrees == m_total)
        if m_total:
            index = np.stack([neighbors[u] for u in users])
        else:
            index = np.zeros((len(users), 0), dtype=np.int64)
        kernels = [kernel(m) for m in range(m_total + 1)]

        def work(start: int, stop: int, users=users, index=index, kernels=kernels) -> None:
            rows = users[start:stop]
            pmf = poisson_binomial_batch(p_infectious[index[start:stop]])
            current = beliefs[rows]
            out = np.zeros((len(rows), N_COMPARTMENTS))
            for m, matrix in enumerate(kernels):
                mixed = current[:, 0:1] * matrix[0]
                for c in range(1, N_COMPARTMENTS):
                    mixed = mixed + current[:, c : c + 1] * matrix[c]
                out += pmf[:, m : m + 1] * mixed
            predicted[rows] = out

        _run_chunks(work, len(users), threads)

    predicted = _normalize_rows(predicted)
    new_state = FilterState(predicted, fs.time + 1, eps=fs.eps, p_inf=fs.p_inf, degenerate_count=fs.degenerate_count)
    return refresh_hazard(new_state, f, params.beta)


def run_filter(
    log: ObservationLog,
    params: EpidemicParams,
    prior: Prior,
    f: NonUserContactModel,
    threads: int = 1,
) -> List[FilterState]:
    """Alternate measurement and time updates over the whole log; returns the post-measurement states."""
    if not log.frames:
        raise ConfigurationError("The observation log is empty")
    fs = init_filter(log.n_users, prior, f, params)
    fs = replace(fs, time=log.frames[0].time)
    recorded: List[FilterState] = []
    for position, frame in enumerate(log.frames):
        if frame.time != fs.time:
            raise ConfigurationError(f"Filter is at k={fs.time}, next frame is k={frame.time}")
        fs = measurement_update_all(fs, frame.reports, params.p_fa, params.p_tp)
        # eps used for k -> k+1 comes from the beliefs conditioned on M[k]
        fs = refresh_hazard(fs, f, params.beta)
        recorded.append(fs)
        if position + 1 < len(log.frames):
            fs = time_update(fs, frame.neighbor_lists(), params, f, threads=threads)
        if frame.time % 10 == 0:
            logger.debug(f"Filter k={frame.time}: p_inf={fs.p_inf:.5f}, eps={fs.eps:.5f}")
    if fs.degenerate_count:
        logger.warning(f"Filter finished with {fs.degenerate_count} degenerate-evidence updates")
    return recorded


def write_beliefs_csv(states: Sequence[FilterState], path: str) -> None:
    """One row per user and step: k, i, then the six posterior masses."""
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(BELIEFS_CSV_HEADER)
        for fs in states:
            for i, row in enumerate(fs.beliefs):
                writer.writerow([fs.time, i] + [repr(float(p)) for p in row])
    logger.info(f"Wrote beliefs for {len(states)} steps to {path}")
