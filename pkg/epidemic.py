"""
Ground-truth epidemic dynamics.

Every individual carries a viral state in the compartment set
S, S_fa, E, I, I_a, R and moves through it as a discrete-time Markov chain.
The simulator uses the exact infection kernel over the complete neighbourhood;
the filter reuses the same transition rows with the non-user hazard folded in.

Randomness: every stochastic step draws from a generator derived from
(master seed, stream, step). Each draw is a vector indexed by individual, so
individual i always consumes element i of that vector no matter how the work
is split up.
"""

import logging
from dataclasses import dataclass, field, fields
from enum import IntEnum
from typing import TYPE_CHECKING, Dict, Optional, Sequence, Tuple, Union

import numpy as np

if TYPE_CHECKING:
    from mobility import ContactSnapshot

logger = logging.getLogger(__name__)


class ConfigurationError(ValueError):
    """Invalid parameters, dimension mismatches and other fatal setup errors."""


class Compartment(IntEnum):
    """Hidden viral state. The integer order is the iteration and tie-break order."""

    S = 0
    S_FA = 1
    E = 2
    I = 3
    I_A = 4
    R = 5

    @property
    def label(self) -> str:
        return COMPARTMENT_LABELS[self.value]

    @classmethod
    def parse(cls, text: Union[str, int, "Compartment"]) -> "Compartment":
        """Accept a label ("S_fa"), a member name ("S_FA") or an integer code."""
        if isinstance(text, (int, np.integer)):
            return cls(int(text))
        key = str(text).strip()
        if key in _LABEL_TO_COMPARTMENT:
            return _LABEL_TO_COMPARTMENT[key]
        try:
            return cls[key.upper()]
        except KeyError:
            raise ConfigurationError(f"Unknown compartment: {text!r}") from None


COMPARTMENT_LABELS = ("S", "S_fa", "E", "I", "I_a", "R")
_LABEL_TO_COMPARTMENT = {label: Compartment(i) for i, label in enumerate(COMPARTMENT_LABELS)}
N_COMPARTMENTS = len(COMPARTMENT_LABELS)
INFECTIOUS = (Compartment.I, Compartment.I_A)
ACTIVE = (Compartment.E, Compartment.I, Compartment.I_A)

# Stream ids for derive_rng. Never renumber: results depend on them.
STREAMS = {
    "init_states": 1,
    "init_locations": 2,
    "move": 3,
    "transition": 4,
    "report": 5,
    "test_baseline": 6,
    "sojourn": 7,
}


def derive_rng(master_seed: int, stream: str, k: int = 0) -> np.random.Generator:
    """Generator for (master seed, stream, step k)."""
    if stream not in STREAMS:
        raise ConfigurationError(f"Unknown random stream: {stream}")
    if master_seed < 0:
        raise ConfigurationError(f"Seed must be non-negative, got {master_seed}")
    return np.random.default_rng(np.random.SeedSequence([int(master_seed), STREAMS[stream], int(k)]))


@dataclass(frozen=True)
class EpidemicParams:
    """All model probabilities plus contact geometry and mobility."""

    beta: float = 0.5
    delta: float = 0.25
    gamma: float = 0.5
    alpha: float = 0.1
    vartheta: float = 0.05
    p_fa: float = 0.1
    p_tp: float = 0.9
    d_inf: float = 0.007
    p_move: float = 0.1

    def __post_init__(self):
        for f in fields(self):
            value = getattr(self, f.name)
            if f.name == "d_inf":
                if not value > 0:
                    raise ConfigurationError(f"d_inf must be positive, got {value}")
            elif not 0.0 <= value <= 1.0:
                raise ConfigurationError(f"{f.name} must be a probability in [0, 1], got {value}")

    @property
    def effective_infection_rate(self) -> float:
        return effective_infection_rate(self)


def effective_infection_rate(params: EpidemicParams) -> float:
    """tau = beta / delta; compared against the epidemic threshold."""
    if params.delta == 0:
        return float("inf")
    return params.beta / params.delta


@dataclass
class PopulationState:
    """True compartments of all N individuals; indices < n_users are app users."""

    states: np.ndarray
    n_users: int
    time: int = 1

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=np.int8)
        if self.states.ndim != 1:
            raise ConfigurationError("states must be a one-dimensional array")
        if not 0 <= self.n_users <= len(self.states):
            raise ConfigurationError(f"n_users={self.n_users} outside [0, {len(self.states)}]")
        if self.time < 1:
            raise ConfigurationError(f"time index starts at 1, got {self.time}")
        if len(self.states) and (self.states.min() < 0 or self.states.max() >= N_COMPARTMENTS):
            raise ConfigurationError("states contain an unknown compartment code")

    @property
    def n(self) -> int:
        return len(self.states)

    @property
    def user_fraction(self) -> float:
        return self.n_users / self.n if self.n else 0.0

    @property
    def user_states(self) -> np.ndarray:
        return self.states[: self.n_users]

    def counts(self) -> np.ndarray:
        return count_compartments(self.states)


def count_compartments(states: np.ndarray) -> np.ndarray:
    return np.bincount(np.asarray(states, dtype=np.int64), minlength=N_COMPARTMENTS)


def infection_probability(m, beta: float):
    """1 - (1 - beta)^m for m infectious neighbours."""
    result = 1.0 - np.power(1.0 - beta, m)
    if np.ndim(result) == 0:
        return float(result)
    return result


def transition_matrix(m: int, eps: float, params: EpidemicParams) -> np.ndarray:
    """Row-stochastic 6x6 matrix; row c is transition_distribution(c, m, eps)."""
    if m < 0:
        raise ConfigurationError(f"m must be non-negative, got {m}")
    if not 0.0 <= eps <= 1.0:
        raise ConfigurationError(f"eps must be in [0, 1], got {eps}")
    q = 1.0 - (1.0 - params.beta) ** m * (1.0 - eps)
    survive = 1.0 - q
    matrix = np.zeros((N_COMPARTMENTS, N_COMPARTMENTS))
    S, S_FA, E, I, I_A, R = Compartment
    # infection is drawn first; vartheta / delta only act on survivors
    matrix[S, E] = q
    matrix[S, S_FA] = survive * params.vartheta
    matrix[S, S] = survive * (1.0 - params.vartheta)
    matrix[S_FA, E] = q
    matrix[S_FA, S] = survive * params.delta
    matrix[S_FA, S_FA] = survive * (1.0 - params.delta)
    matrix[E, I_A] = params.gamma * params.alpha
    matrix[E, I] = params.gamma * (1.0 - params.alpha)
    matrix[E, E] = 1.0 - params.gamma
    matrix[I, R] = params.delta
    matrix[I, I] = 1.0 - params.delta
    # no exit rate for I_a is given; it shares delta with I
    matrix[I_A, R] = params.delta
    matrix[I_A, I_A] = 1.0 - params.delta
    matrix[R, R] = 1.0
    return matrix


def transition_distribution(c: Compartment, m: int, eps: float, params: EpidemicParams) -> np.ndarray:
    """Pr[X[k+1] = . | X[k] = c, m infectious neighbours], indexed by Compartment."""
    return transition_matrix(m, eps, params)[Compartment(c)]


def transition_rows(states: np.ndarray, m: np.ndarray, eps: float, params: EpidemicParams) -> np.ndarray:
    """Vectorised transition rows, one per individual."""
    states = np.asarray(states, dtype=np.int64)
    m = np.asarray(m)
    rows = transition_matrix(0, 0.0, params)[states]
    q = 1.0 - np.power(1.0 - params.beta, m) * (1.0 - eps)
    survive = 1.0 - q

    S, S_FA, E, I, I_A, R = Compartment
    sus = states == S
    rows[sus, E] = q[sus]
    rows[sus, S_FA] = survive[sus] * params.vartheta
    rows[sus, S] = survive[sus] * (1.0 - params.vartheta)
    fa = states == S_FA
    rows[fa, E] = q[fa]
    rows[fa, S] = survive[fa] * params.delta
    rows[fa, S_FA] = survive[fa] * (1.0 - params.delta)
    return rows


def sample_categorical(rows: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Inverse-CDF draw per row with one uniform per row."""
    cum = np.cumsum(rows, axis=1)
    cum /= cum[:, -1:]
    # zero-mass tail entries share the cumulative value 1.0, strict < skips them
    return np.argmax(u[:, None] < cum, axis=1).astype(np.int8)


def sample_initial_states(n: int, prior: Sequence[float], rng: np.random.Generator) -> np.ndarray:
    """Independent draws of X_i[1] from the prior."""
    if n < 1:
        raise ConfigurationError(f"Population size must be at least 1, got {n}")
    prior = np.asarray(prior, dtype=float)
    u = rng.random(n)
    return sample_categorical(np.broadcast_to(prior, (n, N_COMPARTMENTS)).copy(), u)


def infectious_neighbor_counts(states: np.ndarray, contacts: "ContactSnapshot") -> np.ndarray:
    infectious = np.isin(states, INFECTIOUS)
    return contacts.count_marked_neighbors(infectious)


def step_population(
    pop: PopulationState,
    contacts: "ContactSnapshot",
    params: EpidemicParams,
    rng: np.random.Generator,
) -> PopulationState:
    """Advance every individual one step using the frozen state and contacts at pop.time."""
    if contacts.n != pop.n:
        raise ConfigurationError(f"Contact snapshot covers {contacts.n} individuals, population has {pop.n}")
    if contacts.time != pop.time:
        raise ConfigurationError(f"Contact snapshot is for k={contacts.time}, population is at k={pop.time}")

    m = infectious_neighbor_counts(pop.states, contacts)
    rows = transition_rows(pop.states, m, 0.0, params)
    u = rng.random(pop.n)
    new_states = sample_categorical(rows, u)
    return PopulationState(new_states, pop.n_users, pop.time + 1)


def sojourn_sampler_check(delta: float, episodes: int, rng: np.random.Generator) -> float:
    """Simulate I -> R holding times step by step and return their sample mean."""
    if not 0.0 < delta <= 1.0:
        raise ConfigurationError(f"delta must be in (0, 1] for a finite sojourn, got {delta}")
    if episodes < 1:
        raise ConfigurationError(f"episodes must be at least 1, got {episodes}")

    removal = transition_distribution(Compartment.I, 0, 0.0, EpidemicParams(delta=delta))[Compartment.R]
    durations = np.zeros(episodes, dtype=np.int64)
    alive = np.arange(episodes)
    while alive.size:
        durations[alive] += 1
        alive = alive[rng.random(alive.size) >= removal]
    mean = float(durations.mean())
    logger.debug(f"Sojourn check: delta={delta}, episodes={episodes}, mean={mean:.4f} (expected {1 / delta:.4f})")
    return mean


@dataclass
class ImmunityTracker:
    """Flags the first entry into E per individual; a second entry is a model violation."""

    entered: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=bool))
    violations: int = 0

    @classmethod
    def from_states(cls, states: np.ndarray) -> "ImmunityTracker":
        states = np.asarray(states)
        return cls(entered=~np.isin(states, (Compartment.S, Compartment.S_FA)))

    def update(self, previous: np.ndarray, current: np.ndarray) -> int:
        new_entries = (current == Compartment.E) & (previous != Compartment.E)
        repeat = int(np.count_nonzero(new_entries & self.entered))
        if repeat:
            logger.error(f"{repeat} individuals entered E a second time")
        self.entered |= new_entries
        self.violations += repeat
        return repeat


def adjacency_from_pairs(pairs: np.ndarray, n: int) -> Tuple[np.ndarray, np.ndarray]:
    """CSR adjacency (indptr, indices) of an undirected pair list; neighbours sorted."""
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    src = np.concatenate([pairs[:, 0], pairs[:, 1]])
    dst = np.concatenate([pairs[:, 1], pairs[:, 0]])
    order = np.lexsort((dst, src))
    indices = dst[order]
    indptr = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(np.bincount(src, minlength=n), out=indptr[1:])
    return indptr, indices


def describe_params(params: EpidemicParams) -> Dict[str, float]:
    summary = {f.name: getattr(params, f.name) for f in fields(params)}
    summary["tau"] = effective_infection_rate(params)
    return summary


def compartment_shares(states: np.ndarray, n_users: Optional[int] = None) -> Dict[str, int]:
    """Counts per compartment label, optionally restricted to the first n_users."""
    if n_users is not None:
        states = np.asarray(states)[:n_users]
    counts = count_compartments(states)
    return {label: int(counts[i]) for i, label in enumerate(COMPARTMENT_LABELS)}
