"""
Agent locations and proximity contacts.

Agents live in the unit square. Each step an agent relocates to a fresh uniform
point with probability p_move and stays put otherwise. Two agents are in
contact when their Euclidean distance is at most d_inf (no wraparound at the
borders). Contacts are found with a uniform grid whose cells are at least
d_inf wide, so only the own cell and the eight surrounding cells are searched.
"""

import csv
import logging
import math
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, NamedTuple, Optional, Sequence

import numpy as np
from scipy import stats

from betis_filter import NonUserContactModel
from epidemic import ConfigurationError, adjacency_from_pairs

logger = logging.getLogger(__name__)

# Upper bound on grid resolution for very small d_inf.
MAX_CELLS_PER_AXIS = 1 << 20

# Half of the eight surrounding cells; each unordered cell pair is visited once.
_HALF_NEIGHBOURHOOD = ((1, 0), (1, 1), (0, 1), (-1, 1))


class Location(NamedTuple):
    """Position z_i[k] of one agent; rows of a location array use the same (x, y) order."""

    x: float
    y: float


def locations_of(locs: np.ndarray) -> List[Location]:
    return [Location(float(x), float(y)) for x, y in np.asarray(locs)]


@dataclass(frozen=True)
class ContactSnapshot:
    """Contacts at step `time` as a sorted list of pairs (i, j) with i < j."""

    time: int
    n: int
    n_users: int
    pairs: np.ndarray = field(repr=False)

    def __post_init__(self):
        pairs = np.asarray(self.pairs, dtype=np.int64).reshape(-1, 2)
        if len(pairs):
            if (pairs[:, 0] >= pairs[:, 1]).any():
                raise ConfigurationError("contact pairs must satisfy i < j")
            if pairs.min() < 0 or pairs.max() >= self.n:
                raise ConfigurationError("contact pair index out of range")
        if not 0 <= self.n_users <= self.n:
            raise ConfigurationError(f"n_users={self.n_users} outside [0, {self.n}]")
        object.__setattr__(self, "pairs", pairs)

    @property
    def user_pairs(self) -> np.ndarray:
        """Pairs visible to the app: both ends are users."""
        return self.pairs[self.pairs[:, 1] < self.n_users]

    def degrees(self) -> np.ndarray:
        return np.bincount(self.pairs.ravel(), minlength=self.n)

    def user_degrees(self) -> np.ndarray:
        return np.bincount(self.user_pairs.ravel(), minlength=self.n_users)[: self.n_users]

    def nonuser_contact_counts(self) -> np.ndarray:
        """N_nonuser,i[k] = |N_i[k]| - |N_u,i[k]| for every user i."""
        return self.degrees()[: self.n_users] - self.user_degrees()

    def full_neighbors(self) -> List[np.ndarray]:
        indptr, indices = adjacency_from_pairs(self.pairs, self.n)
        return [indices[indptr[i]:indptr[i + 1]] for i in range(self.n)]

    def user_neighbors(self) -> List[np.ndarray]:
        indptr, indices = adjacency_from_pairs(self.user_pairs, self.n_users)
        return [indices[indptr[i]:indptr[i + 1]] for i in range(self.n_users)]

    def count_marked_neighbors(self, marked: np.ndarray) -> np.ndarray:
        """Number of neighbours j with marked[j] for every individual."""
        marked = np.asarray(marked, dtype=bool)
        if len(marked) != self.n:
            raise ConfigurationError(f"mask has {len(marked)} entries, snapshot covers {self.n}")
        i, j = self.pairs[:, 0], self.pairs[:, 1]
        counts = np.bincount(i, weights=marked[j], minlength=self.n)
        counts += np.bincount(j, weights=marked[i], minlength=self.n)
        return counts.astype(np.int64)


def init_locations(n: int, rng: np.random.Generator) -> np.ndarray:
    """(n, 2) array of i.i.d. uniform positions in the unit square."""
    if n < 1:
        raise ConfigurationError(f"Need at least one agent, got n={n}")
    return rng.random((n, 2))


def move_step(locs: np.ndarray, p_move: float, rng: np.random.Generator) -> np.ndarray:
    """Relocate each agent to a fresh uniform point with probability p_move."""
    if not 0.0 <= p_move <= 1.0:
        raise ConfigurationError(f"p_move must be in [0, 1], got {p_move}")
    locs = np.asarray(locs, dtype=float)
    moves = rng.random(len(locs)) < p_move
    fresh = rng.random(locs.shape)
    return np.where(moves[:, None], fresh, locs)


def _within(dx: np.ndarray, dy: np.ndarray, d_inf: float) -> np.ndarray:
    # inclusive at exactly d_inf
    return np.hypot(dx, dy) <= d_inf


def _sorted_pairs(i: np.ndarray, j: np.ndarray) -> np.ndarray:
    lo, hi = np.minimum(i, j), np.maximum(i, j)
    order = np.lexsort((hi, lo))
    return np.stack([lo[order], hi[order]], axis=1).astype(np.int64)


def compute_contacts(locs: np.ndarray, d_inf: float, n_users: int, time: int = 1) -> ContactSnapshot:
    """Exact ||z_i - z_j|| <= d_inf neighbourhoods via a uniform grid."""
    locs = np.asarray(locs, dtype=float)
    n = len(locs)
    if not d_inf > 0:
        raise ConfigurationError(f"d_inf must be positive, got {d_inf}")
    if not 0 <= n_users <= n:
        raise ConfigurationError(f"n_users={n_users} outside [0, {n}]")
    if n < 2:
        return ContactSnapshot(time, n, n_users, np.zeros((0, 2), dtype=np.int64))

    per_axis = int(min(max(1, math.floor(1.0 / d_inf)), MAX_CELLS_PER_AXIS))
    cx = np.minimum((locs[:, 0] * per_axis).astype(np.int64), per_axis - 1)
    cy = np.minimum((locs[:, 1] * per_axis).astype(np.int64), per_axis - 1)
    cx = np.maximum(cx, 0)
    cy = np.maximum(cy, 0)
    cell = cx * per_axis + cy
    order = np.argsort(cell, kind="stable")
    sorted_cells = cell[order]

    found_i, found_j = [], []
    for dx, dy in ((0, 0),) + _HALF_NEIGHBOURHOOD:
        nx, ny = cx + dx, cy + dy
        valid = (nx >= 0) & (nx < per_axis) & (ny >= 0) & (ny < per_axis)
        target = nx * per_axis + ny
        start = np.searchsorted(sorted_cells, target, side="left")
        stop = np.searchsorted(sorted_cells, target, side="right")
        counts = np.where(valid, stop - start, 0)
        total = int(counts.sum())
        if total == 0:
            continue
        src = np.repeat(np.arange(n), counts)
        offsets = np.arange(total) - np.repeat(np.cumsum(counts) - counts, counts)
        dst = order[np.repeat(start, counts) + offsets]
        if (dx, dy) == (0, 0):
            keep = src < dst
            src, dst = src[keep], dst[keep]
        close = _within(locs[src, 0] - locs[dst, 0], locs[src, 1] - locs[dst, 1], d_inf)
        found_i.append(src[close])
        found_j.append(dst[close])

    if found_i:
        pairs = _sorted_pairs(np.concatenate(found_i), np.concatenate(found_j))
    else:
        pairs = np.zeros((0, 2), dtype=np.int64)
    return ContactSnapshot(time, n, n_users, pairs)


def compute_contacts_bruteforce(locs: np.ndarray, d_inf: float, n_users: int, time: int = 1) -> ContactSnapshot:
    """O(N^2) all-pairs reference for compute_contacts."""
    locs = np.asarray(locs, dtype=float)
    n = len(locs)
    i, j = np.triu_indices(n, k=1)
    close = _within(locs[i, 0] - locs[j, 0], locs[i, 1] - locs[j, 1], d_inf)
    return ContactSnapshot(time, n, n_users, _sorted_pairs(i[close], j[close]))


def nonuser_contact_distribution(snapshots: Sequence[ContactSnapshot]) -> NonUserContactModel:
    """Empirical f(m): histogram of non-user contact counts over all users and steps."""
    if not snapshots:
        raise ConfigurationError("Need at least one contact snapshot to measure f(m)")
    n_users = snapshots[0].n_users
    if n_users < 1:
        raise ConfigurationError("f(m) is measured over users; the snapshots have none")
    histogram = np.zeros(1, dtype=np.int64)
    for snapshot in snapshots:
        counts = np.bincount(snapshot.nonuser_contact_counts())
        if len(counts) > len(histogram):
            histogram = np.pad(histogram, (0, len(counts) - len(histogram)))
        histogram[: len(counts)] += counts
    model = NonUserContactModel.from_counts(histogram)
    logger.debug(f"Empirical f(m) over {len(snapshots)} snapshots: mean={model.mean:.4f}, m_max={model.m_max}")
    return model


def expected_nonuser_contacts(n: int, n_users: int, d_inf: float) -> float:
    """Poisson-limit mean (N - N_u) * pi * d_inf^2 of non-user contacts per user."""
    return (n - n_users) * math.pi * d_inf ** 2


def poisson_contact_model(lam: float, tail: float = 1e-9) -> NonUserContactModel:
    """Poisson(lam) f(m), truncated at the 1 - tail quantile and renormalised."""
    if lam < 0:
        raise ConfigurationError(f"Poisson mean must be non-negative, got {lam}")
    if lam == 0:
        return NonUserContactModel(np.array([1.0]))
    m_max = int(stats.poisson.ppf(1.0 - tail, lam))
    pmf = stats.poisson.pmf(np.arange(m_max + 1), lam)
    return NonUserContactModel(pmf / pmf.sum())


def write_contacts_csv(snapshots: Iterable[ContactSnapshot], path: str, users_only: bool = False) -> int:
    """Write (k, i, j) rows, i < j, for every contact pair. Returns the row count."""
    rows = 0
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["k", "i", "j"])
        for snapshot in snapshots:
            pairs = snapshot.user_pairs if users_only else snapshot.pairs
            for i, j in pairs:
                writer.writerow([snapshot.time, int(i), int(j)])
                rows += 1
    logger.debug(f"Wrote {rows} contact pairs to {path}")
    return rows


def read_contacts_csv(path: str, n: int, n_users: int, times: Sequence[int]) -> List[ContactSnapshot]:
    """Read a contact CSV back into one snapshot per requested time step."""
    by_time: Dict[int, List[List[int]]] = {k: [] for k in times}
    with open(path, "r", newline="", encoding="utf-8") as f:
        reader = csv.DictReader(f)
        if reader.fieldnames is None or list(reader.fieldnames) != ["k", "i", "j"]:
            raise ConfigurationError(f"{path}: expected header k,i,j, got {reader.fieldnames}")
        for line, row in enumerate(reader, start=2):
            k = int(row["k"])
            if k not in by_time:
                raise ConfigurationError(f"{path}:{line}: contact at k={k} outside the observed steps")
            by_time[k].append([int(row["i"]), int(row["j"])])
    snapshots = []
    for k in times:
        pairs = np.array(by_time[k], dtype=np.int64).reshape(-1, 2)
        snapshots.append(ContactSnapshot(k, n, n_users, _sorted_pairs(pairs[:, 0], pairs[:, 1])))
    return snapshots


def mean_contacts(snapshot: ContactSnapshot, users_only: bool = False) -> Optional[float]:
    if users_only:
        return float(snapshot.user_degrees().mean()) if snapshot.n_users else None
    return float(snapshot.degrees().mean()) if snapshot.n else None
