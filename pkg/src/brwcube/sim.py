"""Branching random walks on the hypercube.

Four processes share one trajectory format:

``simple``
    coalescing c-BRW: each active vertex activates ``c`` neighbours drawn
    with replacement; repeated activations merge.
``multiplicity``
    every particle is replaced by ``c`` children, each moving independently.
``division_rate``
    every particle divides into two moving children with probability ``p``
    and otherwise stays where it is, unmutated.
``affinity_division``
    like ``division_rate`` but the division probability is looked up from
    a table indexed by affinity to a target vertex.

Active sets are sorted ``int64`` label arrays. Populations are a pair of
parallel arrays (sorted labels, positive counts). Children of a vertex are
placed by one multinomial draw over its row, so a step costs
O(occupied vertices x row support) rather than O(particles).
"""
from __future__ import annotations

import hashlib
import json
import math
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import GuardError
from .kernels import Kernel, MAX_DENSE_STATES, affinity_array, kernel_from_config

MODES = ("simple", "multiplicity", "division_rate", "affinity_division")
COUNT_LIMIT = (1 << 63) - 1
PER_CHILD_LIMIT = 1 << 24
MAX_EXPECTATION_STATES = 1 << 20
_CHUNK = 1 << 22


def replica_rng(seed: int, replica: int = 0) -> np.random.Generator:
    """Independent stream for ``replica`` derived from ``seed`` only."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy=seed, spawn_key=(replica,))))


@dataclass(frozen=True)
class Population:
    labels: np.ndarray
    counts: np.ndarray

    @classmethod
    def from_labels(cls, labels) -> "Population":
        lab, cnt = np.unique(np.asarray(labels, dtype=np.int64), return_counts=True)
        return cls(lab, cnt.astype(np.int64))

    @property
    def total(self) -> int:
        return sum(map(int, self.counts))

    @property
    def occupied(self) -> int:
        return int(self.labels.size)

    def count_at(self, v: int) -> int:
        i = np.searchsorted(self.labels, v)
        return int(self.counts[i]) if i < self.labels.size and self.labels[i] == v else 0


def _aggregate(labels: np.ndarray, counts: np.ndarray) -> Population:
    """Sum counts per label, dropping zeros; exact in int64."""
    keep = counts > 0
    labels, counts = labels[keep], counts[keep]
    if labels.size == 0:
        return Population(labels.astype(np.int64), counts.astype(np.int64))
    order = np.argsort(labels, kind="stable")
    labels, counts = labels[order], counts[order]
    starts = np.flatnonzero(np.r_[True, labels[1:] != labels[:-1]])
    return Population(labels[starts], np.add.reduceat(counts, starts).astype(np.int64))


def _checked_total(values, step: int | None, what: str) -> int:
    total = sum(int(v) for v in np.asarray(values).ravel())
    if total > COUNT_LIMIT:
        where = f" at step {step}" if step is not None else ""
        raise GuardError("count-overflow", f"{what} would reach {total} > 2^63-1{where}")
    return total


def place_children(labels: np.ndarray, n_children: np.ndarray, kernel: Kernel, rng, step=None) -> Population:
    """Move ``n_children[i]`` independent walkers from ``labels[i]`` one kernel step."""
    labels = np.asarray(labels, dtype=np.int64)
    n_children = np.asarray(n_children, dtype=np.int64)
    keep = n_children > 0
    labels, n_children = labels[keep], n_children[keep]
    total = _checked_total(n_children, step, "children")
    if total == 0:
        return Population(np.empty(0, np.int64), np.empty(0, np.int64))

    md = kernel.mask_distribution()
    if md is not None and total > labels.size * md[0].size:
        masks, probs = md
        probs = probs / probs.sum()
        rows = max(1, _CHUNK // masks.size)
        dest, cnt = [], []
        for lo in range(0, labels.size, rows):
            draw = rng.multinomial(n_children[lo : lo + rows], probs)
            nz = np.nonzero(draw)
            dest.append(labels[lo : lo + rows][nz[0]] ^ masks[nz[1]])
            cnt.append(draw[nz])
        return _aggregate(np.concatenate(dest), np.concatenate(cnt).astype(np.int64))

    if md is None and total > PER_CHILD_LIMIT:
        if kernel.n_states > MAX_DENSE_STATES:
            raise GuardError("per-child-size", f"{total} children with no multinomial route for {kernel!r}")
        mat = kernel.dense_matrix()
        dest, cnt = [], []
        for v, m in zip(labels, n_children):
            draw = rng.multinomial(int(m), mat[v] / mat[v].sum())
            nz = np.flatnonzero(draw)
            dest.append(nz.astype(np.int64))
            cnt.append(draw[nz])
        return _aggregate(np.concatenate(dest), np.concatenate(cnt).astype(np.int64))

    if total > PER_CHILD_LIMIT:
        raise GuardError("per-child-size", f"{total} children exceeds per-child limit {PER_CHILD_LIMIT}")
    src = np.repeat(labels, n_children)
    lab, cnt = np.unique(kernel.sample(src, rng), return_counts=True)
    return Population(lab, cnt.astype(np.int64))


def _merge(a: Population, b: Population) -> Population:
    return _aggregate(np.concatenate([a.labels, b.labels]), np.concatenate([a.counts, b.counts]))


def _bernoulli_split(counts: np.ndarray, probs: np.ndarray, rng) -> np.ndarray:
    """Binomial(counts, probs), drawing only where 0 < prob < 1."""
    probs = np.broadcast_to(np.asarray(probs, dtype=float), counts.shape)
    out = np.where(probs >= 1.0, counts, 0).astype(np.int64)
    mid = np.flatnonzero((probs > 0.0) & (probs < 1.0))
    if mid.size:
        out[mid] = rng.binomial(counts[mid], probs[mid])
    return out


# --------------------------------------------------------------------------
# single steps


def step_simple(active: np.ndarray, kernel: Kernel, c: int, rng) -> np.ndarray:
    """Next active set: union of ``c`` independent draws from each active vertex."""
    active = np.asarray(active, dtype=np.int64)
    if active.size == 0:
        raise ValueError("active set is empty")
    return np.unique(kernel.sample(np.repeat(active, c), rng))


def step_multiplicity(pop: Population, kernel: Kernel, c: int, rng, step=None) -> Population:
    _checked_total([pop.total * c], step, "population")
    return place_children(pop.labels, pop.counts * c, kernel, rng, step)


def step_division_rate(pop: Population, kernel: Kernel, p: float, rng, step=None) -> Population:
    if not 0.0 < p < 1.0:
        raise ValueError(f"division rate p must be in (0, 1), got {p}")
    return _divide(pop, np.full(pop.labels.shape, p), kernel, rng, step)


def step_affinity_division(pop: Population, kernel: Kernel, division_table, target: int, rng, step=None) -> Population:
    table = np.asarray(division_table, dtype=float)
    n_bits = kernel.dimension
    if n_bits is None or table.shape != (n_bits + 1,):
        raise ValueError("division table must have N + 1 entries")
    probs = table[affinity_array(pop.labels, target, n_bits)]
    return _divide(pop, probs, kernel, rng, step)


def _divide(pop: Population, probs, kernel, rng, step) -> Population:
    dividers = _bernoulli_split(pop.counts, probs, rng)
    _checked_total([pop.total, int(dividers.sum())], step, "population")
    stay = Population(pop.labels, pop.counts - dividers)
    children = place_children(pop.labels, 2 * dividers, kernel, rng, step)
    return _merge(stay, children)


def step_function_table(n_bits: int, threshold: int) -> np.ndarray:
    """Division probabilities 0 below affinity N - threshold, 1 from there up."""
    aff = np.arange(n_bits + 1)
    return (aff >= n_bits - threshold).astype(float)


# --------------------------------------------------------------------------
# runs


@dataclass
class SimConfig:
    kernel: Kernel
    c: int = 2
    mode: str = "simple"
    p: float | None = None
    division_table: Sequence[float] | None = None
    target: int | None = None
    start: int | Sequence[int] = 0
    steps: int = 10
    seed: int = 0
    snapshot_every: int | None = None

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.steps < 0:
            raise ValueError("steps must be >= 0")
        if self.mode in ("simple", "multiplicity"):
            if self.c < 1:
                raise ValueError("c must be >= 1")
            if self.c == 1:
                warnings.warn("c = 1 reduces the branching walk to a plain random walk", stacklevel=2)
        if self.mode == "division_rate" and (self.p is None or not 0.0 < self.p < 1.0):
            raise ValueError(f"division_rate mode needs p in (0, 1), got {self.p}")
        if self.mode == "affinity_division":
            n_bits = self.kernel.dimension
            if self.target is None or self.division_table is None:
                raise ValueError("affinity_division mode needs target and division_table")
            table = np.asarray(self.division_table, dtype=float)
            if n_bits is None or table.shape != (n_bits + 1,):
                raise ValueError("division table must have N + 1 entries")
            if ((table < 0) | (table > 1)).any():
                raise ValueError("division table entries must lie in [0, 1]")
            if (np.diff(table) < 0).any():
                warnings.warn("division table is not non-decreasing in affinity", stacklevel=2)
            self.division_table = tuple(float(x) for x in table)
        starts = self.start_labels
        if starts.size == 0 or starts.min() < 0 or starts.max() >= self.kernel.n_states:
            raise ValueError("start labels out of range")
        if self.target is not None and not 0 <= self.target < self.kernel.n_states:
            raise ValueError("target out of range")

    @property
    def start_labels(self) -> np.ndarray:
        s = [self.start] if isinstance(self.start, (int, np.integer)) else list(self.start)
        return np.asarray(s, dtype=np.int64)

    def check_horizon(self):
        """Reject runs whose worst-case population reaches 2^63."""
        if self.mode == "simple":
            return
        rate = self.c if self.mode == "multiplicity" else 2
        start = self.start_labels.size
        if rate > 1 and math.log2(start) + self.steps * math.log2(rate) >= 63:
            raise GuardError(
                "overflow-horizon",
                f"{self.steps} steps at growth {rate} from {start} particles can exceed 2^63",
            )

    def to_dict(self) -> dict:
        d = {
            "kernel": self.kernel.to_config(),
            "c": self.c,
            "mode": self.mode,
            "p": self.p,
            "division_table": list(self.division_table) if self.division_table is not None else None,
            "target": self.target,
            "start": self.start if isinstance(self.start, (int, np.integer)) else list(self.start),
            "steps": self.steps,
            "seed": self.seed,
            "snapshot_every": self.snapshot_every,
        }
        return {k: (int(v) if isinstance(v, np.integer) else v) for k, v in d.items()}

    @classmethod
    def from_dict(cls, d: dict) -> "SimConfig":
        d = dict(d)
        d["kernel"] = kernel_from_config(d["kernel"])
        known = set(cls.__dataclass_fields__)
        extra = set(d) - known
        if extra:
            raise ValueError(f"unknown config fields: {sorted(extra)}")
        return cls(**d)

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


@dataclass
class Trajectory:
    """Per-step record of one run; index ``t`` runs from 0 to ``steps``."""

    n_states: int
    n_bits: int | None
    active_count: np.ndarray
    population: np.ndarray
    affinity_hist: np.ndarray | None = None
    snapshots: dict = field(default_factory=dict)

    @property
    def steps(self) -> int:
        return self.active_count.size - 1

    def csv_rows(self) -> tuple[list[str], list[list]]:
        header = ["t", "active_count", "population"]
        if self.affinity_hist is not None:
            header += [f"aff_{a}" for a in range(self.affinity_hist.shape[1])]
        rows = []
        for t in range(self.steps + 1):
            row = [t, int(self.active_count[t]), int(self.population[t])]
            if self.affinity_hist is not None:
                row += [int(x) for x in self.affinity_hist[t]]
            rows.append(row)
        return header, rows

    def to_dict(self) -> dict:
        d = {
            "n_states": self.n_states,
            "active_count": [int(x) for x in self.active_count],
            "population": [int(x) for x in self.population],
        }
        if self.affinity_hist is not None:
            d["affinity_hist"] = self.affinity_hist.astype(int).tolist()
        return d


def _hist(labels, counts, target, n_bits):
    aff = affinity_array(labels, target, n_bits)
    h = np.zeros(n_bits + 1, dtype=np.int64)
    np.add.at(h, aff, counts)
    return h


def run(config: SimConfig, rng: np.random.Generator | None = None) -> Trajectory:
    """Simulate ``config.steps`` steps; ``rng`` defaults to replica 0 of ``config.seed``."""
    config.check_horizon()
    if rng is None:
        rng = replica_rng(config.seed, 0)
    kernel = config.kernel
    n_bits = kernel.dimension
    track_aff = config.target is not None and n_bits is not None
    steps = config.steps
    active_count = np.zeros(steps + 1, dtype=np.int64)
    population = np.zeros(steps + 1, dtype=np.int64)
    hist = np.zeros((steps + 1, n_bits + 1), dtype=np.int64) if track_aff else None
    snaps = {}

    def record(t, labels, counts):
        active_count[t] = labels.size
        population[t] = _checked_total(counts, t, "population")
        if track_aff:
            hist[t] = _hist(labels, counts, config.target, n_bits)
        if config.snapshot_every and t % config.snapshot_every == 0:
            snaps[t] = labels.copy() if config.mode == "simple" else Population(labels.copy(), counts.copy())

    if config.mode == "simple":
        active = np.unique(config.start_labels)
        record(0, active, np.ones(active.size, np.int64))
        for t in range(1, steps + 1):
            active = step_simple(active, kernel, config.c, rng)
            record(t, active, np.ones(active.size, np.int64))
    else:
        pop = Population.from_labels(config.start_labels)
        record(0, pop.labels, pop.counts)
        table = np.asarray(config.division_table) if config.division_table is not None else None
        for t in range(1, steps + 1):
            if config.mode == "multiplicity":
                pop = step_multiplicity(pop, kernel, config.c, rng, t)
            elif config.mode == "division_rate":
                pop = step_division_rate(pop, kernel, config.p, rng, t)
            else:
                pop = step_affinity_division(pop, kernel, table, config.target, rng, t)
            record(t, pop.labels, pop.counts)
    return Trajectory(kernel.n_states, n_bits, active_count, population, hist, snaps)


# --------------------------------------------------------------------------
# expectations and cover times


def _apply_transpose(kernel: Kernel, x: np.ndarray) -> np.ndarray:
    md = kernel.mask_distribution()
    if md is not None:
        idx = np.arange(x.size, dtype=np.int64)
        y = np.zeros_like(x)
        for m, q in zip(*md):
            y += q * x[idx ^ m]
        return y
    if x.size > MAX_DENSE_STATES:
        raise GuardError("expectation-size", "no mask route and too many states for a dense matrix")
    return kernel.dense_matrix().T @ x


def propagate_expectation(
    dist,
    kernel: Kernel,
    mode: str = "division_rate",
    *,
    p: float | None = None,
    c: int = 2,
    steps: int = 1,
    normalize: bool = True,
) -> np.ndarray:
    """Expected particle counts per vertex after ``steps`` steps.

    ``division_rate``: E[X'] = (1 - p) E[X] + 2p M^T E[X].
    ``multiplicity``: E[X'] = c M^T E[X].
    With ``normalize`` each step is divided by its growth factor (1 + p or c),
    so a probability vector stays one.
    """
    x = np.asarray(dist, dtype=float).copy()
    if x.size != kernel.n_states:
        raise ValueError("distribution length does not match the kernel")
    if x.size > MAX_EXPECTATION_STATES:
        raise GuardError("expectation-size", f"{x.size} states exceeds 2^20")
    if (x < 0).any():
        raise ValueError("distribution must be non-negative")
    if mode == "division_rate":
        if p is None or not 0.0 < p < 1.0:
            raise ValueError("division_rate needs p in (0, 1)")
        growth = 1.0 + p
    elif mode in ("multiplicity", "constant"):
        growth = float(c)
    else:
        raise ValueError(f"unknown mode {mode!r}")
    for _ in range(steps):
        moved = _apply_transpose(kernel, x)
        x = (1 - p) * x + 2 * p * moved if mode == "division_rate" else c * moved
        if normalize:
            x /= growth
    return x


def partial_cover_time(traj: Trajectory, fraction: float) -> int | None:
    """First t with |S_t| >= fraction * (number of states), or None."""
    if not 0.0 < fraction <= 1.0:
        raise ValueError("fraction must be in (0, 1]")
    hits = np.flatnonzero(traj.active_count >= fraction * traj.n_states)
    return int(hits[0]) if hits.size else None


def detect_full_cover(traj: Trajectory) -> int | None:
    """First snapshot time at which every vertex is active, or None."""
    if not traj.snapshots:
        raise ValueError("trajectory has no snapshots; run with snapshot_every=1")
    if traj.n_states > MAX_DENSE_STATES:
        raise GuardError("full-cover-size", "full-cover detection limited to 4096 states")
    full = np.arange(traj.n_states, dtype=np.int64)
    for t in sorted(traj.snapshots):
        snap = traj.snapshots[t]
        labels = snap.labels if isinstance(snap, Population) else snap
        if labels.size == full.size and np.array_equal(labels, full):
            return t
    return None
