"""Vertex arithmetic and mutation kernels on the N-dimensional hypercube.

Vertices are N-bit integers. A kernel is a row-stochastic transition rule
over those integers; every kernel here can

* draw neighbours for a whole array of vertices at once (``sample``),
* materialise itself as a dense matrix for small state spaces
  (``dense_matrix``), which is the verification oracle for everything else,
* describe itself as a plain config mapping (``to_config``).

Kernels of the hypercube family (single flip, powers, mixtures and their
lazy versions) are translation invariant under XOR, so a single
distribution over flip masks describes every row. Simulation code uses
that mask distribution; the dense matrix is built independently from
matrix powers.
"""
from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache
from pathlib import Path
from typing import Mapping

import numpy as np

from .errors import DisconnectedKernelError, GuardError

MAX_BITS = 62
MAX_DENSE_STATES = 4096
# masks enumerated explicitly for multinomial placement / expectation updates
MAX_MASK_SUPPORT = 4096
# vertices x neighbours visited by the bipartiteness BFS
MAX_BFS_WORK = 1 << 26

KINDS = ("single_flip", "power", "mixture", "lazy", "complete", "complete_bipartite")


# --------------------------------------------------------------------------
# vertices


@dataclass(frozen=True)
class VertexLabel:
    """An N-bit string stored in an integer; bit ``i`` is symbol ``i``."""

    bits: int
    n_bits: int

    def __post_init__(self):
        if not 1 <= self.n_bits <= MAX_BITS:
            raise ValueError(f"n_bits must be in [1, {MAX_BITS}], got {self.n_bits}")
        if not 0 <= self.bits < (1 << self.n_bits):
            raise ValueError(f"bits={self.bits} does not fit in {self.n_bits} bits")

    @classmethod
    def from_string(cls, s: str) -> "VertexLabel":
        """Parse ``"0101"``; the leftmost character is the highest bit."""
        if not s or set(s) - {"0", "1"}:
            raise ValueError(f"not a binary string: {s!r}")
        return cls(int(s, 2), len(s))

    def __str__(self):
        return format(self.bits, f"0{self.n_bits}b")


def _check_same_dim(a: VertexLabel, b: VertexLabel):
    if a.n_bits != b.n_bits:
        raise ValueError(f"dimension mismatch: {a.n_bits} vs {b.n_bits}")


def hamming(a: VertexLabel, b: VertexLabel) -> int:
    _check_same_dim(a, b)
    return (a.bits ^ b.bits).bit_count()


def affinity(v: VertexLabel, target: VertexLabel) -> int:
    """Number of positions where ``v`` agrees with ``target``."""
    return v.n_bits - hamming(v, target)


def popcount(x) -> np.ndarray:
    return np.bitwise_count(np.asarray(x, dtype=np.int64)).astype(np.int64)


def affinity_array(labels, target: int, n_bits: int) -> np.ndarray:
    """Vectorised ``affinity`` over an array of raw labels."""
    return n_bits - popcount(np.asarray(labels, dtype=np.int64) ^ np.int64(target))


# --------------------------------------------------------------------------
# helpers for the XOR-invariant family


@lru_cache(maxsize=None)
def _flip_distance_law(n_bits: int, flips: int) -> tuple[float, ...]:
    """Law of the Hamming weight after ``flips`` uniform single-bit flips from 0."""
    q = np.zeros(n_bits + 1)
    q[0] = 1.0
    h = np.arange(n_bits + 1)
    for _ in range(flips):
        nxt = np.zeros_like(q)
        nxt[:-1] += q[1:] * h[1:] / n_bits
        nxt[1:] += q[:-1] * (n_bits - h[:-1]) / n_bits
        q = nxt
    return tuple(q)


@lru_cache(maxsize=64)
def _masks_of_weight(n_bits: int, weight: int) -> np.ndarray:
    out = [sum(1 << i for i in combo) for combo in itertools.combinations(range(n_bits), weight)]
    return np.array(out, dtype=np.int64)


def _random_flip(labels: np.ndarray, n_bits: int, rng: np.random.Generator) -> np.ndarray:
    bit = rng.integers(0, n_bits, size=labels.shape[0])
    return labels ^ (np.int64(1) << bit)


def _check_bits(n_bits: int):
    if not isinstance(n_bits, (int, np.integer)) or not 1 <= n_bits <= MAX_BITS:
        raise ValueError(f"n_bits must be an integer in [1, {MAX_BITS}], got {n_bits!r}")


def _dense_guard(n: int):
    if n > MAX_DENSE_STATES:
        raise GuardError("dense-size", f"{n} states exceeds dense limit {MAX_DENSE_STATES}")


# --------------------------------------------------------------------------
# kernels


class Kernel:
    """Common interface. Subclasses are immutable value objects."""

    kind: str = ""

    @property
    def n_states(self) -> int:
        raise NotImplementedError

    @property
    def dimension(self) -> int | None:
        """Bit length of labels, when the state space is a hypercube."""
        n = self.n_states
        return n.bit_length() - 1 if n & (n - 1) == 0 else None

    def sample(self, labels, rng: np.random.Generator) -> np.ndarray:
        """One independent neighbour draw per entry of ``labels``."""
        raise NotImplementedError

    def dense_matrix(self) -> np.ndarray:
        raise NotImplementedError

    def weight_law(self) -> np.ndarray | None:
        """Row mass per Hamming distance for XOR-invariant kernels, else None."""
        return None

    def mask_distribution(self, limit: int = MAX_MASK_SUPPORT):
        """``(masks, probs)`` with row(v)[v ^ m] = p, or None.

        None when the kernel is not XOR-invariant or its support exceeds
        ``limit`` masks.
        """
        law = self.weight_law()
        if law is None:
            return None
        n = self.dimension
        weights = [h for h in range(n + 1) if law[h] > 0]
        if sum(math.comb(n, h) for h in weights) > limit:
            return None
        masks, probs = [], []
        for h in weights:
            m = _masks_of_weight(n, h)
            masks.append(m)
            probs.append(np.full(m.shape[0], law[h] / m.shape[0]))
        return np.concatenate(masks), np.concatenate(probs)

    def support_size(self) -> int:
        """Number of nonzero entries in a row (the graph degree, loops included)."""
        law = self.weight_law()
        if law is None:
            raise NotImplementedError
        n = self.dimension
        return sum(math.comb(n, h) for h in range(n + 1) if law[h] > 0)

    def neighbours(self, v: int) -> np.ndarray:
        """Sorted support of row ``v``."""
        md = self.mask_distribution(limit=1 << 22)
        if md is not None:
            return np.sort(np.int64(v) ^ md[0])
        row = self.dense_matrix()[v]
        return np.flatnonzero(row > 0).astype(np.int64)

    def to_config(self) -> dict:
        raise NotImplementedError

    def _check_labels(self, labels) -> np.ndarray:
        arr = np.asarray(labels, dtype=np.int64)
        if arr.size and (arr.min() < 0 or arr.max() >= self.n_states):
            raise ValueError(f"label out of range for {self.n_states} states")
        return arr


@dataclass(frozen=True)
class SingleFlip(Kernel):
    """Flip one uniformly chosen bit: the simple random walk on H_N."""

    n_bits: int
    kind = "single_flip"

    def __post_init__(self):
        _check_bits(self.n_bits)

    @property
    def n_states(self):
        return 1 << self.n_bits

    def sample(self, labels, rng):
        labels = self._check_labels(labels)
        return _random_flip(labels, self.n_bits, rng)

    def dense_matrix(self):
        n = self.n_states
        _dense_guard(n)
        m = np.zeros((n, n))
        v = np.arange(n)
        for b in range(self.n_bits):
            m[v, v ^ (1 << b)] = 1.0 / self.n_bits
        return m

    def weight_law(self):
        return np.array(_flip_distance_law(self.n_bits, 1))

    def support_size(self):
        return self.n_bits

    def to_config(self):
        return {"kind": self.kind, "n_bits": self.n_bits}


@dataclass(frozen=True)
class Power(Kernel):
    """Exactly ``k`` successive uniform single-bit flips (the matrix P^k)."""

    n_bits: int
    k: int
    kind = "power"

    def __post_init__(self):
        _check_bits(self.n_bits)
        if self.k < 1:
            raise ValueError(f"power k must be >= 1, got {self.k}")

    @property
    def n_states(self):
        return 1 << self.n_bits

    def sample(self, labels, rng):
        out = self._check_labels(labels).copy()
        for _ in range(self.k):
            out = _random_flip(out, self.n_bits, rng)
        return out

    def dense_matrix(self):
        return np.linalg.matrix_power(SingleFlip(self.n_bits).dense_matrix(), self.k)

    def weight_law(self):
        return np.array(_flip_distance_law(self.n_bits, self.k))

    def to_config(self):
        return {"kind": self.kind, "n_bits": self.n_bits, "k": self.k}


@dataclass(frozen=True)
class Mixture(Kernel):
    """Uniform mixture (1/k) * sum_{i=1..k} P^i: up to ``k`` mutations per division.

    Sampling draws the number of flips uniformly in 1..k and then applies
    that many single flips, which realises the mixture exactly.
    """

    n_bits: int
    k: int
    kind = "mixture"

    def __post_init__(self):
        _check_bits(self.n_bits)
        if not 1 <= self.k <= self.n_bits:
            raise ValueError(f"mixture k must be in [1, {self.n_bits}], got {self.k}")

    @property
    def n_states(self):
        return 1 << self.n_bits

    def sample(self, labels, rng):
        out = self._check_labels(labels).copy()
        depth = rng.integers(1, self.k + 1, size=out.shape[0])
        for j in range(1, self.k + 1):
            idx = np.flatnonzero(depth >= j)
            out[idx] = _random_flip(out[idx], self.n_bits, rng)
        return out

    def dense_matrix(self):
        p = SingleFlip(self.n_bits).dense_matrix()
        acc = np.zeros_like(p)
        cur = np.eye(p.shape[0])
        for _ in range(self.k):
            cur = cur @ p
            acc += cur
        return acc / self.k

    def weight_law(self):
        laws = [np.array(_flip_distance_law(self.n_bits, i)) for i in range(1, self.k + 1)]
        return np.mean(laws, axis=0)

    def support_size(self):
        return degree(self)

    def to_config(self):
        return {"kind": self.kind, "n_bits": self.n_bits, "k": self.k}


@dataclass(frozen=True)
class Lazy(Kernel):
    """Stay put with probability ``p_stay``, otherwise move with ``base``."""

    base: Kernel
    p_stay: float = 0.5
    kind = "lazy"

    def __post_init__(self):
        if not 0.0 < self.p_stay < 1.0:
            raise ValueError(f"p_stay must be in (0, 1), got {self.p_stay}")
        if not isinstance(self.base, Kernel):
            raise TypeError("base must be a Kernel")

    @property
    def n_states(self):
        return self.base.n_states

    def sample(self, labels, rng):
        labels = self._check_labels(labels)
        out = labels.copy()
        move = np.flatnonzero(rng.random(labels.shape[0]) >= self.p_stay)
        out[move] = self.base.sample(labels[move], rng)
        return out

    def dense_matrix(self):
        b = self.base.dense_matrix()
        return self.p_stay * np.eye(b.shape[0]) + (1.0 - self.p_stay) * b

    def weight_law(self):
        law = self.base.weight_law()
        if law is None:
            return None
        law = (1.0 - self.p_stay) * law
        law[0] += self.p_stay
        return law

    def support_size(self):
        law = self.weight_law()
        if law is not None:
            return super().support_size()
        row = self.dense_matrix()[0]
        return int(np.count_nonzero(row))

    def to_config(self):
        return {"kind": self.kind, "p_stay": self.p_stay, "base": self.base.to_config()}


@dataclass(frozen=True)
class CompleteGraph(Kernel):
    """Uniform jump to any of the other ``n - 1`` vertices (no self-loop)."""

    n: int
    kind = "complete"

    def __post_init__(self):
        if self.n < 2:
            raise ValueError("complete graph needs n >= 2")

    @property
    def n_states(self):
        return self.n

    def sample(self, labels, rng):
        labels = self._check_labels(labels)
        u = rng.integers(0, self.n - 1, size=labels.shape[0])
        return u + (u >= labels)

    def dense_matrix(self):
        _dense_guard(self.n)
        return (np.ones((self.n, self.n)) - np.eye(self.n)) / (self.n - 1)

    def support_size(self):
        return self.n - 1

    def neighbours(self, v):
        return np.delete(np.arange(self.n, dtype=np.int64), v)

    def to_config(self):
        return {"kind": self.kind, "n": self.n}


@dataclass(frozen=True)
class CompleteBipartite(Kernel):
    """K_{half,half}: vertices ``[0, half)`` jump uniformly into ``[half, 2 half)`` and back."""

    half: int
    kind = "complete_bipartite"

    def __post_init__(self):
        if self.half < 1:
            raise ValueError("complete bipartite graph needs half >= 1")

    @property
    def n_states(self):
        return 2 * self.half

    def sample(self, labels, rng):
        labels = self._check_labels(labels)
        u = rng.integers(0, self.half, size=labels.shape[0])
        return np.where(labels < self.half, u + self.half, u)

    def dense_matrix(self):
        n = self.n_states
        _dense_guard(n)
        m = np.zeros((n, n))
        m[: self.half, self.half :] = 1.0 / self.half
        m[self.half :, : self.half] = 1.0 / self.half
        return m

    def support_size(self):
        return self.half

    def neighbours(self, v):
        lo = self.half if v < self.half else 0
        return np.arange(lo, lo + self.half, dtype=np.int64)

    def to_config(self):
        return {"kind": self.kind, "half": self.half}


@dataclass(frozen=True, eq=False)
class ExplicitMatrix(Kernel):
    """Arbitrary row-stochastic matrix; an oracle and test vehicle only."""

    matrix: np.ndarray = field(repr=False)
    kind = "explicit"

    def __post_init__(self):
        m = np.array(self.matrix, dtype=float)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ValueError("matrix must be square")
        _dense_guard(m.shape[0])
        if (m < 0).any():
            raise ValueError("matrix has negative entries")
        if not np.allclose(m.sum(axis=1), 1.0, rtol=0, atol=1e-12):
            raise ValueError("matrix rows must sum to 1")
        if not _connected(m > 0):
            raise DisconnectedKernelError("explicit matrix support is not connected")
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)
        object.__setattr__(self, "_cdf", np.cumsum(m, axis=1))

    @property
    def n_states(self):
        return self.matrix.shape[0]

    def sample(self, labels, rng):
        labels = self._check_labels(labels)
        u = rng.random(labels.shape[0])
        out = np.empty_like(labels)
        for lo in range(0, labels.shape[0], 4096):
            sl = slice(lo, lo + 4096)
            out[sl] = (self._cdf[labels[sl]] < u[sl, None]).sum(axis=1)
        # guard against cumsum round-off on the last column
        return np.minimum(out, self.n_states - 1)

    def dense_matrix(self):
        return self.matrix.copy()

    def support_size(self):
        counts = np.count_nonzero(self.matrix, axis=1)
        if (counts != counts[0]).any():
            raise ValueError("explicit matrix is not regular")
        return int(counts[0])

    def to_config(self):
        raise ValueError("explicit matrices have no text config representation")


# --------------------------------------------------------------------------
# structural analysis


def sample_neighbor(kernel: Kernel, v: int | VertexLabel, rng: np.random.Generator) -> int:
    bits = v.bits if isinstance(v, VertexLabel) else v
    return int(kernel.sample(np.array([bits]), rng)[0])


def dense_matrix(kernel: Kernel) -> np.ndarray:
    return kernel.dense_matrix()


@lru_cache(maxsize=None)
def mixture_degree(n_bits: int, k: int) -> int:
    """Support size of (1/k) sum_{i<=k} P^i by the recursion over (N, k)."""
    if not 1 <= k <= n_bits:
        raise ValueError(f"k must be in [1, {n_bits}], got {k}")
    if k == 1:
        return n_bits
    if k == n_bits:
        return 1 << n_bits
    if k == 2:
        return n_bits + mixture_degree(n_bits - 1, 2)
    return mixture_degree(n_bits - 1, k - 1) + mixture_degree(n_bits - 1, k)


def degree(kernel: Kernel) -> int:
    if isinstance(kernel, Mixture):
        return mixture_degree(kernel.n_bits, kernel.k)
    return kernel.support_size()


def min_nonzero_entry_power(n_bits: int, i: int) -> Fraction:
    """Smallest nonzero entry of P^i, i.e. i! / N^i."""
    if not 0 <= i <= n_bits:
        raise ValueError(f"i must be in [0, {n_bits}], got {i}")
    return Fraction(math.factorial(i), n_bits**i)


def _connected(adj: np.ndarray) -> bool:
    sym = adj | adj.T
    seen = np.zeros(sym.shape[0], dtype=bool)
    seen[0] = True
    frontier = np.array([0])
    while frontier.size:
        nxt = np.flatnonzero(sym[frontier].any(axis=0) & ~seen)
        seen[nxt] = True
        frontier = nxt
    return bool(seen.all())


def _two_colour(n: int, neighbours_of) -> bool:
    """BFS 2-colouring; ``neighbours_of(frontier)`` returns (src_idx, dst) pairs."""
    colour = np.full(n, -1, dtype=np.int8)
    colour[0] = 0
    frontier = np.array([0], dtype=np.int64)
    ok = True
    while frontier.size:
        src, dst = neighbours_of(frontier)
        want = 1 - colour[frontier[src]]
        have = colour[dst]
        if ((have >= 0) & (have != want)).any():
            ok = False
        fresh = have < 0
        dst_new, idx = np.unique(dst[fresh], return_index=True)
        colour[dst_new] = want[fresh][idx]
        frontier = dst_new
    if (colour < 0).any():
        raise DisconnectedKernelError("kernel support graph is not connected")
    return ok


def is_bipartite(kernel: Kernel) -> bool:
    """2-colourability of the (undirected) support graph.

    Raises DisconnectedKernelError when the support is not connected.
    """
    if isinstance(kernel, CompleteGraph):
        return kernel.n == 2
    if isinstance(kernel, CompleteBipartite):
        return True
    n = kernel.n_states
    if n > 1 << 20:
        raise GuardError("bipartite-size", f"{n} states exceeds 2^20")
    md = kernel.mask_distribution(limit=MAX_BFS_WORK // n)
    if md is not None:
        masks = md[0]

        def nbrs(frontier):
            dst = (frontier[:, None] ^ masks[None, :]).ravel()
            src = np.repeat(np.arange(frontier.size), masks.size)
            return src, dst

        return _two_colour(n, nbrs)
    if n > MAX_DENSE_STATES and kernel.weight_law() is not None:
        raise GuardError("bipartite-work", "support too large for BFS")
    m = kernel.dense_matrix()
    adj = (m > 0) | (m > 0).T

    def nbrs(frontier):
        src, dst = np.nonzero(adj[frontier])
        return src, dst.astype(np.int64)

    return _two_colour(n, nbrs)


def _hypercube_neighbour_sets(n_bits: int) -> list[int]:
    """Neighbourhood of each vertex of H_N as a 2^N-bit integer set."""
    return [sum(1 << (v ^ (1 << b)) for b in range(n_bits)) for v in range(1 << n_bits)]


def common_neighbors(n_bits: int, vertices) -> int:
    """Size of the intersection of the H_N neighbourhoods of ``vertices``."""
    sets = _hypercube_neighbour_sets(n_bits)
    acc = (1 << (1 << n_bits)) - 1
    for v in vertices:
        acc &= sets[v]
    return acc.bit_count()


def max_common_neighbors(kernel: SingleFlip, s: int) -> int:
    """Largest common neighbourhood over all s-subsets of distinct vertices (exhaustive)."""
    if not isinstance(kernel, SingleFlip):
        raise TypeError("max_common_neighbors is defined for SingleFlip only")
    if kernel.n_bits > 5 or not 2 <= s <= 4:
        raise GuardError("enumeration", "requires N <= 5 and 2 <= s <= 4")
    sets = _hypercube_neighbour_sets(kernel.n_bits)
    best = 0
    for combo in itertools.combinations(range(kernel.n_states), s):
        acc = sets[combo[0]]
        for v in combo[1:]:
            acc &= sets[v]
        best = max(best, acc.bit_count())
    return best


# --------------------------------------------------------------------------
# config round trip


def kernel_from_config(cfg: Mapping) -> Kernel:
    """Build a kernel from ``{kind, n_bits, k, p_stay[, base, n, half]}``."""
    kind = cfg.get("kind")
    if kind not in KINDS:
        raise ValueError(f"unknown kernel kind {kind!r}; expected one of {KINDS}")
    n_bits = cfg.get("n_bits")
    if kind == "single_flip":
        return SingleFlip(int(n_bits))
    if kind == "power":
        return Power(int(n_bits), int(cfg.get("k", 1)))
    if kind == "mixture":
        return Mixture(int(n_bits), int(cfg.get("k", 1)))
    if kind == "lazy":
        base_cfg = cfg.get("base")
        if base_cfg is None:
            base_cfg = {"kind": "single_flip", "n_bits": n_bits}
        return Lazy(kernel_from_config(base_cfg), float(cfg.get("p_stay", 0.5)))
    if kind == "complete":
        n = cfg.get("n")
        return CompleteGraph(int(n) if n is not None else 1 << int(n_bits))
    half = cfg.get("half")
    return CompleteBipartite(int(half) if half is not None else 1 << (int(n_bits) - 1))


def load_config(path: str | Path) -> dict:
    """Read a JSON or YAML mapping from disk."""
    path = Path(path)
    text = path.read_text()
    if path.suffix in (".yaml", ".yml"):
        import yaml

        data = yaml.safe_load(text)
    else:
        data = json.loads(text)
    if not isinstance(data, dict):
        raise ValueError(f"{path}: expected a mapping at top level")
    return data


def neighbour_closure(kernel: Kernel, labels: np.ndarray) -> np.ndarray:
    """Union of supports of all ``labels`` (used by invariant checks)."""
    if labels.size == 0:
        return labels
    md = kernel.mask_distribution(limit=1 << 22)
    if md is not None:
        return np.unique((labels[:, None] ^ md[0][None, :]).ravel())
    return np.unique(np.concatenate([kernel.neighbours(int(v)) for v in labels]))


__all__ = [
    "VertexLabel", "hamming", "affinity", "affinity_array", "popcount",
    "Kernel", "SingleFlip", "Power", "Mixture", "Lazy", "CompleteGraph",
    "CompleteBipartite", "ExplicitMatrix", "sample_neighbor", "dense_matrix",
    "degree", "mixture_degree", "min_nonzero_entry_power", "is_bipartite",
    "common_neighbors", "max_common_neighbors", "kernel_from_config",
    "load_config", "neighbour_closure",
]
