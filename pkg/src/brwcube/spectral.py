"""Closed-form spectra, vertex-expansion bounds and partial-cover thresholds.

Everything here is a pure function of its numeric inputs. The brute-force
expansion verifier at the bottom enumerates every vertex subset of a small
hypercube and is the ground truth the closed forms are checked against.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import GuardError
from .kernels import Mixture, SingleFlip, is_bipartite, min_nonzero_entry_power, mixture_degree

E2 = math.exp(-2.0)


@dataclass(frozen=True)
class SpectrumSummary:
    lambda2: float
    degree: int
    state_count: int
    bipartite: bool


@dataclass(frozen=True)
class CoverThresholds:
    """Partial-cover constants for one (N, k).

    ``delta_nk`` is the raw formula capped at 1; ``delta_usable`` is further
    capped at 1/2, the largest set size the expansion argument covers.
    """

    r_exact: float
    r_simplified: float
    delta_nk: float
    delta_usable: float
    delta_ceiling: float
    nu_max: float


def lambda2_mixture(n_bits: int, k: int) -> float:
    """Second largest eigenvalue of the mixture kernel (1/k) sum_{i<=k} P^i."""
    if n_bits < 2:
        raise ValueError("N must be >= 2")
    if not 1 <= k <= n_bits:
        raise ValueError(f"k must be in [1, {n_bits}], got {k}")
    x = (n_bits - 2) / n_bits
    return (n_bits - 2) / (2 * k) * (1 - x**k)


def spectrum_summary(n_bits: int, k: int) -> SpectrumSummary:
    bip = k == 1
    if n_bits <= 20:
        bip = is_bipartite(Mixture(n_bits, k))
    return SpectrumSummary(
        lambda2=lambda2_mixture(n_bits, k),
        degree=mixture_degree(n_bits, k),
        state_count=1 << n_bits,
        bipartite=bip,
    )


def tanner_bound(set_size: int, n: int, d: int, lambda_normalized: float) -> float:
    """Lower bound on |N(S)| for |S| <= n/2 given the normalised eigenvalue bound.

    ``d`` is kept for signature parity with the adjacency form; the
    eigenvalue is already divided by it.
    """
    if not 0 < set_size <= n / 2:
        raise ValueError(f"set_size must be in (0, n/2], got {set_size} with n={n}")
    if not 0 <= lambda_normalized < 1:
        raise ValueError("lambda_normalized must be in [0, 1)")
    lam2 = lambda_normalized**2
    return set_size / (lam2 + (1 - lam2) * set_size / n)


def eps_expander_bound(set_size: float, eps: float, delta: float) -> float:
    """|N(S)| >= |S| / (eps^2 (1 - delta) + delta) for |S| <= delta n."""
    return set_size / (eps**2 * (1 - delta) + delta)


def alpha_from_lambda(lambda2: float, delta: float) -> float:
    """Expansion factor alpha of a non-bipartite graph for sets up to ``delta n``."""
    if not 0 < delta <= 0.5:
        raise ValueError(f"delta must be in (0, 1/2], got {delta}")
    if not 0 <= lambda2 < 1:
        raise ValueError("lambda2 must be in [0, 1)")
    return 1.0 / (lambda2**2 * (1 - delta) + delta)


def r_threshold(n_bits: int) -> tuple[float, float]:
    """(exact, simplified) lower thresholds on r for exponential growth of the 2-BRW on H_N."""
    if n_bits < 3:
        raise ValueError("r(N) needs N >= 3")
    N = n_bits
    e2n = math.exp(-2.0 / N)
    r_exact = (N * E2 + N - 1 - N * e2n) / (E2 + N - 1 - N * e2n)
    r_simplified = (N * N * E2 + N - 2) / (N * E2 + N - 2)
    return r_exact, r_simplified


def r_integer(n_bits: int) -> int:
    """Integer r used downstream: ceil of the simplified threshold, kept in [1, N]."""
    return min(max(math.ceil(r_threshold(n_bits)[1]), 1), n_bits)


def r_of_nu(n_bits: int, nu: float) -> float:
    """Smallest r guaranteeing mean growth factor (1 + nu) while |S_t| <= 2^{N-r}."""
    if n_bits < 3:
        raise ValueError("needs N >= 3")
    if nu <= 0:
        raise ValueError("nu must be > 0")
    N = n_bits
    e2n = math.exp(-2.0 / N)
    return (nu * (N - 1) + N * E2 - N * e2n + N - 1) / (E2 - N * e2n + N - 1)


def nu_star(n_bits: int) -> float:
    """Largest growth rate with r_N(nu) <= N."""
    return n_bits - 1 - n_bits * math.exp(-2.0 / n_bits)


def mean_min_entry(n_bits: int, k: int) -> float:
    """(1/k) sum_{i=1..k} i!/N^i: the smallest nonzero mixture transition probability bound."""
    return float(sum(min_nonzero_entry_power(n_bits, i) for i in range(1, k + 1)) / k)


def delta_nk_raw(n_bits: int, k: int) -> float:
    """Covered fraction constant for the 2-BRW on the mixture kernel (no capping).

    For k = 1 the hypercube threshold 2^-r is returned instead.
    """
    if n_bits < 3:
        raise ValueError("needs N >= 3")
    if not 1 <= k <= n_bits:
        raise ValueError(f"k must be in [1, {n_bits}], got {k}")
    if k == 1:
        return 2.0 ** -r_integer(n_bits)
    d = mixture_degree(n_bits, k)
    lam2 = lambda2_mixture(n_bits, k) ** 2
    big_delta = mean_min_entry(n_bits, k)
    # underflows to 0 for large N, where the term vanishes anyway
    e_d = math.exp(-2.0 * big_delta * d)
    e_1 = math.exp(-2.0 * big_delta)
    num = e_d - d * e_1 + d - 1
    den = (1 - lam2) * (d * e_d - d * e_1 + d - 1)
    return num / den - lam2 / (1 - lam2)


def delta_nk(n_bits: int, k: int) -> float:
    """Raw constant capped to (0, 1]."""
    raw = delta_nk_raw(n_bits, k)
    return min(max(raw, np.nextafter(0.0, 1.0)), 1.0)


def delta_nk_usable(n_bits: int, k: int) -> float:
    return min(delta_nk(n_bits, k), 0.5)


def delta_ceiling_raw(d: int, lambda2: float) -> float:
    """Best coverage fraction provable for any d-regular non-bipartite kernel (uncapped)."""
    if d < 2:
        raise ValueError("d must be >= 2")
    if not 0 <= lambda2 < 1:
        raise ValueError("lambda2 must be in [0, 1)")
    lam2 = lambda2**2
    return (d * E2 + d - 2) / ((1 - lam2) * (d * d * E2 + d - 2)) - lam2 / (1 - lam2)


def delta_ceiling(d: int, lambda2: float) -> float:
    """``delta_ceiling_raw`` clamped into [0, 1/2]."""
    return min(max(delta_ceiling_raw(d, lambda2), 0.0), 0.5)


def cover_thresholds(n_bits: int, k: int) -> CoverThresholds:
    r_exact, r_simpl = r_threshold(n_bits)
    return CoverThresholds(
        r_exact=r_exact,
        r_simplified=r_simpl,
        delta_nk=delta_nk(n_bits, k),
        delta_usable=delta_nk_usable(n_bits, k),
        delta_ceiling=delta_ceiling(mixture_degree(n_bits, k), lambda2_mixture(n_bits, k)),
        nu_max=nu_star(n_bits),
    )


def bounds_rows(n_bits: int, ks) -> list[dict]:
    """One record per k with the columns of the ``bounds`` CSV."""
    r_exact, r_simpl = r_threshold(n_bits)
    rows = []
    for k in ks:
        d = mixture_degree(n_bits, k)
        lam = lambda2_mixture(n_bits, k)
        rows.append(
            {
                "N": n_bits,
                "k": k,
                "lambda2": lam,
                "degree": d,
                "Delta": mean_min_entry(n_bits, k),
                "delta_raw": delta_nk(n_bits, k),
                "delta_usable": delta_nk_usable(n_bits, k),
                "r_exact": r_exact,
                "r_simplified": r_simpl,
                "delta_ceiling": delta_ceiling(d, lam),
            }
        )
    return rows


# --------------------------------------------------------------------------
# brute force


def subset_neighbourhood_sizes(kernel, max_states: int = 16) -> tuple[np.ndarray, np.ndarray]:
    """|S| and |N(S)| for every subset S of the state space, indexed by bitmask.

    Only feasible for at most 16 states (65,536 subsets).
    """
    n = kernel.n_states
    if n > max_states:
        raise GuardError("enumeration", f"{n} states; subset enumeration limited to {max_states}")
    nb_sets = np.zeros(n, dtype=np.int64)
    for v in range(n):
        for w in kernel.neighbours(v):
            nb_sets[v] |= np.int64(1) << int(w)
    subsets = np.arange(1 << n, dtype=np.int64)
    union = np.zeros(1 << n, dtype=np.int64)
    for v in range(n):
        has_v = (subsets >> v) & 1 == 1
        union[has_v] |= nb_sets[v]
    return np.bitwise_count(subsets).astype(np.int64), np.bitwise_count(union).astype(np.int64)


def verify_expander_bruteforce(kernel: SingleFlip, r: int) -> bool:
    """Check |N(S)| >= r|S| for every S with |S| <= 2^{N-r} by exhaustive enumeration."""
    if not isinstance(kernel, SingleFlip):
        raise TypeError("expects a SingleFlip kernel")
    if kernel.n_bits > 4:
        raise GuardError("enumeration", "N <= 4 required (2^(2^N) subsets)")
    if not 1 <= r <= kernel.n_bits:
        raise ValueError(f"r must be in [1, {kernel.n_bits}], got {r}")
    size, nbhd = subset_neighbourhood_sizes(kernel)
    small = size <= 1 << (kernel.n_bits - r)
    return bool(np.all(nbhd[small] >= r * size[small]))
