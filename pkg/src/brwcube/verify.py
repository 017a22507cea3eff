"""Brute-force oracle suites behind ``brwcube verify``.

Each suite returns a list of :class:`Check` records; a suite passes when all
its checks do. The oracles here never reuse the closed forms they test.
"""
from __future__ import annotations

from collections import defaultdict
from dataclasses import asdict, dataclass

import numpy as np

from .kernels import CompleteGraph, SingleFlip, mixture_degree, min_nonzero_entry_power, popcount
from .sim import Population, SimConfig, replica_rng, run
from .spectral import lambda2_mixture, verify_expander_bruteforce
from .stats import binomial_pmf, conditional_chi_square

SUITES = ("expander", "spectra", "min-entry", "degree", "binomial", "parity")


@dataclass
class Check:
    suite: str
    check: str
    oracle: str
    tolerance: str
    passed: bool
    detail: str = ""

    def to_dict(self) -> dict:
        return asdict(self)


def _powers(n_bits: int, k: int) -> list[np.ndarray]:
    """Dense P, P^2, ..., P^k of the single-flip kernel."""
    p = SingleFlip(n_bits).dense_matrix()
    out = [p]
    for _ in range(k - 1):
        out.append(out[-1] @ p)
    return out


def _parity_vectors(n_bits: int) -> list[np.ndarray]:
    """One character (-1)^{|S & x|} per subset weight 1..N (S = lowest w bits)."""
    x = np.arange(1 << n_bits, dtype=np.int64)
    return [(-1.0) ** popcount(x & ((1 << w) - 1)) for w in range(1, n_bits + 1)]


# --------------------------------------------------------------------------
# suites


def suite_expander(max_bits: int = 4) -> list[Check]:
    checks = []
    for n in range(1, max_bits + 1):
        for r in range(1, n + 1):
            ok = verify_expander_bruteforce(SingleFlip(n), r)
            checks.append(
                Check("expander", f"N={n} r={r}", "exhaustive subset enumeration", "exact", ok,
                      "" if ok else f"some S with |S| <= 2^{n - r} has |N(S)| < {r}|S|")
            )
    return checks


def suite_spectra(max_bits: int = 8, tol: float = 1e-10) -> list[Check]:
    checks = []
    for n in range(2, max_bits + 1):
        pw = _powers(n, n)
        chis = _parity_vectors(n)
        cum = np.zeros_like(pw[0])
        for k in range(1, n + 1):
            cum = cum + pw[k - 1]
            mix = cum / k
            # every character is an eigenvector; read its eigenvalue off one coordinate
            eig = [float((mix @ chi)[0] / chi[0]) for chi in chis]
            resid = max(float(np.abs(mix @ chi - e * chi).max()) for chi, e in zip(chis, eig))
            got = max(eig)
            want = lambda2_mixture(n, k)
            ok = abs(got - want) <= tol and resid <= tol
            checks.append(
                Check("spectra", f"lambda2 N={n} k={k}", "dense mixture applied to parity characters",
                      f"abs {tol:g}", ok, f"oracle={got!r} closed={want!r} resid={resid:.1e}")
            )
    return checks


def suite_min_entry(max_bits: int = 8, tol: float = 1e-10) -> list[Check]:
    checks = []
    for n in range(1, max_bits + 1):
        for i, m in enumerate(_powers(n, n), start=1):
            got = float(m[m > 0].min())
            want = float(min_nonzero_entry_power(n, i))
            ok = abs(got - want) <= tol * want
            checks.append(
                Check("min-entry", f"M N={n} i={i}", "minimum positive entry of dense P^i",
                      f"rel {tol:g}", ok, f"oracle={got!r} closed={want!r}")
            )
    return checks


def suite_degree(max_bits: int = 10) -> list[Check]:
    checks = []
    for n in range(1, max_bits + 1):
        cum = None
        for k, m in enumerate(_powers(n, n), start=1):
            cum = m.copy() if cum is None else cum + m
            nnz = np.count_nonzero(cum > 0, axis=1)
            want = mixture_degree(n, k)
            ok = bool((nnz == want).all())
            checks.append(
                Check("degree", f"d N={n} k={k}", "nonzero count of every row of sum_i P^i",
                      "exact", ok, f"oracle={sorted(set(nnz.tolist()))} recursion={want}")
            )
    return checks


def conditional_samples_hypercube(n_bits=3, c=2, steps=8, samples=100_000, seed=0):
    """Observed X_t^i grouped by the neighbour total n = sum_{j~i} X_{t-1}^j.

    One vertex is read per step (parity chosen so it can be occupied), which
    keeps the samples a martingale sequence within each replica.
    """
    kernel = SingleFlip(n_bits)
    cfg = SimConfig(kernel, c=c, mode="multiplicity", steps=steps, seed=seed, snapshot_every=1)
    nbrs = {i: kernel.neighbours(i) for i in (0, 1)}
    groups = defaultdict(lambda: defaultdict(int))
    taken, r = 0, 0
    while taken < samples:
        snaps = run(cfg, replica_rng(seed, r)).snapshots
        r += 1
        for t in range(1, steps + 1):
            i = t % 2
            n = sum(snaps[t - 1].count_at(int(j)) for j in nbrs[i])
            groups[n][snaps[t].count_at(i)] += 1
            taken += 1
            if taken == samples:
                break
    return groups


def conditional_samples_complete(d=4, c=2, steps=8, samples=100_000, seed=0):
    """Observed X_t^0 on K_d grouped by (t, X_{t-1}^0)."""
    cfg = SimConfig(CompleteGraph(d), c=c, mode="multiplicity", steps=steps, seed=seed, snapshot_every=1)
    groups = defaultdict(lambda: defaultdict(int))
    taken, r = 0, 0
    while taken < samples:
        snaps = run(cfg, replica_rng(seed, r)).snapshots
        r += 1
        for t in range(1, steps + 1):
            groups[(t, snaps[t - 1].count_at(0))][snaps[t].count_at(0)] += 1
            taken += 1
            if taken == samples:
                break
    return groups


def _table(hist: dict, size: int) -> np.ndarray:
    obs = np.zeros(size)
    for s, cnt in hist.items():
        obs[s] += cnt
    return obs


def binomial_gof_hypercube(n_bits=3, c=2, samples=100_000, seed=0):
    """(stat, dof, p) for X_t^i | n ~ Binomial(c n, 1/N) on the hypercube."""
    groups = conditional_samples_hypercube(n_bits, c, samples=samples, seed=seed)
    pairs = [(_table(h, c * n + 1), binomial_pmf(c * n, 1.0 / n_bits)) for n, h in sorted(groups.items())]
    return conditional_chi_square(pairs)


def binomial_gof_complete(d=4, c=2, samples=100_000, seed=0):
    """(stat, dof, p) for X_t^i | X_{t-1}^i = s' ~ Binomial(c^t - c s', 1/(d-1)) on K_d."""
    groups = conditional_samples_complete(d, c, samples=samples, seed=seed)
    pairs = []
    for (t, s_prev), h in sorted(groups.items()):
        trials = c**t - c * s_prev
        pairs.append((_table(h, trials + 1), binomial_pmf(trials, 1.0 / (d - 1))))
    return conditional_chi_square(pairs)


def suite_binomial(samples: int = 100_000, seed: int = 0, alpha: float = 0.01) -> list[Check]:
    checks = []
    stat, dof, p = binomial_gof_hypercube(samples=samples, seed=seed)
    checks.append(
        Check("binomial", "hypercube N=3 c=2: X_t^i | neighbour total n", "Binomial(cn, 1/N) chi-square",
              f"p > {alpha}", p > alpha, f"chi2={stat:.2f} dof={dof} p={p:.4f} samples={samples}")
    )
    stat, dof, p = binomial_gof_complete(samples=samples, seed=seed)
    checks.append(
        Check("binomial", "complete K_4 c=2: X_t^i | X_{t-1}^i", "Binomial(c^t - c s', 1/(d-1)) chi-square",
              f"p > {alpha}", p > alpha, f"chi2={stat:.2f} dof={dof} p={p:.4f} samples={samples}")
    )
    return checks


def parity_violations(traj_snaps: dict) -> int:
    """Occupied labels whose bit parity differs from the step parity (start at 0)."""
    bad = 0
    for t, snap in traj_snaps.items():
        labels = snap.labels if isinstance(snap, Population) else snap
        bad += int(np.count_nonzero(popcount(labels) % 2 != t % 2))
    return bad


def suite_parity(n_bits: int = 8, replicas: int = 50, steps: int = 12, seed: int = 0) -> list[Check]:
    checks = []
    for mode in ("simple", "multiplicity"):
        cfg = SimConfig(SingleFlip(n_bits), c=2, mode=mode, steps=steps, seed=seed, snapshot_every=1)
        bad = sum(parity_violations(run(cfg, replica_rng(seed, r)).snapshots) for r in range(replicas))
        checks.append(
            Check("parity", f"{mode} N={n_bits} {replicas} replicas", "popcount parity of every occupied label",
                  "exact", bad == 0, f"violations={bad}")
        )
    return checks


_RUNNERS = {
    "expander": suite_expander,
    "spectra": suite_spectra,
    "min-entry": suite_min_entry,
    "degree": suite_degree,
    "binomial": suite_binomial,
    "parity": suite_parity,
}


def run_suite(name: str) -> list[Check]:
    if name not in _RUNNERS:
        raise ValueError(f"unknown suite {name!r}; choose from {SUITES}")
    return _RUNNERS[name]()


def first_failure(checks) -> Check | None:
    return next((c for c in checks if not c.passed), None)

