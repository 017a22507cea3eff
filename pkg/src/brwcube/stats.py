"""Monte-Carlo aggregation and the statistical tests used for validation."""
from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .sim import SimConfig, Trajectory, replica_rng, run


class ReplicaError(RuntimeError):
    """A replica raised; ``replica`` is its index and ``__cause__`` the original error."""

    def __init__(self, replica: int, exc: BaseException):
        super().__init__(f"replica {replica} failed: {exc}")
        self.replica = replica


@dataclass
class Aggregate:
    """Per-step means and standard errors over replicas.

    Standard errors are sample standard deviation (ddof=1) over sqrt(n).
    ``histograms`` is the affinity histogram summed over replicas, if tracked.
    """

    config_digest: str
    n: int
    s_mean: np.ndarray
    s_se: np.ndarray
    z_mean: np.ndarray
    z_se: np.ndarray
    histograms: np.ndarray | None = None
    active_counts: np.ndarray | None = None

    @classmethod
    def from_trajectories(cls, trajectories, config_digest: str = "") -> "Aggregate":
        """Aggregate ``(replica_index, Trajectory)`` pairs; order of arrival is irrelevant."""
        items = sorted(trajectories, key=lambda it: it[0])
        if len(items) < 2:
            raise ValueError("need at least two replicas for a standard error")
        s = np.stack([tr.active_count for _, tr in items]).astype(float)
        z = np.stack([tr.population for _, tr in items]).astype(float)
        n = len(items)
        hist = None
        if items[0][1].affinity_hist is not None:
            hist = np.sum([tr.affinity_hist for _, tr in items], axis=0)
        return cls(
            config_digest=config_digest,
            n=n,
            s_mean=s.mean(axis=0),
            s_se=s.std(axis=0, ddof=1) / math.sqrt(n),
            z_mean=z.mean(axis=0),
            z_se=z.std(axis=0, ddof=1) / math.sqrt(n),
            histograms=hist,
            active_counts=s.astype(np.int64),
        )

    def to_json(self) -> dict:
        per_step = [
            {
                "t": t,
                "s_mean": float(self.s_mean[t]),
                "s_se": float(self.s_se[t]),
                "z_mean": float(self.z_mean[t]),
                "z_se": float(self.z_se[t]),
            }
            for t in range(self.s_mean.size)
        ]
        return {
            "config_digest": self.config_digest,
            "n": self.n,
            "per_step": per_step,
            "histograms": self.histograms.astype(int).tolist() if self.histograms is not None else None,
        }

    def csv_rows(self):
        header = ["t", "s_mean", "s_se", "z_mean", "z_se"]
        rows = [
            [t, repr(float(self.s_mean[t])), repr(float(self.s_se[t])), repr(float(self.z_mean[t])), repr(float(self.z_se[t]))]
            for t in range(self.s_mean.size)
        ]
        return header, rows


def _run_replica(args) -> tuple[int, Trajectory]:
    config, seed, r = args
    try:
        return r, run(config, replica_rng(seed, r))
    except Exception as exc:  # noqa: BLE001 - re-raised with the replica index
        raise ReplicaError(r, exc) from exc


def run_replicas(config: SimConfig, replicas: int, seed: int | None = None, workers: int = 1):
    """Run replicas 0..replicas-1; returns ``[(index, Trajectory), ...]`` sorted by index."""
    if replicas < 1:
        raise ValueError("replicas must be >= 1")
    config.check_horizon()
    seed = config.seed if seed is None else seed
    jobs = [(config, seed, r) for r in range(replicas)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            out = list(pool.map(_run_replica, jobs))
    else:
        out = [_run_replica(j) for j in jobs]
    return sorted(out, key=lambda it: it[0])


def monte_carlo(config: SimConfig, replicas: int, seed: int | None = None, workers: int = 1) -> Aggregate:
    if replicas < 2:
        raise ValueError("replicas must be >= 2")
    return Aggregate.from_trajectories(run_replicas(config, replicas, seed, workers), config.digest())


def growth_ratios(active_counts: np.ndarray, cap: float) -> np.ndarray:
    """All ratios |S_{t+1}| / |S_t| over replicas (rows) while |S_t| <= cap."""
    s = np.asarray(active_counts, dtype=float)
    now, nxt = s[:, :-1], s[:, 1:]
    mask = now <= cap
    return nxt[mask] / now[mask]


# --------------------------------------------------------------------------
# distances and tests


def tv_distance(a, b) -> float:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"length mismatch: {a.shape} vs {b.shape}")
    for v in (a, b):
        if abs(v.sum() - 1.0) > 1e-9 or (v < 0).any():
            raise ValueError("inputs must be probability vectors")
    return 0.5 * float(np.abs(a - b).sum())


def _gamma_series(a: float, x: float) -> float:
    """Regularised lower incomplete gamma P(a, x) by its power series."""
    term = total = 1.0 / a
    ap = a
    for _ in range(10_000):
        ap += 1.0
        term *= x / ap
        total += term
        if abs(term) < abs(total) * 1e-16:
            break
    return total * math.exp(-x + a * math.log(x) - math.lgamma(a))


def _gamma_cont_frac(a: float, x: float) -> float:
    """Regularised upper incomplete gamma Q(a, x) by Lentz's continued fraction."""
    tiny = 1e-300
    b = x + 1.0 - a
    c = 1.0 / tiny
    d = 1.0 / b
    h = d
    for i in range(1, 10_000):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        d = tiny if abs(d) < tiny else d
        c = b + an / c
        c = tiny if abs(c) < tiny else c
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < 1e-16:
            break
    return h * math.exp(-x + a * math.log(x) - math.lgamma(a))


def gamma_q(a: float, x: float) -> float:
    """Regularised upper incomplete gamma function Q(a, x)."""
    if a <= 0:
        raise ValueError("a must be > 0")
    if x < 0:
        raise ValueError("x must be >= 0")
    if x == 0:
        return 1.0
    if x < a + 1.0:
        return 1.0 - _gamma_series(a, x)
    return _gamma_cont_frac(a, x)


def chi2_sf(stat: float, dof: int) -> float:
    return gamma_q(dof / 2.0, stat / 2.0)


def pool_cells(observed, expected, min_expected: float = 5.0):
    """Merge adjacent cells left to right until each expected count reaches ``min_expected``."""
    obs_out, exp_out = [], []
    o_acc = e_acc = 0.0
    for o, e in zip(observed, expected):
        o_acc += o
        e_acc += e
        if e_acc >= min_expected:
            obs_out.append(o_acc)
            exp_out.append(e_acc)
            o_acc = e_acc = 0.0
    if e_acc > 0 or o_acc > 0:
        if exp_out:
            obs_out[-1] += o_acc
            exp_out[-1] += e_acc
        else:
            obs_out.append(o_acc)
            exp_out.append(e_acc)
    return np.array(obs_out), np.array(exp_out)


def chi_square_test(observed, expected_probs, min_expected: float = 5.0) -> tuple[float, int, float]:
    """Pearson goodness of fit; returns (statistic, degrees of freedom, p-value)."""
    observed = np.asarray(observed, dtype=float)
    probs = np.asarray(expected_probs, dtype=float)
    if observed.shape != probs.shape:
        raise ValueError("observed and expected lengths differ")
    if (probs < 0).any() or abs(probs.sum() - 1.0) > 1e-9:
        raise ValueError("expected probabilities must form a distribution")
    n = observed.sum()
    obs, exp = pool_cells(observed, probs * n, min_expected)
    if obs.size < 2:
        raise ValueError("fewer than two cells after pooling")
    stat = float(((obs - exp) ** 2 / exp).sum())
    dof = obs.size - 1
    return stat, dof, chi2_sf(stat, dof)


def chi_square_gof(observed, expected_probs, min_expected: float = 5.0) -> float:
    """p-value of the Pearson chi-square test after pooling sparse cells."""
    return chi_square_test(observed, expected_probs, min_expected)[2]


def binomial_pmf(n: int, q: float) -> np.ndarray:
    """Binomial(n, q) probabilities for 0..n, computed in log space."""
    k = np.arange(n + 1)
    if q in (0.0, 1.0):
        out = np.zeros(n + 1)
        out[0 if q == 0.0 else n] = 1.0
        return out
    logc = np.array([math.lgamma(n + 1) - math.lgamma(i + 1) - math.lgamma(n - i + 1) for i in k])
    return np.exp(logc + k * math.log(q) + (n - k) * math.log1p(-q))


def conditional_chi_square(groups, min_expected: float = 5.0) -> tuple[float, int, float]:
    """Pearson test of a conditional law, summed over conditioning groups.

    ``groups`` yields ``(observed, expected_probs)`` per value of the
    conditioning variable. Each group is pooled on its own; a group left with
    a single cell carries no information and is skipped.
    """
    stat, dof = 0.0, 0
    for observed, probs in groups:
        observed = np.asarray(observed, dtype=float)
        probs = np.asarray(probs, dtype=float)
        if observed.shape != probs.shape:
            raise ValueError("observed and expected lengths differ")
        obs, exp = pool_cells(observed, probs * observed.sum(), min_expected)
        if obs.size < 2:
            continue
        stat += float(((obs - exp) ** 2 / exp).sum())
        dof += obs.size - 1
    if dof == 0:
        raise ValueError("no group has two cells after pooling")
    return stat, dof, chi2_sf(stat, dof)
