import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import chi2_contingency

from brwcube import sim
from brwcube.errors import GuardError
from brwcube.kernels import (
    CompleteBipartite,
    CompleteGraph,
    ExplicitMatrix,
    Lazy,
    Mixture,
    Power,
    SingleFlip,
    neighbour_closure,
)
from brwcube.sim import (
    Population,
    SimConfig,
    detect_full_cover,
    partial_cover_time,
    place_children,
    propagate_expectation,
    replica_rng,
    run,
    step_function_table,
)
from brwcube.stats import binomial_pmf, chi_square_test, tv_distance
from brwcube.verify import parity_violations


def _labels(snap):
    return snap.labels if isinstance(snap, Population) else snap


# --------------------------------------------------------------------------
# exact invariants


@pytest.mark.parametrize("c", [2, 3])
@pytest.mark.parametrize("kernel", [SingleFlip(6), Mixture(6, 3), CompleteGraph(9), Lazy(SingleFlip(5))], ids=repr)
def test_multiplicity_conserves_c_to_the_t(kernel, c):
    t = 12 if c == 2 else 8
    traj = run(SimConfig(kernel, c=c, mode="multiplicity", steps=t, seed=3))
    assert traj.population.tolist() == [c**s for s in range(t + 1)]


def test_multiplicity_exact_at_2_62():
    traj = run(SimConfig(SingleFlip(3), c=2, mode="multiplicity", steps=62, seed=1))
    assert int(traj.population[-1]) == 2**62
    assert traj.active_count[-1] == 4  # bipartite: one parity class


@pytest.mark.parametrize(
    "kernel,mode",
    [
        (SingleFlip(8), "simple"),
        (Mixture(7, 2), "simple"),
        (Power(7, 3), "simple"),
        (CompleteBipartite(16), "simple"),
        (SingleFlip(6), "multiplicity"),
        (CompleteGraph(12), "multiplicity"),
    ],
    ids=str,
)
def test_active_set_stays_in_neighbourhood(kernel, mode):
    cfg = SimConfig(kernel, c=2, mode=mode, steps=10, seed=11, snapshot_every=1)
    for r in range(5):
        snaps = run(cfg, replica_rng(11, r)).snapshots
        for t in range(1, 11):
            nxt = _labels(snaps[t])
            assert np.isin(nxt, neighbour_closure(kernel, _labels(snaps[t - 1]))).all()


@pytest.mark.parametrize("mode", ["simple", "multiplicity"])
def test_parity_law(mode):
    cfg = SimConfig(SingleFlip(8), c=2, mode=mode, steps=12, seed=5, snapshot_every=1)
    for r in range(10):
        assert parity_violations(run(cfg, replica_rng(5, r)).snapshots) == 0


def test_simple_mode_population_equals_active():
    traj = run(SimConfig(Mixture(8, 3), steps=10, seed=2))
    np.testing.assert_array_equal(traj.population, traj.active_count)
    assert traj.active_count[0] == 1
    assert (traj.active_count[1:] <= 2 * traj.active_count[:-1]).all()


def test_division_rate_bounds():
    traj = run(SimConfig(SingleFlip(7), mode="division_rate", p=0.6, steps=20, seed=4))
    z = traj.population
    assert (np.diff(z) >= 0).all()
    assert (z[1:] <= 2 * z[:-1]).all()


def test_reruns_identical_and_replicas_differ():
    cfg = SimConfig(Mixture(10, 3), c=2, mode="multiplicity", steps=10, seed=9, target=0)
    a, b = run(cfg, replica_rng(9, 4)), run(cfg, replica_rng(9, 4))
    assert a.to_dict() == b.to_dict()
    c = run(cfg, replica_rng(9, 5))
    assert a.to_dict() != c.to_dict()


def test_replica_rng_depends_only_on_seed_and_index():
    x = replica_rng(1, 2).integers(0, 2**62, 4)
    replica_rng(1, 1).integers(0, 2**62, 100)
    assert (replica_rng(1, 2).integers(0, 2**62, 4) == x).all()
    assert not (replica_rng(2, 2).integers(0, 2**62, 4) == x).all()


# --------------------------------------------------------------------------
# distributional checks against exact laws


def _row_after(kernel, t):
    return np.linalg.matrix_power(kernel.dense_matrix(), t)[0]


def naive_multiplicity_counts(n_bits, c, t, v, replicas, rng):
    """Per-particle genealogy: every particle copies itself c times, each copy flips one bit."""
    pos = np.zeros((replicas, 1), dtype=np.int64)
    for _ in range(t):
        pos = np.repeat(pos, c, axis=1)
        pos ^= np.int64(1) << rng.integers(0, n_bits, size=pos.shape)
    return (pos == v).sum(axis=1)


@pytest.mark.parametrize("t", [3, 10])
def test_multiplicity_matches_naive_stepping(t):
    """Vertex-count histogram of the library vs naive per-particle stepping.

    t=3 exercises per-child sampling, t=10 the multinomial route. Siblings
    share ancestry, so the law is not binomial; only the mean c^t P^t[0, v] is
    closed-form.
    """
    kernel = SingleFlip(3)
    cfg = SimConfig(kernel, c=2, mode="multiplicity", steps=t, seed=21, snapshot_every=t)
    v = 1 if t % 2 else 0
    ours = np.array([run(cfg, replica_rng(21, r)).snapshots[t].count_at(v) for r in range(4000)])
    naive = naive_multiplicity_counts(3, 2, t, v, 100_000, np.random.default_rng(99))
    mean = 2**t * _row_after(kernel, t)[v]
    assert abs(ours.mean() - mean) < 4 * ours.std(ddof=1) / np.sqrt(ours.size)
    assert abs(naive.mean() - mean) < 4 * naive.std(ddof=1) / np.sqrt(naive.size)
    size = max(ours.max(), naive.max()) + 1
    table = np.vstack([np.bincount(ours, minlength=size), np.bincount(naive, minlength=size)])
    table = table[:, table.sum(axis=0) >= 20]  # drop the sparse tail
    assert chi2_contingency(table)[1] > 1e-3


def test_mask_route_matches_dense_row():
    """One multinomial placement of 10^6 children follows the kernel row."""
    kernel = Mixture(4, 2)
    rng = np.random.default_rng(3)
    pop = place_children(np.array([0], dtype=np.int64), np.array([1_000_000]), kernel, rng)
    assert pop.total == 1_000_000
    _, _, p = chi_square_test(
        np.bincount(pop.labels, weights=pop.counts, minlength=16),
        kernel.dense_matrix()[0],
    )
    assert p > 1e-3


def test_dense_route_for_non_xor_kernel(monkeypatch):
    monkeypatch.setattr(sim, "PER_CHILD_LIMIT", 100)
    kernel = CompleteGraph(6)
    pop = place_children(np.array([2], dtype=np.int64), np.array([600_000]), kernel, np.random.default_rng(8))
    assert pop.total == 600_000 and pop.count_at(2) == 0
    _, _, p = chi_square_test(np.bincount(pop.labels, weights=pop.counts, minlength=6)[[0, 1, 3, 4, 5]], np.full(5, 0.2))
    assert p > 1e-3


def test_complete_graph_conditional_law():
    """X_t^0 given X_{t-1}^0 = s' is Binomial(c^t - c s', 1/(d-1))."""
    d, t = 4, 5
    cfg = SimConfig(CompleteGraph(d), c=2, mode="multiplicity", steps=t, seed=13, snapshot_every=1)
    pairs = [(s[t - 1].count_at(0), s[t].count_at(0)) for s in (run(cfg, replica_rng(13, r)).snapshots for r in range(3000))]
    s_prev = max(set(p for p, _ in pairs), key=[p for p, _ in pairs].count)
    obs_vals = [x for p, x in pairs if p == s_prev]
    trials = 2**t - 2 * s_prev
    _, _, pval = chi_square_test(np.bincount(obs_vals, minlength=trials + 1), binomial_pmf(trials, 1 / (d - 1)))
    assert pval > 1e-3


def test_galton_watson_mean_small():
    cfg = SimConfig(SingleFlip(7), mode="division_rate", p=0.6, steps=8, seed=17)
    z = np.array([run(cfg, replica_rng(17, r)).population[-1] for r in range(400)], dtype=float)
    se = z.std(ddof=1) / np.sqrt(z.size)
    assert abs(z.mean() - 1.6**8) < 3 * se


# --------------------------------------------------------------------------
# affinity-dependent division


@pytest.mark.parametrize("a0,support", [(7, {3, 4, 6}), (6, {3, 5, 7})])
def test_step_function_support(a0, support):
    n = 7
    table = step_function_table(n, 3)
    assert table.tolist() == [0, 0, 0, 0, 1, 1, 1, 1]
    start = (1 << (n - a0)) - 1
    cfg = SimConfig(SingleFlip(n), mode="affinity_division", division_table=table, target=0, start=start, steps=15, seed=1)
    pooled = np.zeros(n + 1, dtype=np.int64)
    for r in range(20):
        pooled += run(cfg, replica_rng(1, r)).affinity_hist[15]
    assert set(np.flatnonzero(pooled).tolist()) == support


def test_affinity_hist_sums_to_population():
    cfg = SimConfig(SingleFlip(7), mode="division_rate", p=0.6, target=5, steps=10, seed=2)
    traj = run(cfg)
    np.testing.assert_array_equal(traj.affinity_hist.sum(axis=1), traj.population)


# --------------------------------------------------------------------------
# expectations


def test_expectation_mask_and_dense_routes_agree():
    kernel = Mixture(5, 2)
    dense = ExplicitMatrix(kernel.dense_matrix())
    x = np.zeros(32)
    x[7] = 1.0
    for mode, kw in (("division_rate", {"p": 0.3}), ("multiplicity", {"c": 2})):
        a = propagate_expectation(x, kernel, mode, steps=6, normalize=False, **kw)
        b = propagate_expectation(x, dense, mode, steps=6, normalize=False, **kw)
        np.testing.assert_allclose(a, b, rtol=1e-12)


def test_expectation_growth_and_limit():
    x = np.zeros(128)
    x[0] = 1.0
    raw = propagate_expectation(x, SingleFlip(7), p=0.6, steps=15, normalize=False)
    assert raw.sum() == pytest.approx(1.6**15, rel=1e-12)
    lim = propagate_expectation(x, SingleFlip(7), p=0.6, steps=100)
    assert abs(lim.sum() - 1) < 1e-12
    assert tv_distance(lim, np.full(128, 1 / 128)) < 1e-3


def test_expectation_matches_spectral_decay():
    """TV to uniform decays like the slowest division-rate mode, (1 - p + 2p*lambda)/(1+p)."""
    n, p = 7, 0.6
    x = np.zeros(1 << n)
    x[0] = 1.0
    slow = max(abs(1 - p + 2 * p * (1 - 2 * w / n)) for w in range(1, n + 1)) / (1 + p)
    for t in (40, 60):
        d = tv_distance(propagate_expectation(x, SingleFlip(n), p=p, steps=t), np.full(1 << n, 1 / (1 << n)))
        assert d <= 2 ** (n / 2) * slow**t


@given(st.integers(0, 127), st.floats(0.05, 0.95), st.integers(1, 30))
@settings(max_examples=30, deadline=None)
def test_expectation_keeps_probability_vector(v, p, t):
    x = np.zeros(128)
    x[v] = 1.0
    y = propagate_expectation(x, SingleFlip(7), p=p, steps=t)
    assert abs(y.sum() - 1) < 1e-12 and (y >= -1e-15).all()


def test_expectation_errors():
    with pytest.raises(ValueError):
        propagate_expectation(np.ones(4) / 4, SingleFlip(3), p=0.5)
    with pytest.raises(ValueError):
        propagate_expectation(np.ones(8) / 8, SingleFlip(3), p=1.5)
    with pytest.raises(ValueError):
        propagate_expectation(np.ones(8) / 8, SingleFlip(3), mode="bogus")


# --------------------------------------------------------------------------
# cover times


def test_partial_and_full_cover():
    cfg = SimConfig(CompleteGraph(8), c=2, steps=30, seed=1, snapshot_every=1)
    traj = run(cfg)
    t_full = detect_full_cover(traj)
    assert t_full is not None and traj.active_count[t_full] == 8
    assert partial_cover_time(traj, 0.5) <= t_full
    with pytest.raises(ValueError):
        partial_cover_time(traj, 0.0)


def test_full_cover_needs_snapshots():
    with pytest.raises(ValueError):
        detect_full_cover(run(SimConfig(SingleFlip(3), steps=3)))


def test_bipartite_never_fully_covered():
    traj = run(SimConfig(SingleFlip(4), steps=40, seed=1, snapshot_every=1))
    assert detect_full_cover(traj) is None
    assert traj.active_count.max() <= 8


# --------------------------------------------------------------------------
# configuration and guards


def test_overflow_horizon_guard():
    with pytest.raises(GuardError) as err:
        run(SimConfig(SingleFlip(10), c=2, mode="multiplicity", steps=63))
    assert err.value.guard == "overflow-horizon"
    with pytest.raises(GuardError):
        SimConfig(SingleFlip(10), mode="division_rate", p=0.1, steps=70).check_horizon()
    SimConfig(SingleFlip(10), steps=500).check_horizon()  # simple mode never overflows


def test_config_validation():
    with pytest.raises(ValueError):
        SimConfig(SingleFlip(4), mode="division_rate", p=1.0)
    with pytest.raises(ValueError):
        SimConfig(SingleFlip(4), mode="nope")
    with pytest.raises(ValueError):
        SimConfig(SingleFlip(4), start=16)
    with pytest.raises(ValueError):
        SimConfig(SingleFlip(4), mode="affinity_division", target=0, division_table=[0, 1])
    with pytest.warns(UserWarning):
        SimConfig(SingleFlip(4), c=1)
    with pytest.warns(UserWarning):
        SimConfig(SingleFlip(2), mode="affinity_division", target=0, division_table=[1, 0, 1])


def test_config_round_trip_and_digest():
    cfg = SimConfig(Mixture(6, 2), c=3, mode="multiplicity", steps=7, seed=4, start=[0, 5], target=1)
    back = SimConfig.from_dict(cfg.to_dict())
    assert back.to_dict() == cfg.to_dict() and back.digest() == cfg.digest()
    other = SimConfig(Mixture(6, 2), c=3, mode="multiplicity", steps=8, seed=4, start=[0, 5], target=1)
    assert other.digest() != cfg.digest()
    with pytest.raises(ValueError):
        SimConfig.from_dict({**cfg.to_dict(), "extra": 1})


def test_trajectory_csv_rows():
    traj = run(SimConfig(SingleFlip(3), mode="multiplicity", steps=2, target=0))
    header, rows = traj.csv_rows()
    assert header == ["t", "active_count", "population", "aff_0", "aff_1", "aff_2", "aff_3"]
    assert rows[0] == [0, 1, 1, 0, 0, 0, 1]
    assert [r[2] for r in rows] == [1, 2, 4]


def test_population_helpers():
    pop = Population.from_labels([3, 1, 3, 3])
    assert pop.labels.tolist() == [1, 3] and pop.counts.tolist() == [1, 3]
    assert pop.total == 4 and pop.occupied == 2 and pop.count_at(3) == 3 and pop.count_at(2) == 0
