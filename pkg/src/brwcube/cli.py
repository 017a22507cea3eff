"""Command-line entry point: ``brwcube {simulate,bounds,verify,experiment}``.

Exit codes: 0 ok, 1 verification failure, 2 usage error, 3 guard violation.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
import time
import warnings
from pathlib import Path

import numpy as np

from . import __version__
from .errors import GuardError
from .kernels import (
    KINDS,
    CompleteBipartite,
    CompleteGraph,
    Mixture,
    Power,
    SingleFlip,
    kernel_from_config,
    load_config,
)
from .sim import MODES, SimConfig, step_function_table
from .spectral import bounds_rows
from .stats import ReplicaError, monte_carlo, run_replicas
from .verify import SUITES, first_failure, run_suite

EXIT_OK, EXIT_VERIFY, EXIT_USAGE, EXIT_GUARD = 0, 1, 2, 3
SEED_ENV = "BRWCUBE_SEED"
PRESETS = ("fig2", "fig3", "fig4", "fig5", "fig6", "table2")


class UsageError(Exception):
    pass


def default_seed() -> int:
    raw = os.environ.get(SEED_ENV)
    if raw is None:
        return 0
    try:
        return int(raw)
    except ValueError:
        raise UsageError(f"{SEED_ENV} must be an integer, got {raw!r}") from None


# --------------------------------------------------------------------------
# output helpers


def csv_text(header, rows, schema: str, manifest: str = "none") -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    buf.write(f"# schema={schema} manifest={manifest}\n")
    return buf.getvalue()


def _fmt(x):
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    if isinstance(x, np.integer):
        return int(x)
    return x


def emit(text: str, out: str | None):
    if out in (None, "-"):
        sys.stdout.write(text)
    else:
        Path(out).write_text(text)


# --------------------------------------------------------------------------
# simulate


def _kernel_from_flags(a) -> dict:
    cfg = {"kind": a.kernel, "n_bits": a.n_bits}
    if a.kernel in ("power", "mixture"):
        cfg["k"] = a.k
    if a.kernel == "lazy":
        cfg["p_stay"] = a.p_stay
        cfg["base"] = {"kind": "single_flip", "n_bits": a.n_bits}
    return cfg


def _sim_config(a) -> SimConfig:
    if a.config:
        d = load_config(a.config)
        d.setdefault("seed", a.seed)
        return SimConfig.from_dict(d)
    kernel = kernel_from_config(_kernel_from_flags(a))
    table = None
    if a.mode == "affinity_division":
        if a.threshold is None or a.target is None:
            raise UsageError("affinity_division needs --target and --threshold")
        table = step_function_table(a.n_bits, a.threshold)
    return SimConfig(
        kernel=kernel,
        c=a.c,
        mode=a.mode,
        p=a.p,
        division_table=table,
        target=a.target,
        start=a.start,
        steps=a.steps,
        seed=a.seed,
    )


def cmd_simulate(a) -> int:
    cfg = _sim_config(a)
    if a.replicas == 1:
        _, traj = run_replicas(cfg, 1)[0]
        if a.format == "json":
            text = json.dumps({"config_digest": cfg.digest(), "config": cfg.to_dict(), **traj.to_dict()}, indent=1)
            text += "\n"
        else:
            header, rows = traj.csv_rows()
            text = csv_text(header, rows, "trajectory/v1")
    else:
        agg = monte_carlo(cfg, a.replicas, workers=a.workers)
        if a.format == "json":
            text = json.dumps({"config": cfg.to_dict(), **agg.to_json()}, indent=1) + "\n"
        else:
            header, rows = agg.csv_rows()
            text = csv_text(header, rows, "aggregate/v1")
    emit(text, a.out)
    return EXIT_OK


# --------------------------------------------------------------------------
# bounds


def parse_k_range(text: str, n_bits: int) -> list[int]:
    """``"1..7"``, ``"2-5"`` or ``"1,3,5"``."""
    text = text.strip()
    for sep in ("..", "-", ":"):
        if sep in text:
            lo, hi = text.split(sep, 1)
            ks = list(range(int(lo), int(hi) + 1))
            break
    else:
        ks = [int(x) for x in text.split(",") if x.strip()]
    if not ks or min(ks) < 1 or max(ks) > n_bits:
        raise UsageError(f"k range must lie within 1..{n_bits}, got {text!r}")
    return ks


BOUNDS_COLUMNS = ["N", "k", "lambda2", "degree", "Delta", "delta_raw", "delta_usable", "r_exact", "r_simplified", "delta_ceiling"]


def cmd_bounds(a) -> int:
    if a.n_bits < 3:
        raise UsageError("bounds need --n-bits >= 3")
    ks = parse_k_range(a.k_range, a.n_bits) if a.k_range else list(range(1, a.n_bits + 1))
    rows = [[_fmt(r[c]) for c in BOUNDS_COLUMNS] for r in bounds_rows(a.n_bits, ks)]
    emit(csv_text(BOUNDS_COLUMNS, rows, "bounds/v1"), a.out)
    return EXIT_OK


# --------------------------------------------------------------------------
# verify


def cmd_verify(a) -> int:
    suites = SUITES if not a.suite or "all" in a.suite else a.suite
    checks = []
    for s in suites:
        checks += run_suite(s)
    bad = first_failure(checks)
    report = {"passed": bad is None, "checks": [c.to_dict() for c in checks]}
    emit(json.dumps(report, indent=1) + "\n", a.out)
    if bad is not None:
        print(f"verification failed: [{bad.suite}] {bad.check}: {bad.detail}", file=sys.stderr)
        return EXIT_VERIFY
    return EXIT_OK


# --------------------------------------------------------------------------
# experiments


def _log_mean(active_counts: np.ndarray) -> np.ndarray:
    return np.log(active_counts.astype(float)).mean(axis=0)


def _curve_rows(label, cfg, replicas, seed):
    agg = monte_carlo(cfg, replicas, seed)
    logm = _log_mean(agg.active_counts)
    return [
        [label, t, _fmt(agg.s_mean[t]), _fmt(agg.s_se[t]), _fmt(logm[t])]
        for t in range(cfg.steps + 1)
    ]


def exp_fig2(replicas, seed, n_bits=10, steps=20, k=7):
    header = ["kernel", "t", "s_mean", "s_se", "log_s_mean"]
    rows = []
    for label, kern in (("P", SingleFlip(n_bits)), (f"P({k})", Mixture(n_bits, k))):
        rows += _curve_rows(label, SimConfig(kern, c=2, steps=steps, seed=seed), replicas, seed)
    return {"fig2.csv": (header, rows)}, {"n_bits": n_bits, "steps": steps, "k": k}


def exp_fig3(replicas, seed, dims=(7, 10)):
    header = ["N", "k", "delta_raw", "delta_usable"]
    rows = []
    for n in dims:
        for r in bounds_rows(n, range(1, n + 1)):
            rows.append([n, r["k"], _fmt(r["delta_raw"]), _fmt(r["delta_usable"])])
    return {"fig3.csv": (header, rows)}, {"dims": list(dims)}


def exp_fig4(replicas, seed, n_bits=10):
    header = ["N", "k", "t", "s_mean", "s_se"]
    rows = []
    for k in range(1, n_bits + 1):
        cfg = SimConfig(Mixture(n_bits, k), c=2, steps=n_bits + 1, seed=seed)
        agg = monte_carlo(cfg, replicas, seed)
        for t in (n_bits - 1, n_bits, n_bits + 1):
            rows.append([n_bits, k, t, _fmt(agg.s_mean[t]), _fmt(agg.s_se[t])])
    return {"fig4.csv": (header, rows)}, {"n_bits": n_bits}


def exp_fig5(replicas, seed, n_bits=10, steps=20, k=7):
    header = ["kernel", "t", "s_mean", "s_se", "log_s_mean"]
    half = 1 << (n_bits - 1)
    kernels = (
        ("P", SingleFlip(n_bits)),
        (f"P^{k}", Power(n_bits, k)),
        (f"P({k})", Mixture(n_bits, k)),
        (f"K_{half},{half}", CompleteBipartite(half)),
        (f"K_{1 << n_bits}", CompleteGraph(1 << n_bits)),
    )
    rows = []
    for label, kern in kernels:
        rows += _curve_rows(label, SimConfig(kern, c=2, steps=steps, seed=seed), replicas, seed)
    return {"fig5.csv": (header, rows)}, {"n_bits": n_bits, "steps": steps, "k": k}


def exp_fig6(replicas, seed, n_bits=7, threshold=3, steps=15, p=0.6):
    header = ["model", "a0", "affinity", "count", "fraction", "mean_affinity", "mean_population", "population_se"]
    rows = []
    kern = SingleFlip(n_bits)
    for model in ("division_rate", "affinity_division"):
        for a0 in range(n_bits + 1):
            # target 0; a start with n_bits - a0 set bits has affinity a0
            start = (1 << (n_bits - a0)) - 1
            if model == "division_rate":
                cfg = SimConfig(kern, mode=model, p=p, target=0, start=start, steps=steps, seed=seed)
            else:
                cfg = SimConfig(kern, mode=model, division_table=step_function_table(n_bits, threshold),
                                target=0, start=start, steps=steps, seed=seed)
            agg = monte_carlo(cfg, replicas, seed)
            hist = agg.histograms[steps]
            total = hist.sum()
            mean_aff = float((np.arange(n_bits + 1) * hist).sum() / total)
            for aff in range(n_bits + 1):
                rows.append([model, a0, aff, int(hist[aff]), _fmt(hist[aff] / total), _fmt(mean_aff),
                             _fmt(agg.z_mean[steps]), _fmt(agg.z_se[steps])])
    return {"fig6.csv": (header, rows)}, {"n_bits": n_bits, "threshold": threshold, "steps": steps, "p": p}


TABLE2_REFERENCE = {
    "simple_P": (222.36, 3.376),
    "simple_K_512_512": (318.04, 1.231),
    "multiplicity_P": (398.42, 0.972),
}


def table2_configs(seed, n_bits=10, steps=10):
    half = 1 << (n_bits - 1)
    return {
        "simple_P": SimConfig(SingleFlip(n_bits), c=2, steps=steps, seed=seed),
        "simple_K_512_512": SimConfig(CompleteBipartite(half), c=2, steps=steps, seed=seed),
        "multiplicity_P": SimConfig(SingleFlip(n_bits), c=2, mode="multiplicity", steps=steps, seed=seed),
    }


def exp_table2(replicas, seed, n_bits=10, steps=10):
    header = ["model", "N", "n", "s_mean", "s_se", "reference_mean", "reference_se", "within_3se"]
    rows = []
    for name, cfg in table2_configs(seed, n_bits, steps).items():
        agg = monte_carlo(cfg, replicas, seed)
        ref_mean, ref_se = TABLE2_REFERENCE[name]
        ok = abs(agg.s_mean[steps] - ref_mean) <= 3 * ref_se
        rows.append([name, n_bits, replicas, _fmt(agg.s_mean[steps]), _fmt(agg.s_se[steps]), ref_mean, ref_se, int(ok)])
    return {"table2.csv": (header, rows)}, {"n_bits": n_bits, "steps": steps}


EXPERIMENTS = {
    "fig2": (exp_fig2, 40),
    "fig3": (exp_fig3, 0),
    "fig4": (exp_fig4, 100),
    "fig5": (exp_fig5, 40),
    "fig6": (exp_fig6, 100),
    "table2": (exp_table2, 100),
}


def run_experiment(name: str, out_dir: Path, replicas: int | None = None, seed: int = 0) -> dict:
    if name not in EXPERIMENTS:
        raise UsageError(f"unknown preset {name!r}; choose from {PRESETS}")
    fn, default_reps = EXPERIMENTS[name]
    reps = default_reps if replicas is None else replicas
    if default_reps and reps < 2:
        raise UsageError("--replicas must be >= 2")
    out_dir.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    tables, params = fn(reps, seed)
    wall = time.perf_counter() - t0
    manifest_name = f"{name}.manifest.json"
    for fname, (header, rows) in tables.items():
        (out_dir / fname).write_text(csv_text(header, rows, f"{name}/v1", manifest_name))
    manifest = {
        "preset": name,
        "version": __version__,
        "seed": seed,
        "replicas": reps if default_reps else None,
        "params": params,
        "files": sorted(tables),
        "wall_time_s": round(wall, 3),
    }
    (out_dir / manifest_name).write_text(json.dumps(manifest, indent=1) + "\n")
    return manifest


def cmd_experiment(a) -> int:
    run_experiment(a.preset, Path(a.out), a.replicas, a.seed)
    return EXIT_OK


# --------------------------------------------------------------------------
# parser


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="brwcube", description="Branching random walks on the binary hypercube.")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("simulate", help="run one configuration over replicas")
    s.add_argument("--config", help="JSON or YAML SimConfig file (overrides the model flags)")
    s.add_argument("--kernel", choices=KINDS, default="single_flip")
    s.add_argument("--n-bits", type=int, default=10)
    s.add_argument("--k", type=int, default=1)
    s.add_argument("--p-stay", type=float, default=0.5)
    s.add_argument("--c", type=int, default=2)
    s.add_argument("--mode", choices=MODES, default="simple")
    s.add_argument("--p", type=float, default=None, help="division rate for division_rate mode")
    s.add_argument("--steps", type=int, default=10)
    s.add_argument("--replicas", type=int, default=1)
    s.add_argument("--seed", type=int, default=None)
    s.add_argument("--start", type=int, default=0, help="start vertex label")
    s.add_argument("--target", type=int, default=None, help="target label for affinity tracking")
    s.add_argument("--threshold", type=int, default=None, help="h_s of the step division table")
    s.add_argument("--workers", type=int, default=1)
    s.add_argument("--out", default="-")
    s.add_argument("--format", choices=("csv", "json"), default="json")
    s.set_defaults(func=cmd_simulate)

    b = sub.add_parser("bounds", help="closed-form spectral and cover constants as CSV")
    b.add_argument("--n-bits", type=int, required=True)
    b.add_argument("--k-range", default=None, help="e.g. 1..7, 2-5 or 1,3,5 (default 1..N)")
    b.add_argument("--out", default="-")
    b.set_defaults(func=cmd_bounds)

    v = sub.add_parser("verify", help="run brute-force oracle suites")
    v.add_argument("--suite", action="append", choices=SUITES + ("all",))
    v.add_argument("--out", default="-")
    v.set_defaults(func=cmd_verify)

    e = sub.add_parser("experiment", help="write the data behind a figure or table")
    e.add_argument("preset")
    e.add_argument("--out", default="results")
    e.add_argument("--replicas", type=int, default=None)
    e.add_argument("--seed", type=int, default=None)
    e.set_defaults(func=cmd_experiment)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        a = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        if getattr(a, "seed", 0) is None:
            a.seed = default_seed()
        with warnings.catch_warnings():
            warnings.simplefilter("default")
            return a.func(a)
    except GuardError as exc:
        print(f"guard violation: {exc}", file=sys.stderr)
        return EXIT_GUARD
    except ReplicaError as exc:
        if isinstance(exc.__cause__, GuardError):
            print(f"guard violation: {exc}", file=sys.stderr)
            return EXIT_GUARD
        raise
    except (UsageError, ValueError, KeyError, FileNotFoundError) as exc:
        print(f"brwcube: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
