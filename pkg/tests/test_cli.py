import csv
import io
import json

import pytest

from brwcube.cli import main, parse_k_range, run_experiment


def _run(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


def _csv_body(text):
    lines = text.splitlines()
    assert lines[-1].startswith("# schema=")
    return list(csv.reader(io.StringIO("\n".join(lines[:-1]))))


def test_simulate_aggregate_json(capsys):
    code, out, _ = _run(capsys, "simulate", "--n-bits", "8", "--steps", "6", "--replicas", "5", "--seed", "7")
    assert code == 0
    d = json.loads(out)
    assert d["n"] == 5 and len(d["per_step"]) == 7
    assert d["per_step"][0]["s_mean"] == 1.0


def test_simulate_single_csv(capsys):
    code, out, _ = _run(capsys, "simulate", "--n-bits", "4", "--mode", "multiplicity", "--steps", "3", "--format", "csv", "--target", "0")
    assert code == 0
    rows = _csv_body(out)
    assert rows[0][:3] == ["t", "active_count", "population"]
    assert [r[2] for r in rows[1:]] == ["1", "2", "4", "8"]


def test_simulate_affinity_division(capsys):
    code, out, _ = _run(
        capsys, "simulate", "--n-bits", "7", "--mode", "affinity_division", "--target", "0", "--threshold", "3",
        "--steps", "15", "--seed", "1",
    )
    assert code == 0
    hist = json.loads(out)["affinity_hist"][15]
    assert {i for i, x in enumerate(hist) if x} <= {3, 4, 6}


def test_simulate_byte_identical(tmp_path, capsys):
    args = ["simulate", "--kernel", "mixture", "--k", "3", "--n-bits", "9", "--steps", "8", "--replicas", "4", "--seed", "11"]
    for name in ("a.csv", "b.csv"):
        assert main(args + ["--format", "csv", "--out", str(tmp_path / name)]) == 0
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


def test_seed_from_environment(monkeypatch, capsys):
    monkeypatch.setenv("BRWCUBE_SEED", "3")
    _, a, _ = _run(capsys, "simulate", "--n-bits", "8", "--steps", "8")
    _, b, _ = _run(capsys, "simulate", "--n-bits", "8", "--steps", "8", "--seed", "3")
    assert a == b
    monkeypatch.setenv("BRWCUBE_SEED", "x")
    assert _run(capsys, "simulate")[0] == 2


def test_simulate_guard_exit(capsys):
    code, _, err = _run(capsys, "simulate", "--steps", "200", "--mode", "multiplicity", "--c", "2")
    assert code == 3 and "overflow-horizon" in err


@pytest.mark.parametrize(
    "argv",
    [
        ["simulate", "--kernel", "mixture", "--k", "0"],
        ["simulate", "--kernel", "bogus"],
        ["simulate", "--mode", "division_rate"],
        ["simulate", "--mode", "affinity_division", "--target", "0"],
        ["simulate", "--steps", "notanumber"],
        ["bounds", "--n-bits", "2"],
        ["bounds", "--n-bits", "7", "--k-range", "0..3"],
        ["experiment", "fig99"],
        [],
    ],
)
def test_usage_errors_exit_2(argv, capsys):
    assert _run(capsys, *argv)[0] == 2


def test_config_file(tmp_path, capsys):
    cfg = tmp_path / "run.yaml"
    cfg.write_text("kernel: {kind: mixture, n_bits: 6, k: 2}\nmode: multiplicity\nsteps: 4\nseed: 2\n")
    code, out, _ = _run(capsys, "simulate", "--config", str(cfg))
    assert code == 0 and json.loads(out)["population"] == [1, 2, 4, 8, 16]
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"kernel": {"kind": "single_flip", "n_bits": 3}, "colour": 1}))
    assert _run(capsys, "simulate", "--config", str(bad))[0] == 2


def test_bounds(capsys):
    code, out, _ = _run(capsys, "bounds", "--n-bits", "7")
    rows = _csv_body(out)
    assert code == 0 and len(rows) == 8
    head = rows[0]
    delta = [float(r[head.index("delta_raw")]) for r in rows[1:]]
    assert all(d > 0.5 for d in delta[1:])
    _, out, _ = _run(capsys, "bounds", "--n-bits", "10", "--k-range", "1")
    rows = _csv_body(out)
    assert float(rows[1][rows[0].index("delta_raw")]) == 2.0**-3


def test_parse_k_range():
    assert parse_k_range("1..3", 5) == [1, 2, 3]
    assert parse_k_range("2-4", 5) == [2, 3, 4]
    assert parse_k_range("1,5", 5) == [1, 5]


def test_verify_exit_codes(capsys):
    code, out, _ = _run(capsys, "verify", "--suite", "min-entry", "--suite", "parity")
    report = json.loads(out)
    assert code == 0 and report["passed"]
    assert {"check", "oracle", "tolerance", "passed"} <= set(report["checks"][0])
    code, out, err = _run(capsys, "verify", "--suite", "expander")
    assert code == 1 and "N=4 r=2" in err


def test_experiment_outputs(tmp_path):
    m = run_experiment("table2", tmp_path, replicas=4, seed=1)
    text = (tmp_path / "table2.csv").read_text()
    assert text.splitlines()[-1] == "# schema=table2/v1 manifest=table2.manifest.json"
    assert len(_csv_body(text)) == 4
    assert m["replicas"] == 4 and m["seed"] == 1 and "wall_time_s" in m
    first = (tmp_path / "table2.csv").read_bytes()
    run_experiment("table2", tmp_path, replicas=4, seed=1)
    assert (tmp_path / "table2.csv").read_bytes() == first


def test_experiment_fig3_and_fig6(tmp_path):
    run_experiment("fig3", tmp_path)
    rows = _csv_body((tmp_path / "fig3.csv").read_text())
    assert len(rows) == 1 + 7 + 10
    run_experiment("fig6", tmp_path, replicas=3)
    rows = _csv_body((tmp_path / "fig6.csv").read_text())
    head = rows[0]
    hit = {
        int(r[head.index("affinity")])
        for r in rows[1:]
        if r[0] == "affinity_division" and r[1] == "7" and int(r[head.index("count")]) > 0
    }
    assert hit == {3, 4, 6}


def test_experiment_rejects_single_replica(tmp_path, capsys):
    assert _run(capsys, "experiment", "fig2", "--out", str(tmp_path), "--replicas", "1")[0] == 2
