import csv
import json

import numpy as np
import pytest

from pmkv import snapshots as snapio
from pmkv.cli import main
from pmkv.coefficients import get_scenario
from pmkv.engine import SimConfig, simulate


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def test_snapshot_csv_round_trip_is_exact(tmp_path):
    snaps = simulate(get_scenario("granular-periodic"), SimConfig(dt=0.01, steps_per_period=100, periods=2, n=17))
    path = snapio.write_csv(tmp_path / "s.csv", snaps)
    back = snapio.read_csv(path, period_length=1.0)
    assert len(back) == 3
    for a, b in zip(snaps, back):
        assert np.array_equal(a.positions, b.positions) and np.array_equal(a.reflection, b.reflection)
    with path.open() as fh:
        assert next(csv.reader(fh)) == ["period", "particle", "x_1", "x_2", "reflection_cum"]


def test_snapshot_binary_layout(tmp_path):
    snaps = simulate(get_scenario("ou-periodic", dim=2), SimConfig(dt=0.01, steps_per_period=100, periods=1, n=5))
    path = snapio.write_binary(tmp_path / "s.bin", snaps)
    raw = np.frombuffer(path.read_bytes(), dtype="<f8").reshape(10, 5)
    assert np.array_equal(raw[5:, 2:4], snaps[1].positions)
    assert list(raw[:, 0]) == [0.0] * 5 + [1.0] * 5
    table, meta = snapio.read_binary(path)
    assert meta["columns"] == ["period", "particle", "x_1", "x_2", "reflection_cum"]
    assert np.array_equal(table, raw)


def test_catalog_and_rates(capsys):
    code, out, _ = run(capsys, "catalog")
    names = {row["name"] for row in json.loads(out)}
    assert code == 0 and {"ou-periodic", "granular-periodic", "brownian-periodic"} <= names
    code, out, _ = run(capsys, "rates", "ou-periodic")
    assert code == 0 and json.loads(out)["w2"]["rate"] == pytest.approx(2.0)


def test_psi_command_writes_table(capsys, tmp_path):
    code, out, _ = run(capsys, "psi", "eigen", "--D0", "0", "--l", "1", "--out", str(tmp_path / "t.csv"))
    assert code == 0 and json.loads(out)["c2"] > 0
    rows = list(csv.reader((tmp_path / "t.csv").open()))
    assert rows[0] == ["r", "psi", "dpsi", "d2psi"] and float(rows[1][1]) == 0.0


def test_simulate_then_metrics(capsys, tmp_path):
    for seed, sub in ((1, "a"), (2, "b")):
        code, _, _ = run(capsys, "simulate", "ou-periodic", "--periods", "2", "--n", "64", "--dt", "0.01",
                         "--seed", str(seed), "--out", str(tmp_path / sub))
        assert code == 0
    a, b = tmp_path / "a" / "snapshots.csv", tmp_path / "b" / "snapshots.csv"
    code, out, _ = run(capsys, "metrics", str(a), str(b), "--metric", "w1")
    lines = out.strip().splitlines()
    assert code == 0 and lines[0] == "period,w1" and len(lines) == 4
    code, out, _ = run(capsys, "metrics", str(a), str(a))
    assert all(float(line.split(",")[1]) == 0.0 for line in out.strip().splitlines()[1:])
    code, _, err = run(capsys, "metrics", str(a), str(b), "--metric", "wpsi")
    assert code == 2 and "--scenario" in err


def test_experiment_and_config_commands(capsys, tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"scenario": "ou-periodic", "n": 256, "dt": 0.01, "periods": 5,
                               "snapshot_format": "binary"}))
    code, out, _ = run(capsys, "config", str(cfg))
    assert code == 0 and json.loads(out)["k"] == 5
    code, out, _ = run(capsys, "experiment", str(cfg), "--out", str(tmp_path / "run"))
    assert code == 0 and "verdict=" in out
    report = json.loads((tmp_path / "run" / "report.json").read_text())
    assert len(report["distances"]) == 6
    assert (tmp_path / "run" / "snapshots").is_dir()


def test_bad_config_exits_with_two(capsys, tmp_path):
    cfg = tmp_path / "bad.json"
    cfg.write_text('{\n  "scenario": "ou-periodic",\n  "metric": "w3"\n}')
    code, _, err = run(capsys, "experiment", str(cfg))
    assert code == 2 and "line 3" in err
