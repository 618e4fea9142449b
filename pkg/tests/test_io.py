"""Round-trip tests for CSV, binary, and JSON report formats."""

import json

import numpy as np
import pytest

from pathcoupling import pathio, verify
from pathcoupling.coupling import CorrelationProcess, couple_brownians
from pathcoupling.errors import ConfigError
from pathcoupling.sde import TimeGrid, sample_brownian


def _ensemble(seed=5):
    return sample_brownian(TimeGrid(16), 2, 7, seed=seed)


def _coupled(seed=6):
    return couple_brownians(CorrelationProcess.constant(0.5, 2), TimeGrid(16), 5, seed=seed)


def test_csv_round_trip_plain(tmp_path):
    ens = _ensemble()
    f = tmp_path / "ens.csv"
    pathio.write_csv(f, ens)
    header = f.read_text().splitlines()[0]
    assert header == "path_id,step,t,x_1,x_2"
    back = pathio.read_csv(f)
    assert np.array_equal(back.values, ens.values)
    assert back.grid.n_steps == 16


def test_csv_round_trip_coupled(tmp_path):
    ens = _coupled()
    f = tmp_path / "pair.csv"
    pathio.write_csv(f, ens)
    assert f.read_text().splitlines()[0].endswith("x_1,x_2,y_1,y_2")
    back = pathio.read_csv(f)
    assert np.array_equal(back.x, ens.x) and np.array_equal(back.y, ens.y)


def test_csv_rejects_foreign_file(tmp_path):
    f = tmp_path / "other.csv"
    f.write_text("a,b,c\n1,2,3\n")
    with pytest.raises(ConfigError):
        pathio.read_csv(f)


def test_binary_round_trip_plain(tmp_path):
    ens = _ensemble()
    f = tmp_path / "ens.bin"
    pathio.write_binary(f, ens)
    raw = f.read_bytes()
    assert raw.startswith(b"PCPL1")
    assert len(raw) == 5 + 24 + ens.values.size * 8
    back = pathio.read_binary(f)
    assert np.array_equal(back.values, ens.values)
    assert back.seed == ens.seed and back.grid.n_steps == ens.grid.n_steps


def test_binary_round_trip_coupled(tmp_path):
    ens = _coupled()
    f = tmp_path / "pair.bin"
    pathio.write_binary(f, ens)
    back = pathio.read_binary(f)
    assert np.array_equal(back.x, ens.x) and np.array_equal(back.y, ens.y)
    assert back.seed == ens.seed


def test_binary_rejects_corruption(tmp_path):
    f = tmp_path / "bad.bin"
    f.write_bytes(b"NOPE!")
    with pytest.raises(ConfigError):
        pathio.read_binary(f)
    ens = _ensemble()
    g = tmp_path / "trunc.bin"
    pathio.write_binary(g, ens)
    g.write_bytes(g.read_bytes()[:-8])
    with pytest.raises(ConfigError):
        pathio.read_binary(g)


def test_binary_write_is_deterministic(tmp_path):
    ens = _ensemble()
    a, b = tmp_path / "a.bin", tmp_path / "b.bin"
    pathio.write_binary(a, ens)
    pathio.write_binary(b, ens)
    assert a.read_bytes() == b.read_bytes()


def test_reports_jsonl_round_trip(tmp_path):
    ens = sample_brownian(TimeGrid(64), 1, 200, seed=8)
    reports = [verify.wiener_marginal_test(ens, alpha=a) for a in (0.01, 0.05)]
    f = tmp_path / "reports.jsonl"
    pathio.write_reports_jsonl(f, reports)
    back = pathio.read_reports_jsonl(f)
    assert back == reports


def test_cost_report_payload(tmp_path):
    from pathcoupling import cost, presets

    model = presets.build("model", "bm", d=1, sigma=1.0)
    ens = couple_brownians(CorrelationProcess.constant(1.0, 1), TimeGrid(32), 16, seed=9)
    spec = cost.CostSpec.lp(2)
    est = cost.estimate(ens, spec)
    payload = pathio.cost_report(est, n_steps=32, seed=9)
    assert payload["cost_spec"] == "lp(p=2)" and payload["N"] == 16
    f = tmp_path / "cost.json"
    pathio.write_json(f, payload)
    assert json.loads(f.read_text())["n_steps"] == 32
    assert model.dim == 1
