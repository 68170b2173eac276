import math

import numpy as np
import pytest
import yaml

from dpdco import harness
from dpdco.errors import ConfigError

SMALL = {
    "scenario": {"horizon": 12, "n_users": 200, "n_households": 1000, "n_groups": 10, "seed": 1,
                 "synthetic": {"peak_slot": 3}},
    "privacy": {"epsilon": 0.5},
    "descent": {"K": 4},
    "seeds": [0, 1, 2],
}


def small(**over):
    data = {**SMALL, **over}
    return harness.config_from_mapping(data)


def test_defaults_validate():
    cfg = harness.ExperimentConfig().validate()
    assert cfg.seeds == tuple(range(20)) and cfg.sweep.K_grid == tuple(range(2, 61))


def test_load_config_grids(tmp_path):
    path = tmp_path / "c.yaml"
    path.write_text(yaml.safe_dump({
        "sweep": {"axis": "epsilon", "grid": {"geomspace": [0.02, 1, 3]}, "optimize_K": True,
                  "K_grid": {"range": [2, 5]}},
        "seeds": {"range": [3, 6]},
    }))
    cfg = harness.load_config(path)
    assert cfg.sweep.grid == pytest.approx((0.02, math.sqrt(0.02), 1.0))
    assert cfg.sweep.K_grid == (2, 3, 4) and cfg.seeds == (3, 4, 5)


@pytest.mark.parametrize(
    "data",
    [
        {"nope": 1},
        {"privacy": {"epsilon": -1}},
        {"privacy": {"eps": 1}},
        {"descent": {"K": 1}},
        {"descent": {"step_unit": "parsec"}},
        {"seeds": [1, 1]},
        {"seeds": []},
        {"sweep": {"axis": "K", "grid": [5, 3]}},
        {"sweep": {"axis": "K", "grid": []}},
        {"sweep": {"axis": "delta"}},
        {"sweep": {"axis": "epsilon", "grid": {"linspace": [0, 1, 3]}}},
        {"scenario": {"n_groups": 0}},
        [1, 2],
    ],
)
def test_bad_configs(data):
    with pytest.raises(ConfigError):
        harness.config_from_mapping(data)


def test_unreadable_and_malformed(tmp_path):
    with pytest.raises(ConfigError):
        harness.load_config(tmp_path / "missing.yaml")
    bad = tmp_path / "bad.yaml"
    bad.write_text("scenario: [unclosed")
    with pytest.raises(ConfigError):
        harness.load_config(bad)


def test_run_record_and_csv():
    exp = harness.Experiment(small())
    rec = exp.run(wall_time=False)
    assert rec.budget == 0.5 and rec.wall_ms == 0.0
    assert rec.rel_subopt >= -1e-9
    assert (rec.n, rec.m, rec.T) == (200, 1000, 12)
    text = harness.format_csv([rec])
    header, row = text.splitlines()
    assert header.split(",") == list(harness.CSV_COLUMNS)
    assert float(row.split(",")[10]) == rec.rel_subopt
    assert harness.format_csv([exp.run(wall_time=False)]) == text


def test_baseline_record():
    exp = harness.Experiment(small())
    rec = exp.run(private=False, K=200)
    assert rec.epsilon == math.inf and rec.budget == 0.0
    assert 0 <= rec.rel_subopt < 1e-3


def test_step_units():
    assert harness.Experiment(small()).step_scale == 1000.0
    lit = small(descent={"K": 4, "step_unit": "literal"})
    assert harness.Experiment(lit).step_scale == 1.0


def test_sweeps_order_and_summary():
    exp = harness.Experiment(small(sweep={"axis": "K", "grid": [2, 3, 5]}))
    res = harness.sweep(exp, wall_time=False)
    assert [(r.K, r.seed) for r in res.records] == [(k, s) for k in (2, 3, 5) for s in (0, 1, 2)]
    assert set(res.means) == {2, 3, 5} and res.slope is None
    exp = harness.Experiment(small(sweep={"axis": "epsilon", "grid": [0.1, 1.0], "optimize_K": True,
                                          "K_grid": [2, 3]}))
    res = harness.sweep(exp, wall_time=False)
    assert len(res.records) == 2 * 2 * 3
    assert set(res.best_K.values()) <= {2, 3} and res.slope is not None
    assert res.summary()["axis"] == "epsilon"


def test_sweep_workers_match_serial():
    cfg = small(sweep={"axis": "c", "grid": [10, 20]})
    exp = harness.Experiment(cfg)
    serial = harness.sweep(exp, wall_time=False)
    parallel = harness.sweep(exp, workers=2, wall_time=False)
    assert harness.format_csv(serial.records) == harness.format_csv(parallel.records)


def test_sweep_needs_axis():
    with pytest.raises(ConfigError):
        harness.sweep(harness.Experiment(small()))


def test_slope_and_interior():
    x = np.array([0.1, 1.0, 10.0])
    assert harness.loglog_slope(x, 3 * x**-0.5) == pytest.approx(-0.5)
    assert harness.interior_minimizer({2: 3.0, 3: 1.0, 4: 2.0}) == (True, 3)
    assert harness.interior_minimizer({2: 1.0, 3: 1.5, 4: 2.0}) == (False, 2)


def test_verify_gradient_and_unknown():
    assert all(ok for _, ok, _ in harness.verify("gradient"))
    with pytest.raises(ConfigError):
        harness.verify("everything")


def test_trace_written(tmp_path):
    rec = harness.Experiment(small()).run()
    harness.write_trace(rec, tmp_path / "t.json")
    import json

    rows = json.loads((tmp_path / "t.json").read_text())
    assert [r["k"] for r in rows] == [1, 2, 3, 4]
