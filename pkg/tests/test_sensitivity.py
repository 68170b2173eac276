import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dpdco.errors import BoundViolation, DegenerateInstance, InfeasibleSet
from dpdco.evcharging import generate_specs
from dpdco.model import AdjacencyParams, ChargingSpec
from dpdco.projection import BoxBudgetSet, project
from dpdco.sensitivity import (
    adjacency_probe,
    degenerate_budgets,
    global_a_battery,
    global_b_battery,
    global_sensitivity_a,
    global_sensitivity_b,
    is_degenerate,
    local_battery,
    local_sensitivity_a,
    local_sensitivity_b,
    sample_adjacent,
    tight_a_case,
)


def test_local_b_examples():
    np.testing.assert_allclose(local_sensitivity_b([0, 0], [1, 1], 1), [0.5, 0.5], atol=1e-9)
    np.testing.assert_allclose(local_sensitivity_b([2, 0], [1, 1], 1.5), [0, 1], atol=1e-9)
    np.testing.assert_allclose(local_sensitivity_b([0, 0, 5], [1, 1, 1], 2.5), [0.5, 0.5, 0], atol=1e-9)


@pytest.mark.parametrize("x0,a,b", [([2, 0], [1, 1], 1), ([0, 0.5], [1, 1], 0.5), ([0, 0], [1, 2], 2)])
def test_kink_budgets_are_degenerate(x0, a, b):
    assert b in degenerate_budgets(x0, a)
    assert is_degenerate(x0, a, b)
    with pytest.raises(DegenerateInstance):
        local_sensitivity_b(x0, a, b)
    with pytest.raises(DegenerateInstance):
        local_sensitivity_a(x0, a, b)


def test_degenerate_budgets_enumeration():
    np.testing.assert_allclose(degenerate_budgets([0, 0.5], [1, 1]), [0.5, 1.5])
    np.testing.assert_allclose(degenerate_budgets([2, 0], [1, 1]), [1.0])


def test_local_margins():
    with pytest.raises(InfeasibleSet):
        local_sensitivity_b([0, 0], [1, 1], 2.0)
    with pytest.raises(InfeasibleSet):
        local_sensitivity_a([0, 0], [1, 0], 0.5)


def test_local_a_examples():
    np.testing.assert_allclose(local_sensitivity_a([0, 0], [1, 1], 0.5), np.zeros((2, 2)), atol=1e-9)
    np.testing.assert_allclose(local_sensitivity_a([2, 0], [1, 1], 1.5), [[1, 0], [-1, 0]], atol=1e-9)
    np.testing.assert_allclose(local_sensitivity_a([0], [5], 3), [[0]], atol=1e-9)


def test_two_binding_caps_double_the_summed_norm():
    # Each binding cap contributes a column of l1 norm 2, so the sum reaches 4.
    jac = local_sensitivity_a([5, 5, 0], [1, 1, 1], 2.5)
    np.testing.assert_allclose(jac, [[1, 0, 0], [0, 1, 0], [-1, -1, 0]], atol=1e-9)
    assert np.abs(jac).sum() == pytest.approx(4.0, abs=1e-8)


def test_global_examples():
    assert global_sensitivity_b([0, 0], [1, 1], 1, 1.5) == pytest.approx(0.5)
    assert global_sensitivity_b([0, 0], [1, 1], 1, 1) == 0
    assert global_sensitivity_a([2, 0], [1, 1], [1, 1], 1) == 0
    x0, a, a2, b = tight_a_case()
    assert global_sensitivity_a(x0, a, a2, b) == pytest.approx(1.0)
    with pytest.raises(InfeasibleSet):
        global_sensitivity_b([0, 0], [1, 1], 1, 3)
    with pytest.raises(InfeasibleSet):
        global_sensitivity_a([0, 0], [1, 1], [0.2, 0.2], 1)


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 10))
def test_global_properties(seed, T):
    rng = np.random.default_rng(seed)
    a = rng.uniform(0, 3, T)
    x0 = rng.normal(0, 3, T)
    b, b2 = rng.uniform(0, a.sum(), 2)
    global_sensitivity_b(x0, a, b, b2)
    a2 = a + rng.normal(0, 0.5, T).clip(-a)
    if a2.sum() >= b:
        global_sensitivity_a(x0, a, a2, b)


def test_batteries():
    assert global_b_battery(200, seed=1).passed
    r = global_a_battery(200, seed=1)
    assert r.passed and r.notes["max_ratio"] > 0.99


def test_local_battery_reports_summed_bound_failures():
    r = local_battery(300, seed=2)
    assert r.skip_rate < 0.01
    assert r.notes["worst_db"] < 1e-6
    assert r.notes["worst_column_l1"] < 2 + 1e-6
    # Exactly the instances with two or more binding caps break the summed bound.
    assert r.notes["summed_bound_failures"] == r.notes["instances_with_2plus_caps"] > 0
    assert not r.passed


def test_adjacent_samples_respect_radii(rng):
    spec = generate_specs(1, 52, seed=4)[0]
    adj = AdjacencyParams()
    for _ in range(300):
        a2, b2 = sample_adjacent(spec, adj, rng)
        assert np.abs(a2 - spec.rate_cap).sum() <= adj.delta_r + 1e-9
        assert abs(b2 - spec.energy) <= adj.delta_E + 1e-12
        assert np.all(a2 >= 0) and 0 <= b2 <= a2.sum()


def test_probe_identical_sets():
    spec = generate_specs(1, 52, seed=0)[0]
    rep = adjacency_probe(spec, AdjacencyParams(0, 0), 200, seed=0)
    assert rep.joint_l2 == 0 and rep.ok


def test_probe_bound_and_json():
    spec = generate_specs(1, 52, seed=0)[0]
    rep = adjacency_probe(spec, AdjacencyParams(), 2000, seed=0)
    assert rep.ok and 0 < rep.joint_l2 <= 38.4
    payload = json.loads(rep.to_json())
    assert payload["joint_l2_bound"] == pytest.approx(38.4) and payload["trials"] == 2000


def test_one_dimensional_tightness():
    E, dE = 30.0, 12.0
    x = project([0.0], BoxBudgetSet([E], E))
    y = project([0.0], BoxBudgetSet([E + dE], E + dE))
    assert np.linalg.norm(y - x) == pytest.approx(dE)


def test_report_flags_violation():
    spec = ChargingSpec([1.0, 1.0], 1.0)
    rep = adjacency_probe(spec, AdjacencyParams(1.0, 0.5), 100, seed=0)
    assert rep.ok
    rep.violations.append("synthetic")
    assert json.loads(rep.to_json())["ok"] is False


def test_bound_violation_is_raised_by_global_checks(monkeypatch):
    import dpdco.sensitivity as s

    monkeypatch.setattr(s, "_solve", lambda x0, a, b: np.full(len(a), float(b) * 3))
    with pytest.raises(BoundViolation):
        global_sensitivity_b([0, 0], [1, 1], 1, 1.5)
