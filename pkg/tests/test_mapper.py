import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rdcim.fixtures import lenet5_fixture
from rdcim.macro import MacroConfig
from rdcim.mapper import (LayerKind, NetworkError, allocate, lenet5, map_network, parse_network,
                          prune, prune_array, round_half_up)


def test_lenet5_shapes():
    net = lenet5()
    shapes = {l.name: l.output_shape for l in net.layers}
    assert shapes["conv1"] == (24, 24, 6)
    assert shapes["pool2"] == (4, 4, 16)
    assert shapes["flatten"] == (1920,)
    assert [l.name for l in net.weighted] == ["conv1", "conv2", "conv3", "fc1", "fc2"]


def test_unknown_kind_names_layer():
    with pytest.raises(NetworkError, match="'mystery'"):
        parse_network({"input_shape": [4, 4, 1], "layers": [{"name": "mystery", "kind": "lstm"}]})


def test_declared_shape_mismatch():
    with pytest.raises(NetworkError):
        parse_network({"input_shape": [8, 8, 1],
                       "layers": [{"name": "c", "kind": "conv", "kernel": [3, 3, 1, 2],
                                   "output_shape": [5, 5, 2]}]})


def test_round_half_up():
    assert [round_half_up(x) for x in (0.5, 1.5, 2.5, 14.999999999)] == [1, 2, 3, 15]


def test_prune_array_ties_keep_first():
    m = prune_array(np.array([1, -1, 1, 1]), 0.5)
    assert m.tolist() == [True, True, False, False]


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31), st.floats(0, 0.95), st.integers(1, 6), st.integers(1, 40))
def test_prune_retains_expected_count(seed, ratio, filters, fan_in):
    w = np.random.default_rng(seed).integers(-8, 8, (filters, fan_in))
    m = prune({"l": w}, ratio)["l"]
    assert m.sum(axis=1).tolist() == [round_half_up((1 - ratio) * fan_in)] * filters
    layer = prune({"l": w}, ratio, granularity="layer")["l"]
    assert layer.sum() == round_half_up((1 - ratio) * w.size)
    # every kept magnitude is at least every dropped one, within each filter
    for f in range(filters):
        kept, dropped = np.abs(w[f][m[f]]), np.abs(w[f][~m[f]])
        if kept.size and dropped.size:
            assert kept.min() >= dropped.max()


def test_prune_zero_is_identity():
    qnet = lenet5_fixture("1A4W")
    a = map_network(lenet5(), qnet.weights, 0.0)
    assert a.totals["retained_weights"] == a.totals["total_weights"]
    assert a.totals["mac_reduction"] == 0


def test_conv_and_fc_allocation():
    net = parse_network({"input_shape": [1, 1, 100], "layers": [
        {"name": "f", "kind": "flatten"}, {"name": "fc", "kind": "fc", "units": 3}]})
    fc = net.layer("fc")
    mask = np.ones((3, 100), dtype=bool)
    plan = allocate(fc, mask, MacroConfig())
    # 300 weights stream-packed into 64-row banks
    assert plan.banks_used == 5
    assert sum(s.rows for s in plan.segments) == 300
    assert plan.segments[1].bank == 1 and plan.segments[1].filter == 0
    assert plan.segments[2].row_start == 36


def test_single_fc_bank_exact_fit():
    net = parse_network({"input_shape": [64], "layers": [{"name": "fc", "kind": "fc", "units": 1}]})
    plan = map_network(net, {"fc": np.ones((1, 64), dtype=int)}, 0.0)
    assert plan.layer("fc").banks_used == 1
    assert plan.layer("fc").op_cycles == 1


def test_8bit_weights_double_banks():
    qnet = lenet5_fixture("1A4W")
    p4 = map_network(lenet5(), qnet.weights, 0.4)
    p8 = map_network(lenet5(), qnet.weights, 0.4, MacroConfig(activation_bits=1, weight_bits=8))
    assert p8.layer("conv2").banks_used == 2 * p4.layer("conv2").banks_used


def test_lenet_plan_flags_and_cycles():
    qnet = lenet5_fixture("1A4W")
    plan = map_network(lenet5(), qnet.weights, 0.4)
    c1 = plan.layer("conv1")
    assert c1.flags["banks_used_matches_reference"]
    assert c1.op_cycles == 1 * 576 * 1
    d = plan.as_dict()
    assert d["totals"]["mac_reduction"] == pytest.approx(0.4, abs=0.01)
    assert "cycle_formula" in d
    rows = plan.table_rows()
    assert rows[0]["Banks Used"] == "NA"
    assert {r["Layer"] for r in rows} >= {"conv1", "fc2"}


def test_dead_filter_recorded():
    net = parse_network({"input_shape": [3, 3, 1], "layers": [
        {"name": "c", "kind": "conv", "kernel": [3, 3, 1, 2]}]})
    mask = np.array([[True] * 9, [False] * 9])
    plan = allocate(net.layer("c"), mask, MacroConfig())
    assert plan.dead_filters == [1]
    assert plan.banks_used == 1


def test_weight_shape_checked():
    with pytest.raises(NetworkError):
        map_network(lenet5(), {l.name: np.zeros((1, 1)) for l in lenet5().weighted}, 0.0)
