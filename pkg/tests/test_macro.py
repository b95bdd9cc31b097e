import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import signed_bits_value
from rdcim.macro import (Bank, CimDisabledError, CyclePartialSum, MacroConfig, SkipCounter,
                         WideBankGroup, bank_mac_cycle, bit_serial_dot, combine_banks, default_tree,
                         program_bank, slice_weights, sparsity_stats)

TREE = default_tree()


def _bank(weights, signed=True, seed=0):
    return program_bank(Bank(), weights, rng=np.random.default_rng(seed), signed=signed)


def test_program_stores_words():
    w = np.arange(-8, 8).repeat(4)
    bank = _bank(w)
    assert bank.stored_words().tolist() == w.tolist()
    assert signed_bits_value(bank.states[0].tolist(), True) == -8


def test_program_rejects_out_of_range():
    with pytest.raises(ValueError):
        _bank([8])
    with pytest.raises(ValueError):
        _bank([-1], signed=False)
    with pytest.raises(ValueError):
        _bank(np.zeros(65, dtype=int))


def test_write_mode_blocks_compute():
    bank = _bank(np.ones(64, dtype=int))
    bank.enter_write()
    with pytest.raises(CimDisabledError):
        bank_mac_cycle(bank, np.ones(64, dtype=int), TREE)


def test_single_cycle_is_masked_sum():
    rng = np.random.default_rng(2)
    w = rng.integers(-8, 8, 64)
    bits = rng.integers(0, 2, 64)
    assert bank_mac_cycle(_bank(w), bits, TREE).value == int(w @ bits)


def test_partial_sum_register_overflow():
    CyclePartialSum(511)
    CyclePartialSum(-512)
    with pytest.raises(OverflowError):
        CyclePartialSum(512)
    with pytest.raises(OverflowError):
        CyclePartialSum(1024, signed=False)


def test_batched_dot_matches_rows():
    rng = np.random.default_rng(5)
    w = rng.integers(-8, 8, 64)
    x = rng.integers(0, 16, (7, 64))
    got = bit_serial_dot(_bank(w), x, 4, TREE)
    assert got.tolist() == (x @ w).tolist()


@settings(max_examples=80, deadline=None)
@given(st.integers(0, 2**31), st.integers(1, 8), st.booleans(), st.integers(1, 64))
def test_dot_matches_integers(seed, n_bits, signed, rows):
    rng = np.random.default_rng(seed)
    w = rng.integers(-8, 8, rows) if signed else rng.integers(0, 16, rows)
    x = rng.integers(0, 1 << n_bits, rows)
    assert bit_serial_dot(_bank(w, signed), x, n_bits, TREE) == int(w @ x)


def test_cycle_count_and_skip_counter():
    bank = _bank(np.ones(64, dtype=int))
    c = SkipCounter()
    x = np.zeros(64, dtype=int)
    x[3] = 0b101
    assert bit_serial_dot(bank, x, 3, TREE, skip_zero=True, counter=c) == 5
    assert (c.cycles, c.skipped) == (3, 1)
    assert bank.cycles == 2


def test_rejects_out_of_range_activations():
    with pytest.raises(ValueError):
        bit_serial_dot(_bank([1]), [16], 4, TREE)


def test_combine_banks_validation():
    assert combine_banks([3, -1], [0, 4]) == 3 - 16
    with pytest.raises(ValueError):
        combine_banks([1, 2], [0, 3])
    with pytest.raises(ValueError):
        combine_banks([1], [0, 4])


@pytest.mark.parametrize("bits,signed", [(4, True), (8, True), (8, False), (12, True)])
def test_slice_weights_roundtrip(bits, signed):
    lo, hi = (-(1 << bits - 1), (1 << bits - 1) - 1) if signed else (0, (1 << bits) - 1)
    w = np.arange(lo, hi + 1)
    s = slice_weights(w, bits, signed)
    assert len(s) == bits // 4
    assert combine_banks(s, [4 * i for i in range(len(s))]).tolist() == w.tolist()


def test_wide_group_8bit():
    cfg = MacroConfig(activation_bits=8, weight_bits=8)
    rng = np.random.default_rng(9)
    w = rng.integers(-128, 128, 64)
    x = rng.integers(0, 256, 64)
    grp = WideBankGroup(cfg, TREE).program(w, rng)
    assert grp.dot(x) == int(w @ x)


def test_sparsity_stats_counts_planes():
    s = sparsity_stats([[0, 0, 1, 0], [0, 0, 0, 0]], 2)
    assert (s.skipped_cycles, s.total_cycles) == (3, 4)
    assert s.zero_fraction == pytest.approx(7 / 8)


def test_config_validation():
    with pytest.raises(ValueError):
        MacroConfig(weight_bits=6)
    with pytest.raises(ValueError):
        MacroConfig(activation_bits=9)
    assert MacroConfig().capacity_bits == 64 * 64 * 4
