from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rdcim.fixtures import identity_fixture, lenet5_fixture, synthetic_images
from rdcim.macro import Bank, bit_serial_dot, default_tree, program_bank
from rdcim.reference import direct_conv, reference_forward
from rdcim.runtime import (LifNeuronState, QuantConfig, ResetMode, im2col, lif_update, maxpool,
                           quantize, quantize_input, rate_encode, requantize, run_inference,
                           snn_step, snn_threshold_from_scale, softmax)


def test_quant_label():
    q = QuantConfig.from_label("2a4w")
    assert (q.activation_bits, q.weight_bits, q.scheme_label) == (2, 4, "2A4W")
    with pytest.raises(ValueError):
        QuantConfig.from_label("4W2A")
    with pytest.raises(ValueError):
        QuantConfig(2, 4, scheme_label="4A4W")


def test_quantize_rounding_and_clamp():
    assert quantize([0.5, -0.5, 1.49, 100], 1.0, 4).tolist() == [1, -1, 1, 7]
    assert quantize_input([0.0, 0.5, 1.0], 2).tolist() == [0, 2, 3]


@settings(max_examples=100, deadline=None)
@given(st.integers(-5000, 5000), st.integers(1, 50), st.integers(1, 500), st.integers(1, 8))
def test_requantize_matches_fraction_arithmetic(acc, num, den, bits):
    s = Fraction(num, den)
    exact = max(acc, 0) * s
    expect = min(int(exact + Fraction(1, 2)), (1 << bits) - 1)
    assert int(requantize(acc, s, bits)) == expect


def test_maxpool_2d_and_nhwc():
    x = np.arange(16).reshape(4, 4)
    assert maxpool(x, 2).tolist() == [[5, 7], [13, 15]]
    assert maxpool(x[None, :, :, None], 2).shape == (1, 2, 2, 1)
    with pytest.raises(ValueError):
        maxpool(x, 5)


def test_im2col_order():
    x = np.arange(3 * 3 * 2).reshape(1, 3, 3, 2)
    cols = im2col(x, 2, 2, 1)
    assert cols.shape == (1, 2, 2, 8)
    assert cols[0, 0, 0].tolist() == x[0, 0:2, 0:2, :].ravel().tolist()


def test_direct_conv_matches_im2col():
    rng = np.random.default_rng(3)
    x = rng.integers(0, 4, (2, 6, 6, 3))
    w = rng.integers(-8, 8, (5, 3, 3, 3))
    ref = direct_conv(x, w)
    cols = im2col(x, 3, 3, 1) @ w.reshape(5, -1).T
    assert np.array_equal(ref, cols)


def test_lif_reset_modes():
    s = LifNeuronState(0, threshold=10, reset_mode=ResetMode.SUBTRACT)
    spk, s = lif_update(s, 13)
    assert (spk, s.membrane) == (1, 3)
    z = LifNeuronState(0, threshold=10, reset_mode="zero")
    spk, z = lif_update(z, 13)
    assert (spk, z.membrane) == (1, 0)
    leaky = LifNeuronState(5, threshold=10, leak=2)
    spk, leaky = lif_update(leaky, 0)
    assert (spk, leaky.membrane) == (0, 3)


def test_lif_threshold_positive():
    with pytest.raises(ValueError):
        LifNeuronState(threshold=0)


def test_snn_step_uses_one_cycle():
    bank = program_bank(Bank(), np.full(64, 3), rng=np.random.default_rng(0))
    spikes = np.zeros(64, dtype=int)
    spikes[:4] = 1
    out, st_ = snn_step(spikes, bank, default_tree(), LifNeuronState(0, threshold=10))
    assert (out, st_.membrane, bank.cycles) == (1, 2, 1)


def test_threshold_from_scale_is_requant_boundary():
    for s in (Fraction(1, 7), Fraction(3, 40), Fraction(2, 1), Fraction(1, 2)):
        t = snn_threshold_from_scale(s)
        assert requantize(t, s, 1) == 1
        assert t == 1 or requantize(t - 1, s, 1) == 0


def test_rate_encode():
    enc = rate_encode(np.array([0.0, 0.25, 0.5, 1.0]), 4)
    assert enc.sum(axis=0).tolist() == [0, 1, 2, 4]
    assert rate_encode(np.array([0.49, 0.5]), 1)[0].tolist() == [0, 1]


def test_softmax_rows_sum_to_one():
    p = softmax(np.array([[1.0, 2.0, 3.0], [1000.0, 0.0, -1000.0]]))
    assert np.allclose(p.sum(axis=1), 1)


def test_identity_network_argmax():
    qnet = identity_fixture("4A4W")
    imgs = np.array([[[[0.1, 0.9, 0.2, 0.3]]], [[[0.8, 0.1, 0.0, 0.2]]]])
    res = run_inference(qnet, imgs)
    assert res.predictions.tolist() == [1, 0]
    assert res.logits.tolist() == [[2, 14, 3, 5], [12, 2, 0, 3]]


@pytest.mark.parametrize("label", ["1A4W", "2A4W"])
def test_lenet_matches_reference_small(label):
    qnet = lenet5_fixture(label, seed=3, prune_ratio=0.4)
    imgs = synthetic_images(6, seed=8)
    res = run_inference(qnet, imgs)
    pred, logits, pre = reference_forward(qnet, imgs)
    assert np.array_equal(res.predictions, pred)
    assert np.array_equal(res.logits, logits)
    for name in pre:
        assert np.array_equal(res.preacts[name], pre[name])


def test_snn_matches_reference_multi_step():
    qnet = lenet5_fixture("1A4W", seed=4)
    imgs = synthetic_images(4, seed=2)
    res = run_inference(qnet, imgs, mode="snn", steps=3, leak=1)
    pred, logits, _ = reference_forward(qnet, imgs, "snn", 3, leak=1)
    assert np.array_equal(res.logits, logits)
    assert [t.get("threshold") is not None for t in res.traces][:4] == [True] * 4


def test_snn_t1_equals_cnn_n1():
    qnet = lenet5_fixture("1A4W", seed=6)
    imgs = synthetic_images(5, seed=1)
    cnn = run_inference(qnet, imgs)
    snn = run_inference(qnet, imgs, mode="snn", steps=1, reset_mode=ResetMode.ZERO)
    for name, acc in cnn.preacts.items():
        assert np.array_equal(snn.preacts[name][0], acc)
    assert np.array_equal(cnn.logits, snn.logits)


def test_skip_zero_changes_only_cycles():
    qnet = lenet5_fixture("2A4W", seed=1, prune_ratio=0.4)
    imgs = synthetic_images(3, seed=4)
    a = run_inference(qnet, imgs)
    b = run_inference(qnet, imgs, skip_zero=True)
    assert np.array_equal(a.logits, b.logits)
    assert b.skipped_cycles > 0
    assert a.bank_cycles == b.bank_cycles


def test_trace_fields():
    qnet = identity_fixture()
    res = run_inference(qnet, np.ones((1, 1, 1, 4)))
    t = res.traces[-1]
    assert {"layer", "bank_cycles", "preact_digest", "softmax_mean"} <= set(t)


def test_bad_mode():
    with pytest.raises(ValueError):
        run_inference(identity_fixture(), np.ones((1, 1, 1, 4)), mode="rnn")


def test_macro_dot_agrees_with_plain_dot():
    rng = np.random.default_rng(0)
    w = rng.integers(-8, 8, 64)
    x = rng.integers(0, 4, 64)
    bank = program_bank(Bank(), w, rng=rng)
    assert bit_serial_dot(bank, x, 2, default_tree()) == int(x @ w)
