"""Deterministic fixture networks and images.

No trained weights ship with the package; LeNet-5 weights here are seeded
random draws, quantized the same way trained weights would be. They exist to
exercise the macro against the reference interpreter, not to classify digits.
"""

from __future__ import annotations

from fractions import Fraction

import numpy as np

from .mapper import LayerKind, Network, lenet5, load_network, DATA_DIR
from .runtime import QuantConfig, QuantizedNetwork, quantize, quantize_input, requantize


def random_float_weights(network: Network, seed: int = 0) -> dict:
    rng = np.random.default_rng(seed)
    return {l.name: rng.normal(0, np.sqrt(2.0 / l.fan_in), size=(l.filters, l.fan_in))
            for l in network.weighted}


def quantize_weights(float_weights: dict, bits: int) -> tuple[dict, dict]:
    """Per-layer max-abs symmetric quantization; returns (int weights, scales)."""
    qmax = (1 << (bits - 1)) - 1
    ints, scales = {}, {}
    for name, w in float_weights.items():
        s = float(np.abs(w).max()) / qmax or 1.0
        ints[name] = quantize(w, s, bits, signed=True)
        scales[name] = s
    return ints, scales


def synthetic_images(n: int = 100, size: int = 28, seed: int = 0) -> np.ndarray:
    """Stroke-like grayscale images in [0, 1], shape (n, size, size, 1)."""
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:size, 0:size]
    out = np.zeros((n, size, size), dtype=float)
    for k in range(n):
        img = np.zeros((size, size))
        for _ in range(rng.integers(2, 5)):
            p0, p1 = rng.uniform(4, size - 4, 2), rng.uniform(4, size - 4, 2)
            width = rng.uniform(1.0, 2.2)
            d = p1 - p0
            t = np.clip(((yy - p0[0]) * d[0] + (xx - p0[1]) * d[1]) / max(d @ d, 1e-9), 0, 1)
            dist = np.hypot(yy - (p0[0] + t * d[0]), xx - (p0[1] + t * d[1]))
            img = np.maximum(img, np.clip(1.5 - dist / width, 0, 1))
        out[k] = img
    return out[..., None]


def calibrate_scales(qnet: QuantizedNetwork, images, percentile: float = 99.5) -> dict:
    """Pick each layer's requantization multiplier from activation statistics.

    Runs the network layer by layer in integer arithmetic and maps the given
    percentile of the positive accumulator values to the top activation code.
    """
    from .reference import _layer_sum
    from .runtime import maxpool

    n_bits = qnet.quant.activation_bits
    top = (1 << n_bits) - 1
    masks = qnet.masks()
    scales = {}
    x = quantize_input(np.asarray(images, dtype=float), n_bits)
    for layer in qnet.network.layers:
        if layer.kind is LayerKind.POOL:
            x = maxpool(x, layer.kernel[0], layer.stride)
        elif layer.kind is LayerKind.FLATTEN:
            x = x.reshape(x.shape[0], -1)
        elif layer.has_weights:
            acc = _layer_sum(layer, x, qnet.weights[layer.name] * masks[layer.name],
                             qnet.bias(layer.name, layer.filters))
            if layer.name == qnet.last_weighted:
                break
            pos = acc[acc > 0]
            ref = float(np.percentile(pos, percentile)) if pos.size else 1.0
            scales[layer.name] = Fraction(top, max(1, int(np.ceil(ref))))
            x = requantize(acc, scales[layer.name], n_bits)
    return scales


def build_network(network: Network, quant: QuantConfig, seed: int = 0, prune_ratio: float = 0.0,
                  calibration_images=None, with_bias: bool = True) -> QuantizedNetwork:
    """Seeded random weights for any network, with calibrated scales."""
    ints, _ = quantize_weights(random_float_weights(network, seed), quant.weight_bits)
    rng = np.random.default_rng(seed + 1)
    biases = {l.name: rng.integers(-4, 5, size=l.filters) for l in network.weighted} if with_bias else {}
    qnet = QuantizedNetwork(network, ints, quant, biases, prune_ratio)
    if calibration_images is None:
        calibration_images = synthetic_images(32, network.input_shape[0], seed + 2)
    qnet.quant.scales = calibrate_scales(qnet, calibration_images)
    return qnet


def lenet5_fixture(label: str = "2A4W", seed: int = 0, prune_ratio: float = 0.0) -> QuantizedNetwork:
    return build_network(lenet5(), QuantConfig.from_label(label), seed, prune_ratio)


def identity_fixture(label: str = "4A4W") -> QuantizedNetwork:
    """A single FC layer with identity weights: prediction = argmax of the input."""
    net = load_network(DATA_DIR / "identity.json")
    n = net.weighted[0].filters
    return QuantizedNetwork(net, {"fc": np.eye(n, dtype=np.int64)}, QuantConfig.from_label(label))
