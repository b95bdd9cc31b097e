"""Direct integer interpreter for quantized networks.

Shares no arithmetic with the macro path: convolutions are accumulated kernel
offset by kernel offset over whole feature maps, with pruned weights zeroed in
place. Used as the oracle for end-to-end equivalence.
"""

from __future__ import annotations

import numpy as np

from .mapper import LayerKind
from .runtime import (LifNeuronState, QuantizedNetwork, lif_update, maxpool, quantize_input,
                      rate_encode, requantize, snn_threshold_from_scale)


def direct_conv(x, w4, stride: int = 1) -> np.ndarray:
    """Valid convolution of NHWC ``x`` with ``w4`` shaped (F, kh, kw, C)."""
    f, kh, kw, _ = w4.shape
    n, h, wd, _ = x.shape
    oh, ow = (h - kh) // stride + 1, (wd - kw) // stride + 1
    out = np.zeros((n, oh, ow, f), dtype=np.int64)
    for i in range(kh):
        for j in range(kw):
            patch = x[:, i:i + stride * oh:stride, j:j + stride * ow:stride, :]
            out += np.einsum("nhwc,fc->nhwf", patch, w4[:, i, j, :])
    return out


def _layer_sum(layer, x, w, bias):
    if layer.kind is LayerKind.CONV:
        kh, kw, cin, f = layer.kernel
        return direct_conv(x, w.reshape(f, kh, kw, cin), layer.stride) + bias
    return x.reshape(x.shape[0], -1) @ w.T + bias


def reference_forward(qnet: QuantizedNetwork, images, mode: str = "cnn", steps: int = 1,
                      thresholds="scale", leak: int = 0, reset_mode="subtract"):
    """Returns ``(predictions, logits, preacts)`` with the runtime's semantics."""
    images = np.asarray(images, dtype=float)
    if images.ndim == len(qnet.network.input_shape):
        images = images[None]
    n_bits = qnet.quant.activation_bits if mode == "cnn" else 1
    masks = qnet.masks()
    preacts, logits = {}, None
    if mode == "cnn":
        xs = [quantize_input(images, n_bits)]
    else:
        xs = list(rate_encode(images, steps))
    states: dict = {}
    outputs = []
    for x in xs:   # one frame per time step in SNN mode
        for layer in qnet.network.layers:
            if layer.kind is LayerKind.POOL:
                x = maxpool(x, layer.kernel[0], layer.stride)
            elif layer.kind is LayerKind.FLATTEN:
                x = x.reshape(x.shape[0], -1)
            elif layer.has_weights:
                w = qnet.weights[layer.name] * masks[layer.name]
                acc = _layer_sum(layer, np.asarray(x, dtype=np.int64), w,
                                 qnet.bias(layer.name, layer.filters))
                preacts.setdefault(layer.name, []).append(acc)
                if layer.name == qnet.last_weighted:
                    outputs.append(acc)
                    break
                scale = qnet.quant.scales[layer.name]
                if mode == "cnn":
                    x = requantize(acc, scale, n_bits)
                else:
                    thr = (snn_threshold_from_scale(scale) if thresholds == "scale" else
                           thresholds[layer.name] if isinstance(thresholds, dict) else thresholds)
                    st = states.get(layer.name) or LifNeuronState(np.zeros_like(acc), thr, leak, reset_mode)
                    x, states[layer.name] = lif_update(st, acc)
    logits = np.sum(outputs, axis=0).reshape(images.shape[0], -1)
    if mode == "cnn":
        preacts = {k: v[0] for k, v in preacts.items()}
    else:
        preacts = {k: np.stack(v) for k, v in preacts.items()}
    return np.argmax(logits, axis=1), logits, preacts
