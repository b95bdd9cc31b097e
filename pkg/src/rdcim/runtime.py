"""End-to-end CNN and SNN inference executed through simulated banks.

Layers run one at a time. CONV/FC layers are lowered to per-bank dot products
following the mapping plan; everything else (bias, ReLU, requantization,
pooling, LIF dynamics, argmax) is peripheral integer logic.
"""

from __future__ import annotations

import hashlib
import math
import re
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction

import numpy as np

from .adders import TreeInstance
from .cell import DEFAULT_DEVICE, DeviceParams
from .macro import (Bank, MacroConfig, SkipCounter, bank_mac_cycle, bit_serial_dot,
                    combine_banks, default_tree, program_bank, slice_weights)
from .mapper import LayerKind, MappingPlan, Network, map_network, prune

_LABEL = re.compile(r"^(\d+)A(\d+)W$")


@dataclass
class QuantConfig:
    """Precision and per-layer requantization multipliers.

    ``scales[layer]`` maps a layer's integer accumulator onto the next layer's
    unsigned activation grid: ``q = clamp(round(relu(acc) * scale))``.
    """

    activation_bits: int = 2
    weight_bits: int = 4
    scheme_label: str = ""
    scales: dict = field(default_factory=dict)

    def __post_init__(self):
        if not 1 <= self.activation_bits <= 8:
            raise ValueError("activation_bits must be in 1..8")
        if self.weight_bits not in (4, 8):
            raise ValueError("weight_bits must be 4 or 8")
        label = f"{self.activation_bits}A{self.weight_bits}W"
        if self.scheme_label and self.scheme_label != label:
            raise ValueError(f"scheme label {self.scheme_label!r} disagrees with bit widths ({label})")
        self.scheme_label = label
        self.scales = {k: Fraction(v) for k, v in self.scales.items()}
        if any(s <= 0 for s in self.scales.values()):
            raise ValueError("scales must be positive")

    @classmethod
    def from_label(cls, label: str, scales: dict | None = None) -> "QuantConfig":
        m = _LABEL.match(label.upper())
        if not m:
            raise ValueError(f"bad precision label {label!r}, expected e.g. '2A4W'")
        return cls(int(m.group(1)), int(m.group(2)), scales=scales or {})

    @property
    def act_max(self) -> int:
        return (1 << self.activation_bits) - 1


# --- quantization and peripheral ops ---------------------------------------------------

def _round_half_away(x):
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def quantize(x, scale: float, bits: int, signed: bool = True) -> np.ndarray:
    """Symmetric uniform quantization ``clamp(round(x / scale))``."""
    lo, hi = (-(1 << (bits - 1)), (1 << (bits - 1)) - 1) if signed else (0, (1 << bits) - 1)
    q = _round_half_away(np.asarray(x, dtype=float) / scale)
    return np.clip(q, lo, hi).astype(np.int64)


def dequantize(q, scale: float) -> np.ndarray:
    return np.asarray(q, dtype=float) * scale


def quantize_input(images, bits: int) -> np.ndarray:
    """Map pixels in [0, 1] to unsigned ``bits``-bit codes."""
    levels = (1 << bits) - 1
    return np.clip(np.floor(np.asarray(images, dtype=float) * levels + 0.5), 0, levels).astype(np.int64)


def requantize(acc, scale: Fraction, bits: int) -> np.ndarray:
    """``clamp(round_half_up(relu(acc) * scale), 0, 2^bits - 1)`` in integers."""
    acc = np.maximum(np.asarray(acc, dtype=np.int64), 0)
    num, den = scale.numerator, scale.denominator
    q = (2 * acc * num + den) // (2 * den)
    return np.minimum(q, (1 << bits) - 1)


def relu(x):
    return np.maximum(x, 0)


def maxpool(x, k: int, stride: int | None = None) -> np.ndarray:
    """Window maximum over NHWC (or HW) input."""
    x = np.asarray(x)
    squeeze = x.ndim == 2
    if squeeze:
        x = x[None, :, :, None]
    stride = stride or k
    h, w = x.shape[1:3]
    if k > h or k > w:
        raise ValueError(f"pool window {k} exceeds input {h}x{w}")
    oh, ow = (h - k) // stride + 1, (w - k) // stride + 1
    out = None
    for i in range(k):
        for j in range(k):
            v = x[:, i:i + stride * oh:stride, j:j + stride * ow:stride, :]
            out = v if out is None else np.maximum(out, v)
    return out[0, :, :, 0] if squeeze else out


def batchnorm_fold(weights, bias, gamma, beta, mean, var, eps: float = 1e-5):
    """Fold inference batch norm into the preceding layer's weights and bias.

    ``weights`` is ``(filters, fan_in)``; the per-filter statistics are 1-D.
    """
    k = np.asarray(gamma, dtype=float) / np.sqrt(np.asarray(var, dtype=float) + eps)
    w = np.asarray(weights, dtype=float) * k[:, None]
    b = (np.asarray(bias, dtype=float) - mean) * k + beta
    return w, b


def softmax(x, axis=-1):
    z = np.asarray(x, dtype=float)
    z = np.exp(z - z.max(axis=axis, keepdims=True))
    return z / z.sum(axis=axis, keepdims=True)


def softmax_argmax(x, axis=-1):
    """Class index; softmax is monotone, so the argmax of the logits suffices."""
    return np.argmax(np.asarray(x), axis=axis)


# --- LIF neurons ---------------------------------------------------------------------------

class ResetMode(Enum):
    ZERO = "zero"
    SUBTRACT = "subtract"


@dataclass
class LifNeuronState:
    membrane: object = 0
    threshold: float = 128
    leak: int = 0
    reset_mode: ResetMode = ResetMode.SUBTRACT
    membrane_bits: int = 24

    def __post_init__(self):
        if not self.threshold > 0:
            raise ValueError("threshold must be positive")
        self.reset_mode = ResetMode(self.reset_mode)


def lif_update(state: LifNeuronState, current):
    """Integrate one step of input current; returns (spikes, new state)."""
    bound = 1 << (state.membrane_bits - 1)
    v = np.clip(np.asarray(state.membrane, dtype=np.int64) + current - state.leak, -bound, bound - 1)
    fire = v >= state.threshold
    if state.reset_mode is ResetMode.ZERO:
        v = np.where(fire, 0, v)
    else:
        v = v - np.where(fire, int(state.threshold) if math.isfinite(state.threshold) else 0, 0)
    spikes = fire.astype(np.int8)
    if np.ndim(v) == 0:
        v, spikes = int(v), int(spikes)
    return spikes, LifNeuronState(v, state.threshold, state.leak, state.reset_mode, state.membrane_bits)


def snn_step(spikes_in, bank: Bank, tree: TreeInstance, state: LifNeuronState):
    """One time step: a single AND/adder-tree cycle, then LIF integration."""
    current = bank_mac_cycle(bank, spikes_in, tree).value
    return lif_update(state, current)


def rate_encode(images, steps: int) -> np.ndarray:
    """Deterministic rate coding; at ``steps=1`` a pixel spikes iff it is >= 0.5."""
    x = np.asarray(images, dtype=float)
    v = np.zeros_like(x)
    out = np.zeros((steps,) + x.shape, dtype=np.int64)
    for t in range(steps):
        v += x
        fire = v >= 0.5
        out[t] = fire
        v -= fire
    return out


def poisson_encode(images, steps: int, rng: np.random.Generator) -> np.ndarray:
    x = np.clip(np.asarray(images, dtype=float), 0, 1)
    return (rng.random((steps,) + x.shape) < x).astype(np.int64)


# --- network container --------------------------------------------------------------

@dataclass
class QuantizedNetwork:
    network: Network
    weights: dict            # layer -> int (filters, fan_in)
    quant: QuantConfig
    biases: dict = field(default_factory=dict)   # layer -> int (filters,)
    prune_ratio: float = 0.0

    def __post_init__(self):
        for layer in self.network.weighted:
            if layer.name not in self.weights:
                raise KeyError(f"missing weights for layer {layer.name!r}")
            w = np.asarray(self.weights[layer.name], dtype=np.int64)
            if w.shape != (layer.filters, layer.fan_in):
                raise ValueError(f"{layer.name}: weights {w.shape} != {(layer.filters, layer.fan_in)}")
            lo = -(1 << (self.quant.weight_bits - 1))
            if w.min(initial=0) < lo or w.max(initial=0) > -lo - 1:
                raise ValueError(f"{layer.name}: weights exceed {self.quant.weight_bits}-bit range")
            self.weights[layer.name] = w

    def masks(self) -> dict:
        return prune(self.weights, self.prune_ratio).masks

    def bias(self, name: str, filters: int) -> np.ndarray:
        b = self.biases.get(name)
        return np.zeros(filters, dtype=np.int64) if b is None else np.asarray(b, dtype=np.int64)

    @property
    def last_weighted(self) -> str:
        return self.network.weighted[-1].name

    def macro_config(self, activation_bits: int | None = None) -> MacroConfig:
        return MacroConfig(activation_bits=activation_bits or self.quant.activation_bits,
                           weight_bits=self.quant.weight_bits, signed_weights=True)


def snn_threshold_from_scale(scale: Fraction) -> int:
    """Smallest accumulator value that requantizes to 1 at one activation bit."""
    return max(1, -(-scale.denominator // (2 * scale.numerator)))


# --- macro-backed layer execution ---------------------------------------------------

def im2col(x, kh: int, kw: int, stride: int) -> np.ndarray:
    """NHWC input to ``(N, OH, OW, kh*kw*C)`` receptive fields in (kh, kw, C) order."""
    win = np.lib.stride_tricks.sliding_window_view(x, (kh, kw), axis=(1, 2))
    win = win[:, ::stride, ::stride]                       # (N, OH, OW, C, kh, kw)
    win = np.moveaxis(win, 3, -1)                          # (N, OH, OW, kh, kw, C)
    return win.reshape(win.shape[:3] + (-1,))


@dataclass
class LayerStats:
    counter: SkipCounter = field(default_factory=SkipCounter)
    zero_values: int = 0
    values: int = 0


class MacroExecutor:
    """Programs banks from a layer plan and evaluates them."""

    def __init__(self, cfg: MacroConfig, tree: TreeInstance | None = None,
                 params: DeviceParams = DEFAULT_DEVICE, rng: np.random.Generator | None = None,
                 skip_zero: bool = False):
        self.cfg = cfg
        self.tree = tree if tree is not None else default_tree(cfg)
        self.params = params
        self.rng = rng if rng is not None else np.random.default_rng(0)
        self.skip_zero = skip_zero

    def matvec(self, acts: np.ndarray, weights: np.ndarray, layer_plan, n_bits: int,
               stats: LayerStats) -> np.ndarray:
        """``acts @ weights.T`` for the retained weights, one bank at a time.

        Segments sharing a logical bank are programmed together; each segment
        is then evaluated with only its own rows' activations driven.
        """
        cfg = self.cfg
        out = np.zeros((acts.shape[0], weights.shape[0]), dtype=np.int64)
        by_bank: dict = {}
        for seg in layer_plan.segments:
            by_bank.setdefault(seg.bank, []).append(seg)
        offsets = [cfg.cols_per_bank * i for i in range(cfg.weight_slices)]
        for segs in by_bank.values():
            rows = np.zeros(cfg.rows_per_bank, dtype=np.int64)
            for s in segs:
                rows[s.row_start:s.row_start + s.rows] = weights[s.filter, s.indices]
            slices = slice_weights(rows, cfg.weight_bits, cfg.signed_weights, cfg.cols_per_bank)
            banks = []
            for i, sl in enumerate(slices):
                b = Bank(cfg.rows_per_bank, cfg.cols_per_bank, self.params)
                program_bank(b, sl, rng=self.rng, signed=cfg.signed_weights and i == len(slices) - 1)
                banks.append(b)
            for s in segs:
                a = np.zeros((acts.shape[0], cfg.rows_per_bank), dtype=np.int64)
                a[:, s.row_start:s.row_start + s.rows] = acts[:, s.indices]
                stats.zero_values += int(np.count_nonzero(a[:, s.row_start:s.row_start + s.rows] == 0))
                stats.values += acts.shape[0] * s.rows
                partials = [bit_serial_dot(b, a, n_bits, self.tree, skip_zero=self.skip_zero,
                                           counter=stats.counter, register_bits=cfg.accumulator_bits)
                            for b in banks]
                out[:, s.filter] += combine_banks(partials, offsets)
        return out


def conv_forward(x, layer, layer_plan, weights, executor: MacroExecutor, n_bits: int,
                 stats: LayerStats | None = None) -> np.ndarray:
    """Integer convolution (or FC) through the macro; returns pre-activation sums."""
    stats = stats if stats is not None else LayerStats()
    x = np.asarray(x, dtype=np.int64)
    if layer.kind is LayerKind.CONV:
        if x.shape[1:] != tuple(layer.input_shape):
            raise ValueError(f"{layer.name}: input {x.shape[1:]} != {layer.input_shape}")
        kh, kw = layer.kernel[:2]
        cols = im2col(x, kh, kw, layer.stride)
        lead = cols.shape[:3]
        out = executor.matvec(cols.reshape(-1, cols.shape[-1]), weights, layer_plan, n_bits, stats)
        return out.reshape(lead + (layer.filters,))
    x = x.reshape(x.shape[0], -1)
    if x.shape[1] != layer.fan_in:
        raise ValueError(f"{layer.name}: fan-in {x.shape[1]} != {layer.fan_in}")
    return executor.matvec(x, weights, layer_plan, n_bits, stats)


def _digest(a) -> str:
    return hashlib.sha256(np.ascontiguousarray(np.asarray(a, dtype=np.int64)).tobytes()).hexdigest()[:16]


@dataclass
class InferenceResult:
    predictions: np.ndarray
    logits: np.ndarray
    preacts: dict
    traces: list
    plan: MappingPlan

    @property
    def bank_cycles(self) -> int:
        return sum(t["bank_cycles"] for t in self.traces)

    @property
    def skipped_cycles(self) -> int:
        return sum(t["skipped_cycles"] for t in self.traces)


def run_inference(qnet: QuantizedNetwork, images, mode: str = "cnn", steps: int = 1,
                  plan: MappingPlan | None = None, tree: TreeInstance | None = None,
                  params: DeviceParams = DEFAULT_DEVICE, seed: int = 0, skip_zero: bool = False,
                  thresholds="scale", leak: int = 0, reset_mode=ResetMode.SUBTRACT,
                  encoding: str = "rate") -> InferenceResult:
    """Layer-by-layer inference through the macro.

    ``mode="cnn"`` uses bit-serial activations of ``quant.activation_bits``.
    ``mode="snn"`` encodes the images into ``steps`` binary spike frames and
    runs every layer with one-bit inputs and LIF neurons; the last layer's
    pre-activations are summed over time and read out by argmax.
    ``thresholds`` is ``"scale"`` (derived from each layer's requantization
    scale), an int, or a per-layer dict.
    """
    mode = mode.lower()
    if mode not in ("cnn", "snn"):
        raise ValueError("mode must be 'cnn' or 'snn'")
    n_bits = qnet.quant.activation_bits if mode == "cnn" else 1
    cfg = qnet.macro_config(n_bits)
    if plan is None:
        plan = map_network(qnet.network, qnet.weights, qnet.prune_ratio, cfg)
    executor = MacroExecutor(cfg, tree, params, np.random.default_rng(seed), skip_zero)
    images = np.asarray(images, dtype=float)
    if images.ndim == len(qnet.network.input_shape):
        images = images[None]
    batch = images.shape[0]

    if mode == "cnn":
        x = quantize_input(images, n_bits)                     # (B, ...)
        frames = 1
    else:
        enc = rate_encode(images, steps) if encoding == "rate" else \
            poisson_encode(images, steps, np.random.default_rng(seed))
        x = enc.reshape((steps * batch,) + images.shape[1:])   # time folded into batch
        frames = steps

    preacts, traces, logits = {}, [], None
    for layer in qnet.network.layers:
        if layer.kind is LayerKind.INPUT:
            continue
        if layer.kind is LayerKind.POOL:
            x = maxpool(x, layer.kernel[0], layer.stride)
            continue
        if layer.kind is LayerKind.FLATTEN:
            x = x.reshape(x.shape[0], -1)
            continue
        stats = LayerStats()
        acc = conv_forward(x, layer, plan.layer(layer.name), qnet.weights[layer.name],
                           executor, n_bits, stats)
        acc = acc + qnet.bias(layer.name, layer.filters)
        preacts[layer.name] = acc.reshape((frames, batch) + acc.shape[1:]) if mode == "snn" else acc
        trace = {"layer": layer.name, "kind": layer.kind.value, "mode": mode,
                 "shape": list(acc.shape[1:]), "bank_cycles": stats.counter.cycles,
                 "skipped_cycles": stats.counter.skipped,
                 "zero_fraction": stats.zero_values / stats.values if stats.values else 0.0,
                 "preact_min": int(acc.min()), "preact_max": int(acc.max()),
                 "preact_digest": _digest(acc)}
        if layer.name == qnet.last_weighted:
            logits = preacts[layer.name].sum(axis=0) if mode == "snn" else acc
            trace["softmax_mean"] = softmax(logits.reshape(batch, -1)).mean(axis=0).round(6).tolist()
        elif mode == "cnn":
            x = requantize(acc, qnet.quant.scales[layer.name], n_bits)
        else:
            if thresholds == "scale":
                thr = snn_threshold_from_scale(qnet.quant.scales[layer.name])
            elif isinstance(thresholds, dict):
                thr = thresholds[layer.name]
            else:
                thr = thresholds
            seq = preacts[layer.name]
            state = LifNeuronState(np.zeros(seq.shape[1:], dtype=np.int64), thr, leak, reset_mode)
            spikes = np.empty(seq.shape, dtype=np.int64)
            for t in range(frames):
                spikes[t], state = lif_update(state, seq[t])
            x = spikes.reshape((frames * batch,) + seq.shape[2:])
            trace["threshold"] = thr
            trace["spike_rate"] = float(spikes.mean())
        traces.append(trace)
    if logits is None:
        raise ValueError("network has no weighted layers")
    logits = logits.reshape(batch, -1)
    return InferenceResult(softmax_argmax(logits, axis=1), logits, preacts, traces, plan)
