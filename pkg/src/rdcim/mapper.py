"""Layer mapping: magnitude pruning, bank allocation and cycle scheduling.

Weights are handled per layer as 2-D ``(filters, fan_in)`` integer arrays.
Convolution fan-in is flattened in ``(kh, kw, in_ch)`` order to match NHWC
activations.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from .macro import MacroConfig

DATA_DIR = Path(__file__).parent / "data"


class NetworkError(ValueError):
    pass


class LayerKind(Enum):
    INPUT = "input"
    CONV = "conv"
    FC = "fc"
    POOL = "pool"
    FLATTEN = "flatten"


@dataclass(frozen=True)
class LayerSpec:
    name: str
    kind: LayerKind
    input_shape: tuple
    output_shape: tuple
    kernel: tuple = ()      # (h, w, in, out) for CONV/FC, (h, w) for POOL
    stride: int = 1
    reference: dict | None = None

    def __post_init__(self):
        if self.kind is LayerKind.CONV:
            h, w, cin, cout = self.kernel
            ih, iw, ic = self.input_shape
            if ic != cin:
                raise NetworkError(f"{self.name}: kernel expects {cin} channels, input has {ic}")
            expect = ((ih - h) // self.stride + 1, (iw - w) // self.stride + 1, cout)
            if (ih - h) % self.stride or (iw - w) % self.stride or min(expect) < 1:
                raise NetworkError(f"{self.name}: kernel/stride do not tile input {self.input_shape}")
        elif self.kind is LayerKind.POOL:
            h, w = self.kernel
            ih, iw, ic = self.input_shape
            if h > ih or w > iw:
                raise NetworkError(f"{self.name}: pool window exceeds input")
            expect = ((ih - h) // self.stride + 1, (iw - w) // self.stride + 1, ic)
        elif self.kind is LayerKind.FC:
            expect = (self.kernel[3],)
            if self.kernel[2] != math.prod(self.input_shape):
                raise NetworkError(f"{self.name}: fan-in mismatch")
        elif self.kind is LayerKind.FLATTEN:
            expect = (math.prod(self.input_shape),)
        else:
            expect = tuple(self.input_shape)
        if tuple(self.output_shape) != tuple(expect):
            raise NetworkError(f"{self.name}: output shape {self.output_shape} inconsistent, expected {expect}")

    @property
    def has_weights(self) -> bool:
        return self.kind in (LayerKind.CONV, LayerKind.FC)

    @property
    def fan_in(self) -> int:
        h, w, cin, _ = self.kernel
        return h * w * cin

    @property
    def filters(self) -> int:
        return self.kernel[3]

    @property
    def output_positions(self) -> int:
        return self.output_shape[0] * self.output_shape[1] if self.kind is LayerKind.CONV else 1

    def kernel_label(self) -> str:
        if self.kind is LayerKind.CONV:
            return f"{self.kernel[0]}x{self.kernel[1]}x{self.kernel[3]}"
        if self.kind is LayerKind.POOL:
            return f"{self.kernel[0]}x{self.kernel[1]}"
        if self.kind is LayerKind.FC:
            return str(self.kernel[3])
        return "-"

    def output_label(self) -> str:
        return "x".join(str(s) for s in self.output_shape)


@dataclass
class Network:
    name: str
    input_shape: tuple
    layers: list

    @property
    def weighted(self) -> list:
        return [l for l in self.layers if l.has_weights]

    def layer(self, name: str) -> LayerSpec:
        for l in self.layers:
            if l.name == name:
                return l
        raise KeyError(name)


def parse_network(desc: dict) -> Network:
    """Build layer specs from a JSON network description, deriving shapes."""
    shape = tuple(desc["input_shape"])
    layers = []
    for i, d in enumerate(desc["layers"]):
        name = d.get("name", f"layer{i}")
        try:
            kind = LayerKind(str(d["kind"]).lower())
        except (KeyError, ValueError):
            raise NetworkError(f"layer {name!r}: unknown kind {d.get('kind')!r}") from None
        stride = int(d.get("stride", 1))
        kernel: tuple = ()
        if kind is LayerKind.CONV:
            kh, kw, cin, cout = d["kernel"]
            kernel = (kh, kw, cin, cout)
            out = ((shape[0] - kh) // stride + 1, (shape[1] - kw) // stride + 1, cout)
        elif kind is LayerKind.POOL:
            kernel = tuple(d["kernel"])
            stride = int(d.get("stride", kernel[0]))
            out = ((shape[0] - kernel[0]) // stride + 1, (shape[1] - kernel[1]) // stride + 1, shape[2])
        elif kind is LayerKind.FC:
            units = int(d["units"])
            kernel = (1, 1, math.prod(shape), units)
            out = (units,)
        elif kind is LayerKind.FLATTEN:
            out = (math.prod(shape),)
        else:
            out = shape
        if "output_shape" in d and tuple(d["output_shape"]) != out:
            raise NetworkError(f"layer {name!r}: declared output {d['output_shape']} != derived {list(out)}")
        layers.append(LayerSpec(name, kind, shape, out, kernel, stride, d.get("reference")))
        shape = out
    return Network(desc.get("name", "network"), tuple(desc["input_shape"]), layers)


def load_network(path) -> Network:
    with open(path) as fh:
        return parse_network(json.load(fh))


def lenet5() -> Network:
    return load_network(DATA_DIR / "lenet5.json")


# --- pruning --------------------------------------------------------------------

def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5 + 1e-9))


@dataclass
class PruneMask:
    masks: dict
    ratio: float

    def __getitem__(self, name):
        return self.masks[name]

    def retained(self, name: str) -> int:
        return int(self.masks[name].sum())


def prune_array(w, ratio: float) -> np.ndarray:
    """Keep the ``round((1 - ratio) * n)`` largest-magnitude entries.

    Equal magnitudes keep the lower flat index first.
    """
    if not 0 <= ratio < 1:
        raise ValueError("ratio must lie in [0, 1)")
    w = np.asarray(w)
    keep = round_half_up((1 - ratio) * w.size)
    order = np.argsort(-np.abs(w.ravel()), kind="stable")
    mask = np.zeros(w.size, dtype=bool)
    mask[order[:keep]] = True
    return mask.reshape(w.shape)


def prune(weights: dict, ratio: float, granularity: str = "filter") -> PruneMask:
    """Magnitude pruning at the same ratio in every layer.

    ``granularity="filter"`` ranks weights within each output filter (row),
    so every filter of a layer keeps the same count; ``"layer"`` ranks the
    whole layer at once.
    """
    if granularity == "layer":
        return PruneMask({name: prune_array(w, ratio) for name, w in weights.items()}, ratio)
    if granularity != "filter":
        raise ValueError(f"unknown pruning granularity {granularity!r}")
    masks = {}
    for name, w in weights.items():
        w = np.asarray(w)
        rows = w.reshape(w.shape[0], -1) if w.ndim > 1 else w[None]
        masks[name] = np.stack([prune_array(r, ratio) for r in rows]).reshape(w.shape)
    return PruneMask(masks, ratio)


# --- allocation and scheduling ----------------------------------------------------

@dataclass
class Segment:
    """Contiguous rows of one logical bank holding part of one filter."""

    bank: int
    filter: int
    row_start: int
    indices: np.ndarray   # fan-in positions stored in rows row_start..

    @property
    def rows(self) -> int:
        return len(self.indices)


@dataclass
class LayerPlan:
    name: str
    kind: LayerKind
    kernel: str
    output: str
    banks_used: int = 0
    banks_per_filter: int = 0
    filter_banks: list = field(default_factory=list)
    dead_filters: list = field(default_factory=list)
    segments: list = field(default_factory=list)
    retained: int = 0
    total_weights: int = 0
    output_positions: int = 0
    passes: int = 0
    op_cycles: int = 0
    macs: int = 0
    macs_unpruned: int = 0
    reference: dict | None = None

    @property
    def flags(self) -> dict:
        if not self.reference:
            return {}
        out = {}
        for key in ("banks_used", "op_cycles"):
            if key in self.reference:
                out[f"{key}_matches_reference"] = getattr(self, key) == self.reference[key]
        return out

    def as_dict(self) -> dict:
        return {
            "layer": self.name, "kind": self.kind.value, "kernel": self.kernel, "output": self.output,
            "banks_used": self.banks_used, "banks_per_filter": self.banks_per_filter,
            "dead_filters": self.dead_filters, "retained_weights": self.retained,
            "total_weights": self.total_weights, "output_positions": self.output_positions,
            "passes": self.passes, "op_cycles": self.op_cycles, "macs": self.macs,
            "macs_unpruned": self.macs_unpruned, "reference": self.reference, **self.flags,
            "allocation": [{"bank": s.bank, "filter": s.filter, "row_start": s.row_start,
                            "rows": s.rows} for s in self.segments],
        }


@dataclass
class MappingPlan:
    layers: list
    cfg: MacroConfig
    ratio: float = 0.0

    def layer(self, name: str) -> LayerPlan:
        for l in self.layers:
            if l.name == name:
                return l
        raise KeyError(name)

    @property
    def totals(self) -> dict:
        macs = sum(l.macs for l in self.layers)
        unpruned = sum(l.macs_unpruned for l in self.layers)
        return {
            "banks_used": sum(l.banks_used for l in self.layers),
            "passes": sum(l.passes for l in self.layers),
            "op_cycles": sum(l.op_cycles for l in self.layers),
            "retained_weights": sum(l.retained for l in self.layers),
            "total_weights": sum(l.total_weights for l in self.layers),
            "macs": macs,
            "macs_unpruned": unpruned,
            "mac_reduction": 1 - macs / unpruned if unpruned else 0.0,
        }

    def as_dict(self) -> dict:
        return {
            "config": {"label": self.cfg.label, "banks": self.cfg.banks,
                       "rows_per_bank": self.cfg.rows_per_bank,
                       "activation_bits": self.cfg.activation_bits,
                       "weight_bits": self.cfg.weight_bits},
            "prune_ratio": self.ratio,
            "cycle_formula": "op_cycles = activation_bits * output_positions * ceil(banks_used / banks)",
            "layers": [l.as_dict() for l in self.layers],
            "totals": self.totals,
        }

    def table_rows(self) -> list:
        rows = []
        for l in self.layers:
            ref = l.reference or {}
            weighted = l.kind in (LayerKind.CONV, LayerKind.FC)
            rows.append({
                "Layer": l.name, "Kernel": l.kernel, "Output": l.output,
                "Banks Used": l.banks_used if weighted else "NA",
                "Op Cycles": l.op_cycles if weighted else "-",
                "Reference Banks": ref.get("banks_used", ""),
                "Reference Cycles": ref.get("op_cycles", ""),
                "Banks Match": l.flags.get("banks_used_matches_reference", ""),
                "Cycles Match": l.flags.get("op_cycles_matches_reference", ""),
            })
        return rows


def allocate(layer: LayerSpec, mask, cfg: MacroConfig) -> LayerPlan:
    """Assign every retained weight of a layer to one (bank, row).

    CONV filters start on a fresh bank and occupy ``ceil(retained / rows)``
    banks. FC neurons are packed back to back: a neuron continues in the next
    bank when the current one fills. Bank counts are multiplied by the number
    of 4-bit slices per weight.
    """
    plan = LayerPlan(layer.name, layer.kind, layer.kernel_label(), layer.output_label(),
                     reference=layer.reference)
    if not layer.has_weights:
        return plan
    mask = np.asarray(mask, dtype=bool).reshape(layer.filters, layer.fan_in)
    rows = cfg.rows_per_bank
    bank = 0
    if layer.kind is LayerKind.CONV:
        for f in range(layer.filters):
            idx = np.flatnonzero(mask[f])
            if idx.size == 0:
                plan.dead_filters.append(f)
                plan.filter_banks.append(0)
                continue
            n = math.ceil(idx.size / rows)
            for k in range(n):
                plan.segments.append(Segment(bank, f, 0, idx[k * rows:(k + 1) * rows]))
                bank += 1
            plan.filter_banks.append(n)
        logical = bank
    else:
        row = 0
        for f in range(layer.filters):
            idx = np.flatnonzero(mask[f])
            if idx.size == 0:
                plan.dead_filters.append(f)
                plan.filter_banks.append(0)
                continue
            first, pos = bank, 0
            while pos < idx.size:
                if row == rows:
                    bank, row = bank + 1, 0
                take = min(rows - row, idx.size - pos)
                plan.segments.append(Segment(bank, f, row, idx[pos:pos + take]))
                row += take
                pos += take
            plan.filter_banks.append(bank - first + 1)
        logical = bank + 1 if row else bank
    plan.retained = int(mask.sum())
    plan.total_weights = mask.size
    plan.banks_per_filter = max(plan.filter_banks, default=0) * cfg.weight_slices
    plan.banks_used = logical * cfg.weight_slices
    plan.output_positions = layer.output_positions
    plan.macs = plan.retained * layer.output_positions
    plan.macs_unpruned = plan.total_weights * layer.output_positions
    return plan


def schedule(plan: MappingPlan, cfg: MacroConfig, activation_counts: dict | None = None) -> MappingPlan:
    """Fill ``op_cycles = activation_bits * output_positions * passes``."""
    for lp in plan.layers:
        if lp.kind not in (LayerKind.CONV, LayerKind.FC):
            continue
        if activation_counts and lp.name in activation_counts:
            lp.output_positions = int(activation_counts[lp.name])
        lp.passes = math.ceil(lp.banks_used / cfg.banks)
        lp.op_cycles = cfg.activation_bits * lp.output_positions * lp.passes
    return plan


def map_network(network: Network | list, weights: dict, ratio: float,
                cfg: MacroConfig = MacroConfig(activation_bits=1)) -> MappingPlan:
    """Prune, allocate and schedule every layer."""
    layers = network.layers if isinstance(network, Network) else list(network)
    weighted = {l.name: np.asarray(weights[l.name]) for l in layers if l.has_weights}
    for l in layers:
        if l.has_weights and weighted[l.name].shape != (l.filters, l.fan_in):
            raise NetworkError(f"{l.name}: weights shape {weighted[l.name].shape} "
                               f"!= {(l.filters, l.fan_in)}")
    mask = prune(weighted, ratio)
    plan = MappingPlan([allocate(l, mask.masks.get(l.name), cfg) for l in layers], cfg, ratio)
    return schedule(plan, cfg)
