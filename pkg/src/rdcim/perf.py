"""Analytical latency, throughput, power and efficiency estimates.

Formula first: every report carries the formulas and constants it used. One
MAC counts as two operations.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .mapper import LayerKind, MappingPlan

DATA_DIR = Path(__file__).parent / "data"
PERIPHERALS = ("accumulator", "activation", "pooling", "batchnorm", "control")

FORMULAS = {
    "effective_cycles": "total_cycles * (1 - sparsity_factor * sparsity_credit)",
    "latency_s": "effective_cycles * cycle_latency_ns * 1e-9",
    "throughput_TOPS": "2 * macs / latency_s / 1e12",
    "energy_J": "sum_layers((active_banks * adder_tree_power + peripheral_power) * layer_latency)"
                " + macs * energy_per_mac",
    "power_W": "energy_J / latency_s",
    "efficiency_TOPS_per_W": "throughput_TOPS / power_W",
}


@dataclass
class CostConstants:
    cycle_latency_ns: float = 0.48
    adder_tree_power_uW: float = 640.0        # per active bank
    peripheral_power_uW: float = 1000.0
    peripheral_shares: dict = field(default_factory=lambda: {k: 0.2 for k in PERIPHERALS})
    energy_per_mac_fJ: float = 1.0707254528910577
    sparsity_rule: str = "linear"              # "linear" or "scaled"
    sparsity_factor: float = 1.0

    def __post_init__(self):
        for name in ("cycle_latency_ns", "adder_tree_power_uW"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.peripheral_power_uW < 0 or self.energy_per_mac_fJ < 0:
            raise ValueError("power and energy constants must be non-negative")
        unknown = set(self.peripheral_shares) - set(PERIPHERALS)
        if unknown:
            raise ValueError(f"unknown peripheral component(s): {sorted(unknown)}")
        if any(v < 0 for v in self.peripheral_shares.values()):
            raise ValueError("peripheral shares must be non-negative")
        if sum(self.peripheral_shares.values()) > 1 + 1e-12:
            raise ValueError("peripheral shares sum above 1")
        if self.sparsity_rule not in ("linear", "scaled"):
            raise ValueError(f"unknown sparsity rule {self.sparsity_rule!r}")
        if self.sparsity_rule == "linear":
            self.sparsity_factor = 1.0

    @classmethod
    def from_dict(cls, d: dict) -> "CostConstants":
        return cls(**{k: v for k, v in d.items() if k in cls.__dataclass_fields__})


@dataclass
class CostReport:
    total_cycles: int
    effective_cycles: float
    latency_s: float
    macs: int
    throughput_TOPS: float
    power_W: float
    efficiency_TOPS_per_W: float
    sparsity_credit: float
    peripheral_power_W: float
    per_layer: list = field(default_factory=list)
    constants: dict = field(default_factory=dict)
    formulas: dict = field(default_factory=lambda: dict(FORMULAS))
    reference: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return asdict(self)

    def table(self) -> str:
        lines = [f"{'metric':<24}{'value':>16}"]
        for key in ("total_cycles", "effective_cycles", "latency_s", "macs", "throughput_TOPS",
                    "power_W", "efficiency_TOPS_per_W", "sparsity_credit"):
            v = getattr(self, key)
            lines.append(f"{key:<24}{v:>16.6g}" if isinstance(v, float) else f"{key:<24}{v:>16}")
        lines.append("assumptions: " + ", ".join(f"{k}={v}" for k, v in self.constants.items()
                                                 if k != "peripheral_shares"))
        return "\n".join(lines)


@dataclass(frozen=True)
class Workload:
    """One block of cycles with a fixed number of active banks."""

    name: str
    cycles: int
    macs: int
    active_banks: int


def _estimate(workloads: list, constants: CostConstants, sparsity_credit: float) -> CostReport:
    if not 0 <= sparsity_credit < 1:
        raise ValueError("sparsity_credit must lie in [0, 1)")
    factor = 1 - constants.sparsity_factor * sparsity_credit
    if factor <= 0:
        raise ValueError("sparsity crediting removes every cycle")
    t_cyc = constants.cycle_latency_ns * 1e-9
    total_cycles = sum(w.cycles for w in workloads)
    macs = sum(w.macs for w in workloads)
    effective = total_cycles * factor
    latency = effective * t_cyc
    per_layer, energy = [], macs * constants.energy_per_mac_fJ * 1e-15
    for w in workloads:
        lat = w.cycles * factor * t_cyc
        p = (w.active_banks * constants.adder_tree_power_uW + constants.peripheral_power_uW) * 1e-6
        energy += p * lat
        per_layer.append({"layer": w.name, "cycles": w.cycles, "macs": w.macs,
                          "active_banks": w.active_banks, "latency_s": lat})
    if latency == 0:
        raise ValueError("workload has no cycles")
    power = energy / latency
    throughput = 2 * macs / latency / 1e12
    return CostReport(total_cycles, effective, latency, macs, throughput, power,
                      throughput / power if power else float("inf"), sparsity_credit,
                      constants.peripheral_power_uW * 1e-6, per_layer, asdict(constants))


def estimate(plan: MappingPlan, constants: CostConstants = CostConstants(), skip_stats=None,
             sparsity_credit: float | None = None) -> CostReport:
    """Cost of a scheduled plan.

    ``sparsity_credit`` defaults to the skipped-cycle fraction of
    ``skip_stats`` (anything with ``skipped_fraction``), else 0.
    """
    if sparsity_credit is None:
        sparsity_credit = skip_stats.skipped_fraction if skip_stats is not None else 0.0
    workloads = [Workload(l.name, l.op_cycles, l.macs, min(l.banks_used, plan.cfg.banks))
                 for l in plan.layers if l.kind in (LayerKind.CONV, LayerKind.FC)]
    return _estimate(workloads, constants, sparsity_credit)


def estimate_workload(cycles: int, macs: int, active_banks: int,
                      constants: CostConstants = CostConstants(), sparsity_credit: float = 0.0) -> CostReport:
    return _estimate([Workload("workload", cycles, macs, active_banks)], constants, sparsity_credit)


def load_preset(path=None) -> tuple[CostConstants, dict, dict]:
    """Returns (constants, workload, reference) from a preset JSON."""
    path = Path(path) if path is not None else DATA_DIR / "perf_preset.json"
    with open(path) as fh:
        raw = json.load(fh)
    return CostConstants.from_dict(raw["constants"]), raw["workload"], raw.get("reference", {})


def preset_report(sparsity_credit: float = 0.0, path=None, constants: CostConstants | None = None) -> CostReport:
    base, workload, reference = load_preset(path)
    report = estimate_workload(workload["cycles"], workload["macs"], workload["active_banks"],
                               constants or base, sparsity_credit)
    report.reference = reference
    return report


def peripheral_breakdown(report: CostReport, constants: CostConstants) -> dict:
    """Split peripheral power by configured shares, in microwatts.

    Values are rounded to nanowatts with largest-remainder rounding so they
    add up exactly to the rounded peripheral power; any unassigned share is
    reported as ``unattributed``.
    """
    shares = dict(constants.peripheral_shares)
    total = sum(shares.values())
    if total > 1 + 1e-12:
        raise ValueError("peripheral shares sum above 1")
    if total < 1 - 1e-12:
        shares["unattributed"] = 1 - total
    total_nw = round(report.peripheral_power_W * 1e9)
    raw = {k: v * total_nw for k, v in shares.items()}
    floors = {k: int(v) for k, v in raw.items()}
    left = total_nw - sum(floors.values())
    for k in sorted(raw, key=lambda k: raw[k] - floors[k], reverse=True)[:left]:
        floors[k] += 1
    return {k: v / 1e3 for k, v in floors.items()}
