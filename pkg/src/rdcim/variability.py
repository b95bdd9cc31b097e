"""Monte Carlo read and MAC correctness under resistance variability.

CMOS corners are abstracted as a relative shift of the sense threshold;
temperature and supply are carried as metadata. Trials are drawn in fixed
blocks, each from a generator seeded by ``(seed, corner, block)``, so results
do not depend on how blocks are scheduled.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .adders import TreeInstance
from .cell import DEFAULT_DEVICE, CellState, DeviceParams, SenseConfig, sense_bits
from .macro import Bank, MacroConfig, bit_serial_dot, default_tree, program_bank

BLOCK = 8192
CORNERS = ("TT", "SS", "FF", "SF", "FS")


@dataclass(frozen=True)
class CornerConfig:
    corner: str = "TT"
    temperature_C: float = 27.0
    supply_V: float = 1.2
    sense_threshold_shift: float = 0.0

    def __post_init__(self):
        if self.corner not in CORNERS:
            raise ValueError(f"unknown corner {self.corner!r}")
        if not -40 <= self.temperature_C <= 125:
            raise ValueError("temperature outside -40..125 C")
        if not -0.5 < self.sense_threshold_shift < 0.5:
            raise ValueError("sense_threshold_shift must lie in (-0.5, 0.5)")


DEFAULT_CORNERS = (
    CornerConfig("TT", 27.0, 1.2, 0.0),
    CornerConfig("SS", 125.0, 1.08, 0.10),
    CornerConfig("FF", -40.0, 1.32, -0.10),
    CornerConfig("SF", 125.0, 1.2, 0.05),
    CornerConfig("FS", -40.0, 1.2, -0.05),
)


def corners_from_json(items) -> list:
    return [CornerConfig(**d) for d in items]


@dataclass
class McReport:
    trials: int
    read_failures: int
    min_margin: float          # natural-log margin, ln(R_hrs / R_ref) or ln(R_ref / R_lrs)
    per_corner: list = field(default_factory=list)
    margins: np.ndarray | None = field(default=None, repr=False)
    mac_mismatches: int | None = None
    predicted_mismatches: int | None = None
    cell_read_failures: int | None = None

    def as_dict(self) -> dict:
        d = asdict(self)
        d.pop("margins")
        return d

    def margin_histogram(self, bins: int = 40) -> list:
        counts, edges = np.histogram(self.margins, bins=bins)
        return [(float(edges[i]), float(edges[i + 1]), int(c)) for i, c in enumerate(counts)]


def _reference(params: DeviceParams) -> float:
    return math.sqrt(params.r_lrs_nominal * params.r_hrs_nominal)


def _blocks(trials: int):
    for b, start in enumerate(range(0, trials, BLOCK)):
        yield b, min(BLOCK, trials - start)


def monte_carlo_read(trials: int, params: DeviceParams = DEFAULT_DEVICE, corners=DEFAULT_CORNERS,
                     seed: int = 0, r_reference: float | None = None) -> McReport:
    """Sample an LRS and an HRS resistance per trial and read both at every corner.

    A trial fails when either read returns the wrong bit. The margin of a
    trial is the smaller log-distance of the two resistances from the shifted
    threshold (negative when a read fails).
    """
    if trials <= 0:
        raise ValueError("trials must be positive")
    r_ref = r_reference or _reference(params)
    failures, margins, per_corner = 0, [], []
    for ci, corner in enumerate(corners):
        thr = r_ref * (1 + corner.sense_threshold_shift)
        c_fail, c_margin, lrs_fail, hrs_fail = 0, math.inf, 0, 0
        for b, n in _blocks(trials):
            rng = np.random.default_rng([seed, ci, b])
            r = params.sample(np.tile([CellState.LRS, CellState.HRS], (n, 1)), rng)
            bits = sense_bits(r, thr)
            bad_l, bad_h = bits[:, 0] != 1, bits[:, 1] != 0
            lrs_fail += int(bad_l.sum())
            hrs_fail += int(bad_h.sum())
            c_fail += int((bad_l | bad_h).sum())
            m = np.minimum(np.log(thr / r[:, 0]), np.log(r[:, 1] / thr))
            c_margin = min(c_margin, float(m.min()))
            margins.append(m)
        failures += c_fail
        per_corner.append({**asdict(corner), "threshold_ohm": thr, "read_failures": c_fail,
                           "lrs_failures": lrs_fail, "hrs_failures": hrs_fail, "min_margin": c_margin})
    all_m = np.concatenate(margins)
    return McReport(trials * len(corners), failures, float(all_m.min()), per_corner, all_m)


def fixture_bank(seed: int = 0, cfg: MacroConfig = MacroConfig(activation_bits=4)):
    """A signed 4-bit bank with random weights plus a random activation vector."""
    rng = np.random.default_rng(seed)
    weights = rng.integers(-8, 8, size=cfg.rows_per_bank)
    acts = rng.integers(0, 1 << cfg.activation_bits, size=cfg.rows_per_bank)
    return weights, acts


def monte_carlo_mac(trials: int, weights, activations, n_bits: int = 4,
                    params: DeviceParams = DEFAULT_DEVICE, seed: int = 0,
                    tree: TreeInstance | None = None, corners=(DEFAULT_CORNERS[0],),
                    signed: bool = True) -> McReport:
    """Resample every cell per trial, run the bit-serial dot, compare to integers.

    A compositional prediction is kept alongside: the integer dot product of
    the activations with the weights as actually sensed. The macro must equal
    it on every trial; it differs from the ideal result exactly when misreads
    change the sum.
    """
    weights = np.asarray(weights, dtype=np.int64)
    acts = np.asarray(activations, dtype=np.int64)
    tree = tree or default_tree()
    ideal = int(weights @ acts)
    colw = 1 << np.arange(4)
    if signed:
        colw[-1] = -colw[-1]
    failures = mismatches = predicted = cell_failures = 0
    margins, per_corner = [], []
    for ci, corner in enumerate(corners):
        thr = _reference(params) * (1 + corner.sense_threshold_shift)
        # Unchecked reference: overlapping bands are reported, not rejected.
        bank = Bank(len(weights), 4, params, SenseConfig(thr))
        program_bank(bank, weights, rng=np.random.default_rng([seed, ci, 1 << 30]), signed=signed)
        lrs = bank.states == 1
        c_mis = c_pred = c_cells = 0
        for b, n in _blocks(trials):
            rng = np.random.default_rng([seed, ci, b])
            draws = params.sample(np.broadcast_to(bank.states, (n,) + bank.states.shape), rng)
            for r in draws:
                bank.set_resistances(r)
                got = bit_serial_dot(bank, acts, n_bits, tree, signed)
                sensed = sense_bits(r, thr).astype(np.int64)
                expect = int((sensed @ colw) @ acts)
                if got != expect:
                    raise AssertionError("macro result disagrees with sensed-weight dot product")
                bad = int(np.count_nonzero(sensed != bank.states))
                c_cells += bad
                failures += bad > 0
                c_mis += got != ideal
                c_pred += expect != ideal
                margins.append(min(np.log(thr / r[lrs]).min(initial=math.inf),
                                   np.log(r[~lrs] / thr).min(initial=math.inf)))
        mismatches += c_mis
        predicted += c_pred
        cell_failures += c_cells
        per_corner.append({**asdict(corner), "threshold_ohm": thr, "mac_mismatches": c_mis,
                           "cell_read_failures": c_cells})
    m = np.asarray(margins)
    return McReport(trials * len(corners), failures, float(m.min()), per_corner, m,
                    mismatches, predicted, cell_failures)
