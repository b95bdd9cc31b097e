"""The 16 Kb macro: banks of AND bitcells feeding per-column adder trees.

Each bank stores up to ``rows_per_bank`` 4-bit weight words, bit-sliced over
four columns (column 0 = LSB). A compute cycle applies one activation bit
plane to every row, sums each column's AND products through the adder tree
and weights the column sums by ``2**c`` (the MSB column weighs ``-8`` for
two's-complement weights). Multi-bit activations are processed MSB first with
shift-accumulate; wider weights are split over several banks and recombined.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .adders import TreeInstance, TreeSpec, build_tree
from .cell import (DEFAULT_DEVICE, CellState, DeviceParams, ReramCell, SenseConfig,
                   sense_bits)


class CimDisabledError(RuntimeError):
    """Compute requested on a bank whose CIM_EN is low (write mode)."""


class BankMode(Enum):
    WRITE = "write"
    COMPUTE = "compute"


@dataclass(frozen=True)
class MacroConfig:
    banks: int = 64
    rows_per_bank: int = 64
    cols_per_bank: int = 4
    accumulator_bits: int = 10
    activation_bits: int = 4
    weight_bits: int = 4
    signed_weights: bool = True

    def __post_init__(self):
        if not 1 <= self.activation_bits <= 8:
            raise ValueError("activation_bits must be in 1..8")
        if self.weight_bits < 4 or self.weight_bits % self.cols_per_bank:
            raise ValueError(f"weight_bits must be a positive multiple of {self.cols_per_bank}")
        for name in ("banks", "rows_per_bank", "cols_per_bank", "accumulator_bits"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")

    @property
    def capacity_bits(self) -> int:
        return self.banks * self.rows_per_bank * self.cols_per_bank

    @property
    def weight_slices(self) -> int:
        return self.weight_bits // self.cols_per_bank

    @property
    def label(self) -> str:
        return f"{self.activation_bits}A{self.weight_bits}W"

    @classmethod
    def from_dict(cls, d: dict) -> "MacroConfig":
        return cls(**{k: v for k, v in d.items() if k in cls.__dataclass_fields__})


def column_weights(cols: int, signed: bool) -> np.ndarray:
    w = 1 << np.arange(cols, dtype=np.int64)
    if signed:
        w[-1] = -w[-1]
    return w


def word_range(bits: int, signed: bool) -> tuple[int, int]:
    return (-(1 << (bits - 1)), (1 << (bits - 1)) - 1) if signed else (0, (1 << bits) - 1)


class Bank:
    """A rows x cols array of ReRAM cells with its CIM_EN mode.

    Cell states and sampled resistances are kept as arrays; ``cell(r, c)``
    returns the per-cell view.
    """

    def __init__(self, rows: int = 64, cols: int = 4, params: DeviceParams = DEFAULT_DEVICE,
                 sense: SenseConfig | None = None):
        self.rows, self.cols = rows, cols
        self.params = params
        self.sense = sense if sense is not None else SenseConfig.for_device(params)
        self.states = np.zeros((rows, cols), dtype=np.int8)
        self.resistances = np.full((rows, cols), params.r_hrs_nominal, dtype=float)
        self.mode = BankMode.COMPUTE
        self.signed = False
        self.cycles = 0
        self._bits = None

    def cell(self, row: int, col: int) -> ReramCell:
        return ReramCell(CellState(int(self.states[row, col])), float(self.resistances[row, col]))

    def enter_write(self):
        self.mode = BankMode.WRITE

    def enter_compute(self):
        self.mode = BankMode.COMPUTE

    def set_resistances(self, resistances: np.ndarray):
        self.resistances = np.asarray(resistances, dtype=float).reshape(self.rows, self.cols)
        self._bits = None

    def resample(self, rng: np.random.Generator, params: DeviceParams | None = None):
        """Redraw every cell's resistance for its current state."""
        self.set_resistances((params or self.params).sample(self.states, rng))

    def read_bits(self) -> np.ndarray:
        """Digital read of every cell through the sense threshold."""
        if self._bits is None:
            self._bits = sense_bits(self.resistances, self.sense.r_reference)
        return self._bits

    def stored_words(self) -> np.ndarray:
        """Weights as sensed, decoded with the bank's signedness."""
        return self.read_bits().astype(np.int64) @ column_weights(self.cols, self.signed)


def program_bank(bank: Bank, weights, params: DeviceParams | None = None,
                 rng: np.random.Generator | None = None, signed: bool = True) -> Bank:
    """Write 4-bit words into rows 0..len(weights)-1; other rows are cleared to 0."""
    params = params or bank.params
    w = np.asarray(weights, dtype=np.int64).ravel()
    if len(w) > bank.rows:
        raise ValueError(f"{len(w)} weights exceed {bank.rows} rows")
    lo, hi = word_range(bank.cols, signed)
    if np.any(w < lo) or np.any(w > hi):
        bad = w[(w < lo) | (w > hi)][0]
        raise ValueError(f"weight {bad} not representable in {bank.cols} "
                         f"{'signed' if signed else 'unsigned'} bits")
    if rng is None:
        rng = np.random.default_rng()
    bank.enter_write()
    states = np.zeros((bank.rows, bank.cols), dtype=np.int8)
    states[: len(w)] = (w[:, None] >> np.arange(bank.cols)) & 1
    bank.states = states
    bank.params = params
    bank.set_resistances(params.sample(states, rng))
    bank.signed = signed
    bank.enter_compute()
    return bank


@dataclass(frozen=True)
class CyclePartialSum:
    """Per-cycle register contents; construction enforces the register width."""

    value: object  # int or int64 array
    width: int = 10
    signed: bool = True

    def __post_init__(self):
        lo, hi = word_range(self.width, self.signed)
        v = np.asarray(self.value)
        if v.size and (v.min() < lo or v.max() > hi):
            raise OverflowError(
                f"partial sum range [{v.min()}, {v.max()}] exceeds {self.width}-bit register")


class ShiftAccumulator:
    """MSB-first shift-add accumulator with an overflow guard."""

    def __init__(self, width: int, shape=()):
        self.width = width
        self.value = np.zeros(shape, dtype=np.int64) if shape else 0

    def shift_add(self, x):
        self.value = self.value * 2 + x
        bound = 1 << (self.width - 1)
        v = np.asarray(self.value)
        if v.size and (v.min() < -bound or v.max() >= bound):
            raise OverflowError(f"shift accumulator exceeded {self.width} bits")
        return self.value


def bank_mac_cycle(bank: Bank, activation_bits_in, tree: TreeInstance,
                   signed: bool | None = None, register_bits: int = 10) -> CyclePartialSum:
    """One compute cycle: AND every row with its input bit, reduce columns, weight.

    ``activation_bits_in`` is a ``(rows,)`` bit vector or a ``(batch, rows)``
    stack evaluated in lockstep.
    """
    if bank.mode is not BankMode.COMPUTE:
        raise CimDisabledError("bank is in write mode; CIM_EN is disabled")
    a = np.asarray(activation_bits_in, dtype=np.int8)
    if a.shape[-1] != bank.rows:
        raise ValueError(f"expected {bank.rows} activation bits, got {a.shape[-1]}")
    if np.any((a != 0) & (a != 1)):
        raise ValueError("activation inputs must be bits")
    signed = bank.signed if signed is None else signed
    products = a[..., :, None] & bank.read_bits()          # (..., rows, cols)
    col_sums = np.asarray(tree.tree_sum(np.swapaxes(products, -1, -2)))  # (..., cols)
    value = col_sums.astype(np.int64) @ column_weights(bank.cols, signed)
    bank.cycles += 1
    if np.ndim(value) == 0:
        value = int(value)
    return CyclePartialSum(value, register_bits, signed)


@dataclass
class SkipCounter:
    cycles: int = 0
    skipped: int = 0


def bit_serial_dot(bank: Bank, activations, n_bits: int, tree: TreeInstance,
                   signed: bool | None = None, skip_zero: bool = False,
                   counter: SkipCounter | None = None, register_bits: int = 10):
    """Dot product of unsigned ``n_bits`` activations with the bank's weights.

    Issues one ``bank_mac_cycle`` per bit plane, MSB first. With ``skip_zero``
    a plane that is all zero for every vector is not issued; the accumulator
    still shifts, so results are unchanged. ``counter`` receives per-vector
    cycle and skip counts.
    """
    if not 1 <= n_bits <= 8:
        raise ValueError("n_bits must be in 1..8")
    x = np.asarray(activations, dtype=np.int64)
    if x.shape[-1] != bank.rows:
        if x.shape[-1] > bank.rows:
            raise ValueError(f"{x.shape[-1]} activations exceed {bank.rows} rows")
        pad = np.zeros(x.shape[:-1] + (bank.rows - x.shape[-1],), dtype=np.int64)
        x = np.concatenate([x, pad], axis=-1)
    if np.any(x < 0) or np.any(x >= 1 << n_bits):
        raise ValueError(f"activation outside [0, 2^{n_bits})")
    acc = ShiftAccumulator(register_bits + n_bits - 1 + 8, x.shape[:-1])
    for k in range(n_bits - 1, -1, -1):
        plane = ((x >> k) & 1).astype(np.int8)
        nonzero = plane.any(axis=-1)
        if counter is not None:
            counter.cycles += int(np.size(nonzero))
            counter.skipped += int(np.size(nonzero) - np.count_nonzero(nonzero))
        if skip_zero and not nonzero.any():
            acc.shift_add(0)
            continue
        acc.shift_add(bank_mac_cycle(bank, plane, tree, signed, register_bits).value)
    v = acc.value
    return int(v) if np.ndim(v) == 0 else v


def combine_banks(partials, weight_slice_offsets):
    """Recombine per-slice dot products: sum of ``partial << offset``."""
    offsets = list(weight_slice_offsets)
    if len(offsets) != len(partials):
        raise ValueError("one offset per partial is required")
    if any(o % 4 for o in offsets) or any(b <= a for a, b in zip(offsets, offsets[1:])):
        raise ValueError("offsets must be multiples of 4 and strictly increasing")
    total = 0
    for p, o in zip(partials, offsets):
        total = total + np.asarray(p, dtype=np.int64) * (1 << o)
    return int(total) if np.ndim(total) == 0 else total


def slice_weights(weights, weight_bits: int, signed: bool, slice_bits: int = 4) -> list:
    """Split words into ``slice_bits`` slices, LSB slice first.

    Lower slices are unsigned; the MSB slice carries the sign.
    """
    w = np.asarray(weights, dtype=np.int64)
    lo, hi = word_range(weight_bits, signed)
    if np.any(w < lo) or np.any(w > hi):
        raise ValueError(f"weight outside {weight_bits}-bit range")
    n = weight_bits // slice_bits
    mask = (1 << slice_bits) - 1
    out = [(w >> (slice_bits * i)) & mask for i in range(n - 1)]
    top = w >> (slice_bits * (n - 1))
    out.append(top if signed else top & mask)
    return out


class WideBankGroup:
    """``weight_bits / 4`` banks holding the slices of one set of wide words."""

    def __init__(self, cfg: MacroConfig, tree: TreeInstance, params: DeviceParams = DEFAULT_DEVICE,
                 sense: SenseConfig | None = None):
        self.cfg, self.tree = cfg, tree
        self.banks = [Bank(cfg.rows_per_bank, cfg.cols_per_bank, params, sense)
                      for _ in range(cfg.weight_slices)]
        self.offsets = [cfg.cols_per_bank * i for i in range(cfg.weight_slices)]

    def program(self, weights, rng: np.random.Generator | None = None):
        rng = rng if rng is not None else np.random.default_rng()
        slices = slice_weights(weights, self.cfg.weight_bits, self.cfg.signed_weights,
                               self.cfg.cols_per_bank)
        last = len(slices) - 1
        for i, (bank, s) in enumerate(zip(self.banks, slices)):
            program_bank(bank, s, rng=rng, signed=self.cfg.signed_weights and i == last)
        return self

    def dot(self, activations, n_bits: int | None = None, skip_zero: bool = False,
            counter: SkipCounter | None = None):
        n_bits = n_bits or self.cfg.activation_bits
        partials = [bit_serial_dot(b, activations, n_bits, self.tree, skip_zero=skip_zero,
                                   counter=counter, register_bits=self.cfg.accumulator_bits)
                    for b in self.banks]
        return combine_banks(partials, self.offsets)


@dataclass(frozen=True)
class SparsityStats:
    zero_fraction: float      # fraction of zero activation values
    skipped_cycles: int
    total_cycles: int

    @property
    def skipped_fraction(self) -> float:
        return self.skipped_cycles / self.total_cycles if self.total_cycles else 0.0


def sparsity_stats(activations_stream, n_bits: int) -> SparsityStats:
    """Count bit-plane cycles that zero-skip would elide.

    Each element of the stream is one bank's activation vector; a cycle is
    skipped when its whole bit plane is zero.
    """
    zeros = values = skipped = total = 0
    for vec in activations_stream:
        x = np.asarray(vec, dtype=np.int64)
        x = x.reshape(-1, x.shape[-1])
        zeros += int(np.count_nonzero(x == 0))
        values += x.size
        planes = (x[:, None, :] >> np.arange(n_bits)[None, :, None]) & 1
        empty = ~planes.any(axis=-1)
        skipped += int(empty.sum())
        total += empty.size
    return SparsityStats(zeros / values if values else 0.0, skipped, total)


def default_tree(cfg: MacroConfig = MacroConfig(), pattern=("EXACT_28T", "EXACT_10T")) -> TreeInstance:
    """The per-column tree: ``rows_per_bank`` one-bit operands."""
    return build_tree(TreeSpec(cfg.rows_per_bank, 1, tuple(pattern)))
