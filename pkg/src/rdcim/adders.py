"""Full-adder cells, interleaved adder trees, error characterization and cost.

Cells are truth tables indexed by ``a << 2 | b << 1 | cin``. A tree is a
balanced binary reduction of ripple-carry adders (RCAs); level ``l`` (from 0)
adds pairs of ``width + l`` bit values with one full-adder (FA) cell per bit,
the final carry becoming the new MSB. FA positions are numbered level-major,
then adder, then bit (LSB first), and the interleave pattern is tiled over
that order.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

_EXACT_TABLE = tuple(
    ((a ^ b ^ c), (a & b) | (a & c) | (b & c))
    for a in (0, 1) for b in (0, 1) for c in (0, 1)
)

EXHAUSTIVE_BIT_LIMIT = 20


@dataclass(frozen=True)
class AdderCellKind:
    """A behavioral full adder.

    ``degrading`` marks pass-transistor cells whose output swing is reduced;
    the tree builder keeps them from driving each other along a carry chain.
    """

    name: str
    truth_table: tuple
    transistor_count: int
    degrading: bool = False

    def __post_init__(self):
        table = tuple(tuple(int(v) for v in row) for row in self.truth_table)
        if len(table) != 8 or any(len(r) != 2 or not set(r) <= {0, 1} for r in table):
            raise ValueError(f"{self.name}: truth table must map all 8 inputs to (sum, cout) bits")
        object.__setattr__(self, "truth_table", table)

    @property
    def is_exact(self) -> bool:
        return self.truth_table == _EXACT_TABLE

    @property
    def sum_lut(self) -> np.ndarray:
        return np.array([r[0] for r in self.truth_table], dtype=np.int8)

    @property
    def cout_lut(self) -> np.ndarray:
        return np.array([r[1] for r in self.truth_table], dtype=np.int8)


EXACT_28T = AdderCellKind("EXACT_28T", _EXACT_TABLE, 28)
EXACT_10T = AdderCellKind("EXACT_10T", _EXACT_TABLE, 10, degrading=True)
# Lower-part OR adder cell: sum = a | b, no carry generated or consumed.
LOA_OR = AdderCellKind(
    "LOA_OR",
    tuple(((a | b), 0) for a in (0, 1) for b in (0, 1) for _c in (0, 1)),
    6,
)

BUILTIN_KINDS = {k.name: k for k in (EXACT_28T, EXACT_10T, LOA_OR)}


def fa_eval(kind: AdderCellKind, a: int, b: int, cin: int) -> tuple[int, int]:
    return kind.truth_table[(a << 2) | (b << 1) | cin]


@dataclass(frozen=True)
class TreeSpec:
    operand_count: int = 64
    operand_width: int = 1
    interleave_pattern: tuple = ("EXACT_28T", "EXACT_10T")
    max_consecutive_degrading: int = 1
    # The lowest ``approx_low_bits`` positions of every RCA use ``approx_kind``.
    approx_low_bits: int = 0
    approx_kind: str = "LOA_OR"

    def __post_init__(self):
        object.__setattr__(self, "interleave_pattern", tuple(self.interleave_pattern))
        if not self.interleave_pattern:
            raise ValueError("interleave_pattern is empty")
        if self.operand_width < 1:
            raise ValueError("operand_width must be >= 1")
        if self.max_consecutive_degrading < 0:
            raise ValueError("max_consecutive_degrading must be >= 0")

    @property
    def result_width(self) -> int:
        return self.operand_width + int(math.log2(self.operand_count))


@dataclass(frozen=True)
class Level:
    adders: int
    width: int
    offset: int  # first FA position of this level


class TreeInstance:
    """An immutable, placed adder tree."""

    def __init__(self, spec: TreeSpec, cells: tuple, levels: tuple):
        self.spec = spec
        self.cells = cells
        self.levels = levels
        self.is_exact = all(c.is_exact for c in cells)
        self._luts = []
        for lv in levels:
            kinds = [cells[lv.offset + i] for i in range(lv.adders * lv.width)]
            s = np.array([k.sum_lut for k in kinds]).reshape(lv.adders, lv.width, 8)
            c = np.array([k.cout_lut for k in kinds]).reshape(lv.adders, lv.width, 8)
            self._luts.append((s, c))

    def __len__(self):
        return len(self.cells)

    def __repr__(self):
        return (f"TreeInstance(operands={self.spec.operand_count}, "
                f"width={self.spec.operand_width}, cells={len(self.cells)}, exact={self.is_exact})")

    def chains(self):
        """Yield the FA position list of every RCA carry chain, LSB first."""
        for lv in self.levels:
            for j in range(lv.adders):
                start = lv.offset + j * lv.width
                yield list(range(start, start + lv.width))

    def kind_counts(self) -> dict:
        counts: dict = {}
        for c in self.cells:
            counts[c.name] = counts.get(c.name, 0) + 1
        return counts

    def _check_operands(self, operands) -> np.ndarray:
        x = np.asarray(operands, dtype=np.int64)
        if x.ndim == 0:
            raise ValueError("operands must be a sequence")
        n = self.spec.operand_count
        if x.shape[-1] > n:
            raise ValueError(f"{x.shape[-1]} operands exceed tree size {n}")
        if np.any(x < 0) or np.any(x >= 1 << self.spec.operand_width):
            raise ValueError(f"operand outside [0, 2^{self.spec.operand_width})")
        if x.shape[-1] < n:
            pad = np.zeros(x.shape[:-1] + (n - x.shape[-1],), dtype=np.int64)
            x = np.concatenate([x, pad], axis=-1)
        return x

    def emulate(self, operands) -> np.ndarray:
        """Bit-level evaluation through every cell's truth table.

        ``operands`` has shape ``(..., k)`` with ``k <= operand_count``; short
        rows are zero padded. Returns an int64 array of shape ``(...)``.
        """
        x = self._check_operands(operands)
        lead = x.shape[:-1]
        x = x.reshape(-1, self.spec.operand_count)
        w = self.spec.operand_width
        bits = ((x[:, :, None] >> np.arange(w)) & 1).astype(np.int8)  # (B, n, w)
        for lv, (slut, clut) in zip(self.levels, self._luts):
            a, b = bits[:, 0::2, :], bits[:, 1::2, :]
            out = np.empty((bits.shape[0], lv.adders, lv.width + 1), dtype=np.int8)
            carry = np.zeros((bits.shape[0], lv.adders), dtype=np.int8)
            rows = np.arange(lv.adders)[None, :]
            for i in range(lv.width):
                idx = (a[:, :, i] << 2) | (b[:, :, i] << 1) | carry
                out[:, :, i] = slut[:, i, :][rows, idx]
                carry = clut[:, i, :][rows, idx]
            out[:, :, lv.width] = carry
            bits = out
        weights = 1 << np.arange(bits.shape[-1], dtype=np.int64)
        return (bits[:, 0, :].astype(np.int64) @ weights).reshape(lead)

    def tree_sum(self, operands):
        x = self._check_operands(operands)
        if self.is_exact:
            # Exact cells compose to integer addition; emulate() covers the bit level.
            total = x.sum(axis=-1)
        else:
            total = self.emulate(x)
        return int(total) if np.ndim(total) == 0 else total


def _levels(spec: TreeSpec) -> tuple:
    n = spec.operand_count
    if n < 2 or n & (n - 1):
        raise ValueError(f"operand_count must be a power of two >= 2, got {n}")
    levels, offset, width, adders = [], 0, spec.operand_width, n // 2
    while adders >= 1:
        levels.append(Level(adders, width, offset))
        offset += adders * width
        width += 1
        adders //= 2
    return tuple(levels)


def build_tree(spec: TreeSpec, kinds: dict | None = None) -> TreeInstance:
    """Place cells per the interleave pattern and check the degradation rule."""
    kinds = BUILTIN_KINDS if kinds is None else kinds
    try:
        pattern = [kinds[name] for name in spec.interleave_pattern]
        approx = kinds[spec.approx_kind] if spec.approx_low_bits else None
    except KeyError as exc:
        raise ValueError(f"unknown adder cell kind {exc.args[0]!r}") from None
    levels = _levels(spec)
    cells = []
    for lv in levels:
        for _ in range(lv.adders):
            for bit in range(lv.width):
                if approx is not None and bit < spec.approx_low_bits:
                    cells.append(approx)
                else:
                    cells.append(pattern[len(cells) % len(pattern)])
    tree = TreeInstance(spec, tuple(cells), levels)
    for chain in tree.chains():
        run = 0
        for pos in chain:
            run = run + 1 if tree.cells[pos].degrading else 0
            if run > spec.max_consecutive_degrading:
                raise ValueError(
                    f"{run} consecutive degrading cells at FA position {pos}; "
                    f"limit is {spec.max_consecutive_degrading}"
                )
    return tree


def tree_sum(tree: TreeInstance, operands):
    return tree.tree_sum(operands)


@dataclass(frozen=True)
class ErrorReport:
    avg_error: float
    rmse: float
    max_error: int
    samples: int
    exhaustive: bool

    def as_row(self) -> dict:
        return {"Avg_Error": self.avg_error, "RMSE": self.rmse, "Max_Error": self.max_error,
                "Samples": self.samples, "Exhaustive": self.exhaustive}


def _operand_chunks(tree: TreeInstance, samples: int | None, seed: int, chunk: int = 1 << 16):
    n, w = tree.spec.operand_count, tree.spec.operand_width
    if samples is None:
        total_bits = n * w
        if total_bits > EXHAUSTIVE_BIT_LIMIT:
            raise ValueError(
                f"exhaustive characterization needs {total_bits} input bits; "
                f"limit is {EXHAUSTIVE_BIT_LIMIT}"
            )
        shifts = np.arange(n, dtype=np.int64) * w
        mask = (1 << w) - 1
        for start in range(0, 1 << total_bits, chunk):
            k = np.arange(start, min(start + chunk, 1 << total_bits), dtype=np.int64)
            yield (k[:, None] >> shifts) & mask
    else:
        rng = np.random.default_rng(seed)
        for start in range(0, samples, chunk):
            m = min(chunk, samples - start)
            yield rng.integers(0, 1 << w, size=(m, n), dtype=np.int64)


def characterize(tree: TreeInstance, samples: int | None = None, seed: int = 0) -> ErrorReport:
    """Error statistics of the bit-level tree against exact integer addition.

    ``samples=None`` enumerates the whole input space; otherwise ``samples``
    random operand vectors are drawn from ``seed``. Integer accumulation keeps
    the result independent of chunking.
    """
    count = abs_sum = sq_sum = max_err = 0
    for ops in _operand_chunks(tree, samples, seed):
        err = np.abs(tree.emulate(ops) - ops.sum(axis=1))
        count += len(err)
        abs_sum += int(err.sum())
        sq_sum += int((err * err).sum())
        max_err = max(max_err, int(err.max(initial=0)))
    if count == 0:
        raise ValueError("no samples")
    return ErrorReport(abs_sum / count, math.sqrt(sq_sum / count), max_err, count, samples is None)


@dataclass(frozen=True)
class CellConstants:
    transistors: int
    power_uW: float
    delay_ns: float


@dataclass(frozen=True)
class FabricCost:
    transistors: int
    power_uW: float
    delay_ns: float
    cells: int

    @property
    def transistors_per_cell(self) -> float:
        return self.transistors / self.cells

    def as_row(self) -> dict:
        return {"Transistors": self.transistors, "Power(uW)": round(self.power_uW, 3),
                "Delay (ns)": round(self.delay_ns, 4)}


def critical_path_delay(tree: TreeInstance, delays: dict) -> float:
    """Longest input-to-output path, each cell adding its delay once."""
    w = tree.spec.operand_width
    arrival = np.zeros((tree.spec.operand_count, w))
    for lv in tree.levels:
        a, b = arrival[0::2], arrival[1::2]
        out = np.zeros((lv.adders, lv.width + 1))
        carry = np.zeros(lv.adders)
        for i in range(lv.width):
            d = np.array([delays[tree.cells[lv.offset + j * lv.width + i].name]
                          for j in range(lv.adders)])
            t = np.maximum(np.maximum(a[:, i], b[:, i]), carry) + d
            out[:, i] = t
            carry = t
        out[:, lv.width] = carry
        arrival = out
    return float(arrival.max())


def cost(tree: TreeInstance, constants: dict) -> FabricCost:
    counts = tree.kind_counts()
    missing = sorted(set(counts) - set(constants))
    if missing:
        raise KeyError(f"no cost constants for cell kind(s): {', '.join(missing)}")
    return FabricCost(
        transistors=sum(constants[k].transistors * n for k, n in counts.items()),
        power_uW=sum(constants[k].power_uW * n for k, n in counts.items()),
        delay_ns=critical_path_delay(tree, {k: c.delay_ns for k, c in constants.items()}),
        cells=len(tree),
    )


# --- fixtures -----------------------------------------------------------------

DATA_DIR = Path(__file__).parent / "data"


@dataclass
class FabricFixture:
    kinds: dict
    constants: dict
    trees: dict  # preset name -> TreeSpec keyword overrides
    reference: list = field(default_factory=list)  # reference rows, data only
    cost_tree: dict = field(default_factory=lambda: {"operand_count": 64, "operand_width": 4})

    def spec(self, name: str, **size) -> TreeSpec:
        if name not in self.trees:
            raise KeyError(f"unknown tree preset {name!r}; known: {', '.join(self.trees)}")
        params = dict(self.trees[name])
        params.pop("label", None)
        params.update(size)
        return TreeSpec(**params)

    def label(self, name: str) -> str:
        return self.trees[name].get("label", name)


def load_fixture(path=None) -> FabricFixture:
    """Load cell truth tables, cost constants and tree presets from JSON."""
    path = Path(path) if path is not None else DATA_DIR / "adders.json"
    with open(path) as fh:
        raw = json.load(fh)
    kinds = dict(BUILTIN_KINDS)
    for name, d in raw.get("cells", {}).items():
        kinds[name] = AdderCellKind(name, tuple(map(tuple, d["truth_table"])),
                                    int(d["transistors"]), bool(d.get("degrading", False)))
    constants = {k: CellConstants(int(v["transistors"]), float(v["power_uW"]), float(v["delay_ns"]))
                 for k, v in raw["constants"].items()}
    return FabricFixture(kinds, constants, raw["trees"], raw.get("reference", []),
                         raw.get("cost_tree", {"operand_count": 64, "operand_width": 4}))
