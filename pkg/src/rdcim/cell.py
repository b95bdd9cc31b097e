"""Behavioral model of the 3T1R ReRAM bitcell.

A cell stores one weight bit as a resistance state. Reads are digital: the
sampled resistance is compared against a reference resistance, which is the
resistance-domain equivalent of a voltage-divider sense amplifier. The compute
path is a local AND between the input activation bit and the read weight bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np


class CellState(IntEnum):
    """Resistance state; the integer value is the stored weight bit."""

    HRS = 0
    LRS = 1


@dataclass(frozen=True)
class DeviceParams:
    """Nominal device resistances, programming voltages and variability."""

    r_lrs_nominal: float = 10e3
    r_hrs_nominal: float = 500e3
    v_set: float = 1.2
    v_reset: float = -1.2
    variability_fraction: float = 0.20
    distribution: str = "uniform"
    # Permit windows below 2x, for failure what-if studies only.
    allow_narrow_window: bool = False

    def __post_init__(self):
        if self.r_lrs_nominal <= 0 or self.r_hrs_nominal <= 0:
            raise ValueError("resistances must be positive")
        if self.r_hrs_nominal <= self.r_lrs_nominal:
            raise ValueError("HRS must exceed LRS")
        if self.r_hrs_nominal / self.r_lrs_nominal < 2 and not self.allow_narrow_window:
            raise ValueError(
                f"resistance window {self.r_hrs_nominal / self.r_lrs_nominal:.3g}x "
                "is below the 2x needed for digital sensing"
            )
        if not 0 <= self.variability_fraction < 1:
            raise ValueError("variability_fraction must lie in [0, 1)")
        if self.distribution not in ("uniform", "truncnorm"):
            raise ValueError(f"unknown distribution {self.distribution!r}")

    @property
    def window(self) -> float:
        return self.r_hrs_nominal / self.r_lrs_nominal

    def nominal(self, state: CellState) -> float:
        return self.r_lrs_nominal if state == CellState.LRS else self.r_hrs_nominal

    def band(self, state: CellState) -> tuple[float, float]:
        """Closed resistance interval a cell in ``state`` can be sampled from."""
        r = self.nominal(state)
        f = self.variability_fraction
        return r * (1 - f), r * (1 + f)

    def sample_unit(self, rng: np.random.Generator, shape=()) -> np.ndarray:
        """Draw normalized deviations in [-1, 1].

        Resistances are ``nominal * (1 + f * u)``. Sampling ``u`` once and
        scaling it keeps results monotone in ``f`` for a fixed random stream.
        """
        if self.distribution == "uniform":
            return rng.uniform(-1.0, 1.0, size=shape)
        # Gaussian with 3 sigma at the band edge, out-of-band draws resampled.
        u = rng.normal(0.0, 1.0 / 3.0, size=shape)
        bad = np.abs(u) > 1
        while np.any(bad):
            u[bad] = rng.normal(0.0, 1.0 / 3.0, size=int(bad.sum()))
            bad = np.abs(u) > 1
        return u

    def sample(self, states, rng: np.random.Generator) -> np.ndarray:
        """Sample resistances for an array of states."""
        states = np.asarray(states)
        nominal = np.where(states == CellState.LRS, self.r_lrs_nominal, self.r_hrs_nominal)
        if self.variability_fraction == 0:
            return nominal.astype(float)
        return nominal * (1 + self.variability_fraction * self.sample_unit(rng, states.shape))


DEFAULT_DEVICE = DeviceParams()


@dataclass(frozen=True)
class ReramCell:
    state: CellState = CellState.HRS
    resistance: float = DEFAULT_DEVICE.r_hrs_nominal

    @property
    def bit(self) -> int:
        return int(self.state)


@dataclass(frozen=True)
class SenseConfig:
    """Digital sense amplifier reduced to a resistance threshold.

    ``r_lrs_max`` and ``r_hrs_min`` are the worst-case band edges the reference
    has to separate; construction fails when the reference does not sit
    strictly between them.
    """

    r_reference: float
    v_read: float = 0.2
    r_lrs_max: float = field(default=0.0, repr=False)
    r_hrs_min: float = field(default=math.inf, repr=False)

    def __post_init__(self):
        if not self.r_lrs_max < self.r_reference < self.r_hrs_min:
            raise ValueError(
                f"reference {self.r_reference:.4g} ohm does not separate LRS max "
                f"{self.r_lrs_max:.4g} ohm from HRS min {self.r_hrs_min:.4g} ohm"
            )
        if self.v_read <= 0:
            raise ValueError("v_read must be positive")

    @classmethod
    def for_device(cls, params: DeviceParams = DEFAULT_DEVICE,
                   r_reference: float | None = None, v_read: float = 0.2) -> "SenseConfig":
        """Build a sense configuration checked against worst-case variability.

        The default reference is the geometric mean of the nominal resistances,
        which gives equal log-domain margin to both states.
        """
        if r_reference is None:
            r_reference = math.sqrt(params.r_lrs_nominal * params.r_hrs_nominal)
        return cls(
            r_reference=r_reference,
            v_read=v_read,
            r_lrs_max=params.band(CellState.LRS)[1],
            r_hrs_min=params.band(CellState.HRS)[0],
        )


DEFAULT_SENSE = SenseConfig.for_device(DEFAULT_DEVICE)


def sense_bits(resistance, r_reference: float):
    """Threshold comparison shared by all read paths: 1 where R < reference."""
    return (np.asarray(resistance) < r_reference).astype(np.int8)


def write_cell(cell: ReramCell, target: CellState, params: DeviceParams = DEFAULT_DEVICE,
               rng: np.random.Generator | None = None) -> ReramCell:
    """SET (to LRS) or RESET (to HRS) a cell and resample its resistance."""
    target = CellState(target)
    if rng is None:
        rng = np.random.default_rng()
    resistance = float(params.sample(np.array(int(target)), rng))
    return ReramCell(target, resistance)


def read_cell(cell: ReramCell, sense: SenseConfig = DEFAULT_SENSE) -> int:
    if not isinstance(sense, SenseConfig):
        raise TypeError("sense must be a SenseConfig")
    return int(cell.resistance < sense.r_reference)


def cim_multiply(activation: int, cell: ReramCell, sense: SenseConfig = DEFAULT_SENSE) -> int:
    """AND-based in-memory multiply of an input bit with the stored bit."""
    if activation not in (0, 1):
        raise ValueError(f"activation must be a bit, got {activation!r}")
    return activation & read_cell(cell, sense)
