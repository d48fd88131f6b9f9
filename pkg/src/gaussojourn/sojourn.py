"""
Occupation measures of excursion sets on uniform grids.

Cell ``j`` is ``[t_j, t_{j+1})``; its indicator is read at the left endpoint
and its weight is the exact integral of the weight density over the cell, so
for the power weight ``t**e`` near ``t = 0`` no midpoint bias enters.
"""

from __future__ import annotations

import csv
import enum
from dataclasses import dataclass

import numpy as np

from .sampler import GridSpec, PathBatch


@dataclass(frozen=True)
class TrendSpec:
    """Premium income ``d * t**gamma``."""

    d: float = 0.0
    gamma: float = 1.0

    def __post_init__(self):
        if self.d < 0 or not self.gamma > 0:
            raise ValueError("trend needs d >= 0 and gamma > 0")

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        if self.d == 0.0:
            return np.zeros_like(t)
        return self.d * np.power(t, self.gamma)


class WeightKind(str, enum.Enum):
    LEBESGUE = "LEBESGUE"
    POWER = "POWER"


@dataclass(frozen=True)
class WeightSpec:
    kind: WeightKind = WeightKind.LEBESGUE
    exponent: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "kind", WeightKind(self.kind))
        if self.kind is WeightKind.POWER and not self.exponent > -1:
            raise ValueError("power weight needs exponent > -1")

    @classmethod
    def power(cls, exponent):
        return cls(WeightKind.POWER, exponent)

    def mass(self, a, b):
        """``eta([a, b])``, elementwise."""
        a = np.asarray(a, dtype=float)
        b = np.asarray(b, dtype=float)
        if self.kind is WeightKind.LEBESGUE:
            return b - a
        e1 = self.exponent + 1.0
        return (np.power(b, e1) - np.power(a, e1)) / e1

    def inverse_mass(self, x, a=0.0):
        """The ``b`` with ``eta([a, b]) = x``."""
        if self.kind is WeightKind.LEBESGUE:
            return a + x
        e1 = self.exponent + 1.0
        return (e1 * x + a**e1) ** (1.0 / e1)

    def cell_weights(self, grid: GridSpec):
        t = grid.points
        return self.mass(t[:-1], t[1:])


LEBESGUE = WeightSpec()


@dataclass
class SojournResult:
    measure: np.ndarray
    u: float
    total_mass: float

    def exceeds(self, L):
        return exceedance_indicator(self, L)


def sojourn_time(batch: PathBatch, trend: TrendSpec, u, weight: WeightSpec = LEBESGUE) -> SojournResult:
    """Weighted time each path spends strictly above ``u + d t**gamma``."""
    if not np.isfinite(u):
        raise ValueError("threshold u must be finite")
    measure = sojourn_values(batch.values, batch.grid, trend, u, weight)
    return SojournResult(measure, float(u), float(weight.mass(batch.grid.t_start, batch.grid.t_end)))


def sojourn_values(values, grid: GridSpec, trend: TrendSpec, u, weight: WeightSpec = LEBESGUE):
    values = np.atleast_2d(values)
    t = grid.points[:-1]
    w = weight.cell_weights(grid)
    above = values[:, :-1] - trend(t) > u
    return above @ w


def exceedance_indicator(result: SojournResult, L):
    """``measure > L``; with ``L = 0`` this is "some cell is above the level"."""
    if L < 0:
        raise ValueError("L must be >= 0")
    return result.measure > L


def write_sojourn_csv(path, result: SojournResult, levels):
    levels = list(levels)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\r\n")
        w.writerow(["path_index", "measure"] + [f"exceeds_L={L!r}" for L in levels])
        for i, m in enumerate(result.measure):
            w.writerow([i, repr(float(m))] + [int(m > L) for L in levels])
