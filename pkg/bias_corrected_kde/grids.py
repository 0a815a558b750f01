from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy import integrate

from . import config
from .errors import GridError

MIN_GRID_POINTS = 101


@dataclass(frozen=True)
class EvaluationGrid:
    """Uniform abscissa lattice ``lo, lo + spacing, ..., hi`` with ``m`` points."""

    lo: float
    hi: float
    m: int

    def __post_init__(self) -> None:
        if not (math.isfinite(self.lo) and math.isfinite(self.hi)):
            raise GridError(f"grid bounds must be finite: [{self.lo}, {self.hi}]")
        if not self.lo < self.hi:
            raise GridError(f"grid needs lo < hi, got [{self.lo}, {self.hi}]")
        if self.m < MIN_GRID_POINTS:
            raise GridError(f"grid needs at least {MIN_GRID_POINTS} points, got {self.m}")

    @classmethod
    def with_spacing(
        cls,
        lo: float,
        hi: float,
        spacing: float,
        min_points: int = config.GRID_MIN_POINTS,
        max_points: int = config.GRID_MAX_POINTS,
    ) -> "EvaluationGrid":
        """Smallest grid over [lo, hi] whose spacing does not exceed ``spacing``."""
        if spacing <= 0 or not math.isfinite(spacing):
            raise GridError(f"spacing must be positive, got {spacing}")
        m = int(math.ceil((hi - lo) / spacing)) + 1
        return cls(lo, hi, min(max(m, min_points), max_points))

    @property
    def spacing(self) -> float:
        return (self.hi - self.lo) / (self.m - 1)

    @cached_property
    def points(self) -> np.ndarray:
        values = np.linspace(self.lo, self.hi, self.m)
        values.flags.writeable = False
        return values

    def covers(self, lo: float, hi: float) -> bool:
        slack = 1e-9 * max(1.0, abs(self.lo), abs(self.hi))
        return self.lo <= lo + slack and self.hi >= hi - slack

    def integrate(self, values: np.ndarray) -> float:
        values = np.asarray(values, dtype=float)
        if values.shape != (self.m,):
            raise GridError(f"expected {self.m} tabulated values, got shape {values.shape}")
        return float(integrate.trapezoid(values, dx=self.spacing))


@dataclass(frozen=True)
class TabulatedFunction:
    grid: EvaluationGrid
    values: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        values = np.array(self.values, dtype=float)
        if values.shape != (self.grid.m,):
            raise GridError(f"expected {self.grid.m} values, got shape {values.shape}")
        values.flags.writeable = False
        object.__setattr__(self, "values", values)

    @classmethod
    def tabulate(cls, fn, grid: EvaluationGrid) -> "TabulatedFunction":
        return cls(grid, np.asarray(fn(grid.points), dtype=float))

    def integral(self) -> float:
        return self.grid.integrate(self.values)
