"""Integrated squared error against a known truth and the per-sample oracle bandwidth."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Callable, Iterable

import numpy as np

from . import config
from .densities import NormalMixture
from .errors import ConfigError, GridError, InvalidPilotError, RenormalisationError, SearchFailureError
from .estimators import DensityEstimate, EstimatorKind, EstimatorSpec, Sample, estimate
from .grids import EvaluationGrid

__all__ = [
    "BandwidthSearch",
    "EvaluationGrid",
    "GridSpec",
    "OracleResult",
    "golden_section_minimize",
    "ise",
    "ise_at",
    "ise_curve",
    "oracle_bandwidth",
]

_INV_PHI = (math.sqrt(5.0) - 1.0) / 2.0
_INV_PHI_SQ = (3.0 - math.sqrt(5.0)) / 2.0


@dataclass(frozen=True)
class GridSpec:
    """How the ISE quadrature lattice is laid out for a given bandwidth."""

    min_points: int = config.GRID_MIN_POINTS
    resolution: float = config.GRID_RESOLUTION
    margin: float = config.PILOT_MARGIN_BANDWIDTHS
    max_points: int = config.GRID_MAX_POINTS

    def grid_for(self, truth: NormalMixture, sample: Sample, h: float) -> EvaluationGrid:
        support_lo, support_hi = truth.effective_support
        lo = min(support_lo, sample.min - self.margin * h)
        hi = max(support_hi, sample.max + self.margin * h)
        spacing = min(truth.min_sd, h) / self.resolution
        return EvaluationGrid.with_spacing(lo, hi, spacing, self.min_points, self.max_points)


@dataclass(frozen=True)
class BandwidthSearch:
    points: int = config.SEARCH_POINTS
    lower_fraction: float = config.SEARCH_LOWER_FRACTION
    upper_range_multiple: float = config.SEARCH_UPPER_RANGE_MULTIPLE
    rel_tol: float = config.SEARCH_RELATIVE_TOLERANCE

    def __post_init__(self) -> None:
        if self.points < 3:
            raise ConfigError(f"the coarse search needs at least 3 bandwidths, got {self.points}")
        if not (self.lower_fraction > 0 and self.upper_range_multiple > 0 and self.rel_tol > 0):
            raise ConfigError(
                "search fractions and tolerance must be positive: "
                f"lower={self.lower_fraction!r}, upper={self.upper_range_multiple!r}, tol={self.rel_tol!r}"
            )

    def bracket(self, sample: Sample) -> tuple[float, float]:
        """[sigma_hat * n^(-1/5) * lower_fraction, upper_range_multiple * sample range]."""
        sigma = float(np.std(sample.values))
        lo = sigma * sample.n ** (-0.2) * self.lower_fraction
        hi = self.upper_range_multiple * sample.range
        if not (lo > 0 and hi > lo):
            raise SearchFailureError(f"cannot form a bandwidth bracket from [{lo!r}, {hi!r}]")
        return lo, hi

    def coarse_bandwidths(self, sample: Sample) -> np.ndarray:
        lo, hi = self.bracket(sample)
        return np.geomspace(lo, hi, self.points)


@dataclass(frozen=True)
class OracleResult:
    h_star: float
    min_ise: float
    evals: int
    at_boundary: bool = False


def ise(est: DensityEstimate, truth: NormalMixture) -> float:
    """Trapezoid quadrature of (f_hat - f)^2 over the estimate's grid."""
    support_lo, support_hi = truth.effective_support
    if not est.grid.covers(support_lo, support_hi):
        raise GridError(
            f"grid [{est.grid.lo:.6g}, {est.grid.hi:.6g}] does not cover the effective support "
            f"[{support_lo:.6g}, {support_hi:.6g}] of {truth.label or 'the truth'}"
        )
    difference = np.asarray(est.values, dtype=float) - truth.pdf(est.grid.points)
    return est.grid.integrate(difference * difference)


def ise_at(
    kind: EstimatorKind,
    sample: Sample,
    truth: NormalMixture,
    h: float,
    grid_spec: GridSpec = GridSpec(),
) -> float:
    grid = grid_spec.grid_for(truth, sample, h)
    return ise(estimate(EstimatorSpec(kind, h), sample, grid), truth)


def ise_curve(
    kind: EstimatorKind,
    sample: Sample,
    truth: NormalMixture,
    bandwidths: Iterable[float],
    grid_spec: GridSpec = GridSpec(),
) -> np.ndarray:
    return np.array([_safe_ise(kind, sample, truth, h, grid_spec) for h in bandwidths])


def _safe_ise(kind, sample, truth, h, grid_spec) -> float:
    try:
        value = ise_at(kind, sample, truth, float(h), grid_spec)
    except (InvalidPilotError, RenormalisationError) as exc:
        logging.debug("h=%.6g で %s の推定に失敗しました: %s", h, kind.value, exc)
        return math.inf
    return value if math.isfinite(value) else math.inf


def golden_section_minimize(
    fn: Callable[[float], float], a: float, b: float, tol: float
) -> tuple[float, float, int]:
    """Golden-section search on [a, b] until the bracket is shorter than ``tol``.

    Returns the best evaluated point, its value and the number of evaluations.
    """
    dist = b - a
    c = a + _INV_PHI_SQ * dist
    d = a + _INV_PHI * dist
    yc = fn(c)
    yd = fn(d)
    evals = 2
    best_x, best_y = (c, yc) if yc <= yd else (d, yd)

    while dist > tol:
        dist *= _INV_PHI
        if yc < yd:
            b, d, yd = d, c, yc
            c = a + _INV_PHI_SQ * dist
            yc = fn(c)
            x_new, y_new = c, yc
        else:
            a, c, yc = c, d, yd
            d = a + _INV_PHI * dist
            yd = fn(d)
            x_new, y_new = d, yd
        evals += 1
        if y_new < best_y:
            best_x, best_y = x_new, y_new
    return best_x, best_y, evals


def oracle_bandwidth(
    kind: EstimatorKind,
    s: Sample,
    truth: NormalMixture,
    search: BandwidthSearch = BandwidthSearch(),
    grid_spec: GridSpec = GridSpec(),
) -> OracleResult:
    """ISE-minimising bandwidth: log-spaced coarse pass, then golden section in log h."""
    kind = EstimatorKind(kind)
    bandwidths = search.coarse_bandwidths(s)
    coarse = ise_curve(kind, s, truth, bandwidths, grid_spec)
    if not np.any(np.isfinite(coarse)):
        raise SearchFailureError(f"no finite ISE for {kind.value} over the coarse bandwidth grid")

    best = int(np.argmin(coarse))
    evals = len(bandwidths)
    if best == 0 or best == len(bandwidths) - 1:
        logging.debug("%s の最適バンド幅が探索範囲の端にあります: h=%.6g", kind.value, bandwidths[best])
        return OracleResult(float(bandwidths[best]), float(coarse[best]), evals, at_boundary=True)

    def objective(log_h: float) -> float:
        return _safe_ise(kind, s, truth, math.exp(log_h), grid_spec)

    log_h, value, refine_evals = golden_section_minimize(
        objective,
        math.log(bandwidths[best - 1]),
        math.log(bandwidths[best + 1]),
        math.log1p(search.rel_tol),
    )
    evals += refine_evals
    if value < coarse[best]:
        return OracleResult(math.exp(log_h), float(value), evals)
    return OracleResult(float(bandwidths[best]), float(coarse[best]), evals)
