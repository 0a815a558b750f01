"""Multiplicatively corrected kernel density estimators.

Every estimator here is an instance of

    g(x) n^-1 sum_i g(X_i)^-1 K_h(x - X_i)

for some pilot g, optionally divided by its integral
n^-1 sum_i g(X_i)^-1 (K_h * g)(X_i). The pilot decides the estimator:

* g = 1                      -> ordinary KDE
* g = KDE with the same h    -> higher-order-bias estimator (``jln_*``)
* g = fitted normal density  -> semiparametric estimator (``hg_*``)
* g = raw semiparametric fit -> higher-order-bias semiparametric estimator (``hobskde_*``)
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Callable, Iterable, Optional, Union

import numpy as np

from . import config
from .errors import (
    DegenerateFitError,
    EmptySampleError,
    InsufficientSupportError,
    InvalidPilotError,
    InvalidSampleError,
    RenormalisationError,
)
from .grids import EvaluationGrid, TabulatedFunction
from .kernels import (
    Bandwidth,
    as_bandwidth,
    convolve_kernel_with_function,
    convolve_kernel_with_normal,
    kernel_sum,
    normal_pdf,
)

if TYPE_CHECKING:  # pragma: no cover
    from .densities import NormalMixture

PositiveFunction = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class Sample:
    """Observed data, stored sorted so that estimates do not depend on input order."""

    values: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        values = np.array(self.values, dtype=float).reshape(-1)
        if values.size == 0:
            raise EmptySampleError("sample is empty")
        if not np.all(np.isfinite(values)):
            raise InvalidSampleError("sample contains non-finite values")
        values = np.sort(values)
        values.flags.writeable = False
        object.__setattr__(self, "values", values)

    @classmethod
    def of(cls, values: Iterable[float]) -> "Sample":
        return cls(np.fromiter(values, dtype=float))

    @property
    def n(self) -> int:
        return int(self.values.size)

    @property
    def min(self) -> float:
        return float(self.values[0])

    @property
    def max(self) -> float:
        return float(self.values[-1])

    @property
    def range(self) -> float:
        return self.max - self.min

    def affine(self, a: float, b: float) -> "Sample":
        return Sample(a * self.values + b)


@dataclass(frozen=True)
class ParametricFit:
    """Normal vehicle N(mu, sigma^2)."""

    mu: float
    sigma: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.mu) and math.isfinite(self.sigma)) or not self.sigma > 0:
            raise DegenerateFitError(f"invalid normal fit mu={self.mu!r}, sigma={self.sigma!r}")

    @classmethod
    def moment_matched(cls, mixture: "NormalMixture") -> "ParametricFit":
        """Population mean and sd of ``mixture``: the limit of the normal MLE."""
        return cls(mixture.mean, math.sqrt(mixture.variance))

    def pdf(self, x) -> np.ndarray:
        return normal_pdf(x, self.mu, self.sigma)

    def convolved_pdf(self, h: Union[float, Bandwidth], x) -> np.ndarray:
        return convolve_kernel_with_normal(h, self.mu, self.sigma, x)


class EstimatorKind(str, enum.Enum):
    KDE = "kde"
    JLN_RAW = "jln_raw"
    JLN_RENORM = "jln_renorm"
    HG_RAW = "hg_raw"
    HG_RENORM = "hg_renorm"
    HOBSKDE_RAW = "hobskde_raw"
    HOBSKDE_RENORM = "hobskde_renorm"

    @property
    def symbol(self) -> str:
        return _SYMBOLS[self]

    @property
    def renormalised(self) -> bool:
        return self in (EstimatorKind.JLN_RENORM, EstimatorKind.HG_RENORM, EstimatorKind.HOBSKDE_RENORM)

    @property
    def needs_fit(self) -> bool:
        return self.value.startswith(("hg_", "hobskde_"))

    @classmethod
    def parse(cls, text: str) -> "EstimatorKind":
        key = text.strip().lower().replace("-", "_")
        # A bare family name ("hg", "jln") means its raw form.
        for candidate in (key, key + "_raw"):
            for kind in cls:
                if candidate == kind.value:
                    return kind
        raise ValueError(f"unknown estimator {text!r}; choose from: " + ", ".join(k.value for k in cls))


_SYMBOLS = {
    EstimatorKind.KDE: "f̂",
    EstimatorKind.JLN_RAW: "f̂_N",
    EstimatorKind.JLN_RENORM: "f̂_N^R",
    EstimatorKind.HG_RAW: "f̂_S",
    EstimatorKind.HG_RENORM: "f̂_S^R",
    EstimatorKind.HOBSKDE_RAW: "f̂_{S,N}",
    EstimatorKind.HOBSKDE_RENORM: "f̂_{S,N}^R",
}

# Rows reported in the comparison table, in display order.
TABLE_KINDS: tuple[EstimatorKind, ...] = (
    EstimatorKind.KDE,
    EstimatorKind.JLN_RENORM,
    EstimatorKind.HG_RAW,
    EstimatorKind.HOBSKDE_RAW,
    EstimatorKind.HOBSKDE_RENORM,
)


@dataclass(frozen=True)
class EstimatorSpec:
    kind: EstimatorKind
    h: Bandwidth

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", EstimatorKind(self.kind))
        if not isinstance(self.h, Bandwidth):
            object.__setattr__(self, "h", Bandwidth(float(self.h)))


@dataclass(frozen=True)
class DensityEstimate:
    grid: EvaluationGrid
    values: np.ndarray = field(repr=False)
    spec: Optional[EstimatorSpec] = None

    def integral(self) -> float:
        return self.grid.integrate(self.values)


def _as_output(x, values: np.ndarray):
    if np.ndim(x) == 0:
        return float(np.reshape(values, -1)[0])
    return values


def constant_pilot(c: float) -> PositiveFunction:
    return lambda t: np.full(np.shape(t), float(c))


def fit_normal_mle(s: Sample) -> ParametricFit:
    """Normal maximum likelihood fit (variance divisor n)."""
    if s.n < 2:
        raise DegenerateFitError(f"a normal fit needs at least 2 observations, got {s.n}")
    if s.range == 0:
        raise DegenerateFitError("all observations are identical; the normal fit is degenerate")
    mu = float(np.mean(s.values))
    sigma = float(np.sqrt(np.mean((s.values - mu) ** 2)))
    if not sigma > 0:
        raise DegenerateFitError("sample variance underflows to zero")
    return ParametricFit(mu, sigma)


def kde(s: Sample, h: Union[float, Bandwidth], x):
    h = as_bandwidth(h)
    values = kernel_sum(x, s.values, None, h) / s.n
    return _as_output(x, values)


def _inverse_pilot(s: Sample, g: PositiveFunction) -> np.ndarray:
    at_sample = np.asarray(g(s.values), dtype=float)
    if at_sample.shape != s.values.shape:
        raise InvalidPilotError(f"pilot returned shape {at_sample.shape} for {s.n} sample points")
    bad = ~np.isfinite(at_sample) | (at_sample < config.PILOT_FLOOR)
    if np.any(bad):
        index = int(np.argmax(bad))
        raise InvalidPilotError(
            f"pilot value {at_sample[index]!r} at X={s.values[index]!r} is not a usable positive number"
        )
    return 1.0 / at_sample


def _pilot_at(g: PositiveFunction, x) -> np.ndarray:
    values = np.atleast_1d(np.asarray(g(np.atleast_1d(np.asarray(x, dtype=float))), dtype=float))
    if not np.all(np.isfinite(values)):
        raise InvalidPilotError("pilot is not finite at an evaluation point")
    return values


def multiplicative_raw(s: Sample, h: Union[float, Bandwidth], g: PositiveFunction, x):
    """g(x) n^-1 sum_i g(X_i)^-1 K_h(x - X_i)."""
    h = as_bandwidth(h)
    weights = _inverse_pilot(s, g)
    values = _pilot_at(g, x) * kernel_sum(x, s.values, weights, h).reshape(-1) / s.n
    return _as_output(x, values)


def multiplicative_renorm(
    s: Sample,
    h: Union[float, Bandwidth],
    g: PositiveFunction,
    conv_g: PositiveFunction,
    x,
):
    """g(x) sum_i g(X_i)^-1 K_h(x - X_i) / sum_i g(X_i)^-1 (K_h * g)(X_i)."""
    h = as_bandwidth(h)
    weights = _inverse_pilot(s, g)
    denominator = float(weights @ np.asarray(conv_g(s.values), dtype=float))
    if not math.isfinite(denominator) or denominator <= 0:
        raise RenormalisationError(f"renormalising constant is {denominator!r}")
    values = _pilot_at(g, x) * kernel_sum(x, s.values, weights, h).reshape(-1) / denominator
    return _as_output(x, values)


def resolution_scale(kind: EstimatorKind, s: Sample, h: float) -> float:
    """Narrowest feature width of an estimate: h, or the normal fit's sd when that is smaller."""
    if EstimatorKind(kind).needs_fit:
        return min(h, fit_normal_mle(s).sigma)
    return h


def pilot_grid(s: Sample, h: float, scale: Optional[float] = None) -> EvaluationGrid:
    """Lattice carrying a pilot for quadrature convolution at the sample points.

    The spacing resolves the kernel and, when given, ``scale``, the pilot's own feature width.
    """
    margin = config.PILOT_MARGIN_BANDWIDTHS * h
    width = h if scale is None else min(h, scale)
    return EvaluationGrid.with_spacing(s.min - margin, s.max + margin, width / config.GRID_RESOLUTION)


def tabulated_convolution(
    s: Sample, h: float, g: PositiveFunction, scale: Optional[float] = None
) -> PositiveFunction:
    """(K_h * g) at the sample points, by quadrature of g tabulated on ``pilot_grid``."""
    table = TabulatedFunction.tabulate(g, pilot_grid(s, h, scale))
    return lambda t: convolve_kernel_with_function(h, table, t)


def pilot_function(kind: EstimatorKind, s: Sample, h: float) -> PositiveFunction:
    kind = EstimatorKind(kind)
    if kind is EstimatorKind.KDE:
        return constant_pilot(1.0)
    if kind in (EstimatorKind.JLN_RAW, EstimatorKind.JLN_RENORM):
        return lambda t: kde(s, h, t)
    fit = fit_normal_mle(s)
    if kind in (EstimatorKind.HG_RAW, EstimatorKind.HG_RENORM):
        return fit.pdf
    # Renormalising the semiparametric pilot would cancel, so the raw form is used.
    return lambda t: multiplicative_raw(s, h, fit.pdf, t)


def evaluate(spec: EstimatorSpec, s: Sample, x):
    """Value of the estimator described by ``spec`` at arbitrary points ``x``."""
    h = float(spec.h)
    kind = spec.kind
    if kind is EstimatorKind.KDE:
        return kde(s, h, x)

    g = pilot_function(kind, s, h)
    if not kind.renormalised:
        return multiplicative_raw(s, h, g, x)

    if kind is EstimatorKind.HG_RENORM:
        fit = fit_normal_mle(s)
        conv_g = lambda t: fit.convolved_pdf(h, t)  # noqa: E731
    else:
        conv_g = tabulated_convolution(s, h, g, resolution_scale(kind, s, h))
    return multiplicative_renorm(s, h, g, conv_g, x)


def estimate(spec: EstimatorSpec, s: Sample, grid: EvaluationGrid) -> DensityEstimate:
    h = float(spec.h)
    margin = config.CONVOLUTION_SUPPORT_BANDWIDTHS * h
    if not grid.covers(s.min - margin, s.max + margin):
        raise InsufficientSupportError(
            f"grid [{grid.lo:.6g}, {grid.hi:.6g}] must cover the sample range "
            f"[{s.min:.6g}, {s.max:.6g}] plus {config.CONVOLUTION_SUPPORT_BANDWIDTHS:g}h = {margin:.6g}"
        )
    values = np.asarray(evaluate(spec, s, grid.points), dtype=float)
    return DensityEstimate(grid, values, spec)


__all__ = [
    "DensityEstimate",
    "EstimatorKind",
    "EstimatorSpec",
    "ParametricFit",
    "Sample",
    "TABLE_KINDS",
    "constant_pilot",
    "estimate",
    "evaluate",
    "fit_normal_mle",
    "kde",
    "multiplicative_raw",
    "multiplicative_renorm",
    "pilot_function",
    "pilot_grid",
    "resolution_scale",
    "tabulated_convolution",
]
