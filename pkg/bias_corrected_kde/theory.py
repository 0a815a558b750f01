"""Asymptotic bias and variance of the multiplicative estimators.

Densities may be passed as callables or as objects with a ``pdf`` method
(``NormalMixture``, ``ParametricFit``). Derivatives are fourth-order central
finite differences on a lattice of step ``step`` around each abscissa; nested
derivatives reuse the same lattice. The default step is 1/50 of the narrowest
normal component among the inputs.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Union

import numpy as np

from . import config
from .errors import EdgeError, GridError
from .grids import EvaluationGrid
from .kernels import GAUSSIAN, Kernel, as_bandwidth, variance_constant

DensityLike = Union[Callable[[np.ndarray], np.ndarray], object]

# order -> (integer coefficients from -k to +k, divisor multiplier, power of step)
_STENCILS: dict[int, tuple[tuple[int, ...], float, int]] = {
    1: ((1, -8, 0, 8, -1), 12.0, 1),
    2: ((-1, 16, -30, 16, -1), 12.0, 2),
    3: ((1, -8, 13, 0, -13, 8, -1), 8.0, 3),
    4: ((-1, 12, -39, 56, -39, 12, -1), 6.0, 4),
}
_DEFAULT_STEP = config.FD_STEP_FRACTION


def _apply_stencil(values: np.ndarray, order: int, step: float) -> np.ndarray:
    """Derivative along the last axis; the result loses the stencil half-width at each end."""
    if order not in _STENCILS:
        raise ValueError(f"derivatives of order {order} are not supported (1-4)")
    coefficients, divisor, power = _STENCILS[order]
    width = len(coefficients)
    length = values.shape[-1] - width + 1
    if length < 1:
        raise EdgeError(f"{values.shape[-1]} lattice points are too few for an order-{order} stencil")
    total = coefficients[0] * values[..., 0:length]
    for offset, coefficient in enumerate(coefficients[1:], start=1):
        if coefficient:
            total = total + coefficient * values[..., offset : offset + length]
    return total / (divisor * step**power)


def stencil_half_width(order: int) -> int:
    return (len(_STENCILS[order][0]) - 1) // 2


@dataclass(frozen=True)
class SmoothFunctionOnGrid:
    grid: EvaluationGrid
    values: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        values = np.array(self.values, dtype=float)
        if values.shape != (self.grid.m,):
            raise GridError(f"expected {self.grid.m} values, got shape {values.shape}")
        if not np.all(np.isfinite(values)):
            raise GridError("tabulated function has non-finite values")
        values.flags.writeable = False
        object.__setattr__(self, "values", values)

    @classmethod
    def tabulate(cls, fn: DensityLike, grid: EvaluationGrid) -> "SmoothFunctionOnGrid":
        return cls(grid, _as_function(fn)(grid.points))

    def derivative(self, order: int) -> "SmoothFunctionOnGrid":
        k = stencil_half_width(order)
        step = self.grid.spacing
        inner = EvaluationGrid(self.grid.lo + k * step, self.grid.hi - k * step, self.grid.m - 2 * k)
        return SmoothFunctionOnGrid(inner, _apply_stencil(self.values, order, step))

    def _node(self, x: float, guard: int) -> int:
        step = self.grid.spacing
        if x < self.grid.lo + guard * step or x > self.grid.hi - guard * step:
            raise EdgeError(
                f"x={x:.6g} lies within {guard} steps of the grid edge "
                f"[{self.grid.lo:.6g}, {self.grid.hi:.6g}]"
            )
        index = int(round((x - self.grid.lo) / step))
        if abs(self.grid.lo + index * step - x) > 1e-6 * step:
            raise GridError(f"x={x:.6g} is not a grid node")
        return index

    def value_at(self, x: float) -> float:
        return float(self.values[self._node(x, 0)])

    def derivative_at(self, x: float, order: int) -> float:
        index = self._node(x, config.FD_HALF_WIDTH)
        k = stencil_half_width(order)
        window = self.values[index - k : index + k + 1]
        return float(_apply_stencil(window, order, self.grid.spacing)[0])


def _as_function(obj: DensityLike) -> Callable[[np.ndarray], np.ndarray]:
    pdf = getattr(obj, "pdf", None)
    if callable(pdf):
        return pdf
    if callable(obj):
        return obj  # type: ignore[return-value]
    raise TypeError(f"{obj!r} is neither callable nor has a pdf method")


def _scale_of(obj: DensityLike) -> Optional[float]:
    for attribute in ("min_sd", "sigma"):
        value = getattr(obj, attribute, None)
        if isinstance(value, (int, float)) and value > 0:
            return float(value)
    return None


def default_step(*densities: DensityLike) -> float:
    scales = [s for s in (_scale_of(d) for d in densities) if s is not None]
    return (min(scales) if scales else 1.0) * _DEFAULT_STEP


def _check_domain(x: np.ndarray, step: float, domain: Optional[tuple[float, float]]) -> None:
    if domain is None:
        return
    guard = config.FD_HALF_WIDTH * step
    lo, hi = domain
    if np.any(x < lo + guard) or np.any(x > hi - guard):
        raise EdgeError(
            f"evaluation points must stay {config.FD_HALF_WIDTH} steps inside [{lo:.6g}, {hi:.6g}]"
        )


def _lattice(x: np.ndarray, step: float) -> np.ndarray:
    offsets = np.arange(-config.FD_HALF_WIDTH, config.FD_HALF_WIDTH + 1) * step
    return x[:, None] + offsets[None, :]


def _prepare(x, step, domain, *densities):
    flat = np.atleast_1d(np.asarray(x, dtype=float)).reshape(-1)
    step = float(step) if step is not None else default_step(*densities)
    if domain is None:
        domain = getattr(densities[0], "effective_support", None)
    _check_domain(flat, step, domain)
    return flat, step


def _shaped(x, values: np.ndarray):
    if np.ndim(x) == 0:
        return float(values[0])
    return values.reshape(np.shape(x))


def derivative(fn: DensityLike, x, order: int, step: Optional[float] = None):
    """Fourth-order central difference of ``fn`` at ``x``."""
    flat = np.atleast_1d(np.asarray(x, dtype=float)).reshape(-1)
    step = float(step) if step is not None else default_step(fn)
    lattice = _lattice(flat, step)
    values = _as_function(fn)(lattice)
    k = config.FD_HALF_WIDTH - stencil_half_width(order)
    window = values[:, k : values.shape[1] - k]
    return _shaped(x, _apply_stencil(window, order, step)[:, 0])


def _ratio_derivatives(f, g, flat: np.ndarray, step: float):
    """g(x), (f/g)''(x) and (f/g)''''(x) on the lattice around each x."""
    lattice = _lattice(flat, step)
    f_values = _as_function(f)(lattice)
    g_values = _as_function(g)(lattice)
    ratio = f_values / g_values
    center = config.FD_HALF_WIDTH
    second = _apply_stencil(ratio[:, center - 2 : center + 3], 2, step)[:, 0]
    fourth = _apply_stencil(ratio[:, center - 3 : center + 4], 4, step)[:, 0]
    return g_values[:, center], second, fourth


def bias_terms(
    f: DensityLike,
    g: DensityLike,
    h: float,
    x,
    *,
    kernel: Kernel = GAUSSIAN,
    step: Optional[float] = None,
    domain: Optional[tuple[float, float]] = None,
) -> tuple[np.ndarray, np.ndarray]:
    """The h^2 and h^4 terms of the bias of g(x) n^-1 sum g(X_i)^-1 K_h(x - X_i)."""
    h = as_bandwidth(h)
    flat, step = _prepare(x, step, domain, f, g)
    g_at_x, second, fourth = _ratio_derivatives(f, g, flat, step)
    h2 = h * h
    h4 = h2 * h2
    term2 = h2 / 2.0 * kernel.moment(2) * g_at_x * second
    term4 = h4 / 24.0 * kernel.moment(4) * g_at_x * fourth
    return _shaped(x, term2), _shaped(x, term4)


def general_bias_expansion(
    f: DensityLike,
    g: DensityLike,
    h: float,
    x,
    order: int = 2,
    *,
    kernel: Kernel = GAUSSIAN,
    step: Optional[float] = None,
    domain: Optional[tuple[float, float]] = None,
):
    if order not in (2, 4):
        raise ValueError(f"expansion order must be 2 or 4, got {order}")
    term2, term4 = bias_terms(f, g, h, x, kernel=kernel, step=step, domain=domain)
    if order == 2:
        return term2
    return term2 + term4


def hg_bias(
    f: DensityLike,
    f0: DensityLike,
    h: float,
    x,
    *,
    kernel: Kernel = GAUSSIAN,
    step: Optional[float] = None,
    domain: Optional[tuple[float, float]] = None,
):
    """Leading bias of the semiparametric estimator with vehicle f0."""
    return general_bias_expansion(f, f0, h, x, order=2, kernel=kernel, step=step, domain=domain)


def _curvature_ratio(f_values: np.ndarray, f0_values: np.ndarray, step: float) -> np.ndarray:
    """(f0/f)(z) (f/f0)''(z) along the last axis, shrunk by two points at each end."""
    second = _apply_stencil(f_values / f0_values, 2, step)
    return (f0_values / f_values)[..., 2:-2] * second


def _hobskde_factor(f, f0, flat: np.ndarray, step: float) -> tuple[np.ndarray, np.ndarray]:
    """f(x) and {(f0/f)(f/f0)''}''(x)."""
    lattice = _lattice(flat, step)
    f_values = _as_function(f)(lattice)
    f0_values = _as_function(f0)(lattice)
    inner = _curvature_ratio(f_values, f0_values, step)
    outer = _apply_stencil(inner, 2, step)[:, 0]
    return f_values[:, config.FD_HALF_WIDTH], outer


def hobskde_bias(
    f: DensityLike,
    f0: DensityLike,
    h: float,
    x,
    *,
    kernel: Kernel = GAUSSIAN,
    step: Optional[float] = None,
    domain: Optional[tuple[float, float]] = None,
):
    """-(h^4/4) s_2^2 f(x) {(f0/f)(x) (f/f0)''(x)}''."""
    h = as_bandwidth(h)
    flat, step = _prepare(x, step, domain, f, f0)
    f_at_x, outer = _hobskde_factor(f, f0, flat, step)
    h2 = h * h
    s2 = kernel.moment(2)
    return _shaped(x, -(h2 * h2) / 4.0 * s2 * s2 * f_at_x * outer)


def renormalisation_offset(
    f: DensityLike,
    f0: DensityLike,
    support: tuple[float, float],
    *,
    step: Optional[float] = None,
) -> float:
    """Integral over ``support`` of f(z) {(f0/f)(z) (f/f0)''(z)}'' dz."""
    step = float(step) if step is not None else default_step(f, f0)
    lo, hi = support
    m = int(math.ceil((hi - lo) / step)) + 1
    spacing = (hi - lo) / (m - 1)
    guard = config.FD_HALF_WIDTH
    padded = EvaluationGrid(lo - guard * spacing, hi + guard * spacing, m + 2 * guard)
    f_values = _as_function(f)(padded.points)
    f0_values = _as_function(f0)(padded.points)
    outer = _apply_stencil(_curvature_ratio(f_values, f0_values, spacing), 2, spacing)
    core = EvaluationGrid(lo, hi, m)
    return core.integrate(f_values[guard:-guard] * outer)


def hobskde_renorm_bias(
    f: DensityLike,
    f0: DensityLike,
    h: float,
    x,
    *,
    support: Optional[tuple[float, float]] = None,
    kernel: Kernel = GAUSSIAN,
    step: Optional[float] = None,
    domain: Optional[tuple[float, float]] = None,
):
    """Leading bias of the renormalised estimator: the unrenormalised bias recentred so
    that it integrates to zero."""
    h = as_bandwidth(h)
    if support is None:
        support = getattr(f, "effective_support", None)
        if support is None:
            raise ValueError("support is required when f is not a NormalMixture")
    flat, step = _prepare(x, step, domain, f, f0)
    f_at_x, outer = _hobskde_factor(f, f0, flat, step)
    offset = renormalisation_offset(f, f0, support, step=step)
    h2 = h * h
    s2 = kernel.moment(2)
    coefficient = (h2 * h2) / 4.0 * s2 * s2
    return _shaped(x, -coefficient * f_at_x * outer + coefficient * f_at_x * offset)


@functools.lru_cache(maxsize=None)
def _variance_constant(kernel: Kernel) -> float:
    return variance_constant(kernel)


def asymptotic_variance(f: DensityLike, n: int, h: float, x, k: Kernel = GAUSSIAN):
    """(nh)^-1 f(x) integral of (2K - K*K)^2."""
    if n < 1:
        raise ValueError(f"n must be at least 1, got {n}")
    h = as_bandwidth(h)
    values = np.atleast_1d(_as_function(f)(np.atleast_1d(np.asarray(x, dtype=float))))
    return _shaped(x, values.reshape(-1) * _variance_constant(k) / (n * h))
