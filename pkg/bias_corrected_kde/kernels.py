"""Smoothing kernel K, its scaled form K_h and the convolutions built from it."""

from __future__ import annotations

import enum
import logging
import math
import warnings
from dataclasses import dataclass
from typing import Callable, Optional, Union

import numpy as np
from scipy import integrate

from . import config
from .errors import (
    BandwidthError,
    DomainError,
    InsufficientSupportError,
    ResolutionWarning,
    UnsupportedMomentError,
)
from .grids import TabulatedFunction

SQRT_2PI = math.sqrt(2.0 * math.pi)

ArrayLike = Union[float, np.ndarray]

_resolution_warning_logged = False


def normal_pdf(x: ArrayLike, mu: float, sigma: float) -> np.ndarray:
    """N(x; mu, sigma^2). Every Gaussian evaluation in the package goes through here."""
    z = (np.asarray(x, dtype=float) - mu) / sigma
    return np.exp(-0.5 * z * z) / (SQRT_2PI * sigma)


class KernelFamily(enum.Enum):
    GAUSSIAN = "gaussian"


_MOMENTS: dict[KernelFamily, dict[int, float]] = {
    KernelFamily.GAUSSIAN: {0: 1.0, 2: 1.0, 4: 3.0},
}


@dataclass(frozen=True)
class Kernel:
    family: KernelFamily = KernelFamily.GAUSSIAN

    def evaluate(self, u: ArrayLike) -> np.ndarray:
        return normal_pdf(u, 0.0, 1.0)

    def scaled(self, u: ArrayLike, h: float) -> np.ndarray:
        """K_h(u) = K(u / h) / h."""
        return self.evaluate(np.asarray(u, dtype=float) / h) / h

    def moment(self, ell: int) -> float:
        table = _MOMENTS[self.family]
        if ell not in table:
            raise UnsupportedMomentError(
                f"moment s_{ell} is not tabulated for the {self.family.value} kernel "
                f"(available: {sorted(table)})"
            )
        return table[ell]

    def self_convolution(self, u: ArrayLike) -> np.ndarray:
        """(K*K)(u); for the Gaussian kernel the N(0, 2) density."""
        return normal_pdf(u, 0.0, math.sqrt(2.0))

    @property
    def roughness(self) -> float:
        """Integral of K^2."""
        return 1.0 / (2.0 * math.sqrt(math.pi))


GAUSSIAN = Kernel()


@dataclass(frozen=True)
class Bandwidth:
    h: float

    def __post_init__(self) -> None:
        as_bandwidth(self.h)

    def __float__(self) -> float:
        return float(self.h)

    def kernel(self, u: ArrayLike, kernel: Kernel = GAUSSIAN) -> np.ndarray:
        return kernel.scaled(u, self.h)


def as_bandwidth(h: Union[float, Bandwidth]) -> float:
    value = float(h)
    if not math.isfinite(value) or value <= 0:
        raise BandwidthError(f"bandwidth must be a positive finite number, got {value!r}")
    return value


def kernel_eval(k: Kernel, u: ArrayLike) -> np.ndarray:
    return k.evaluate(u)


def kernel_moment(k: Kernel, ell: int) -> float:
    return k.moment(ell)


def variance_constant(
    k: Kernel = GAUSSIAN,
    *,
    points: int = config.VARIANCE_CONSTANT_POINTS,
    half_width: float = config.VARIANCE_CONSTANT_HALF_WIDTH,
    self_convolution: Optional[Callable[[np.ndarray], np.ndarray]] = None,
) -> float:
    """Integral of (2K - K*K)^2 by trapezoid quadrature on [-half_width, half_width].

    ``self_convolution`` replaces K*K, which is only useful for sanity checks.
    """
    u = np.linspace(-half_width, half_width, points)
    convolved = self_convolution(u) if self_convolution is not None else k.self_convolution(u)
    integrand = (2.0 * k.evaluate(u) - convolved) ** 2
    return float(integrate.trapezoid(integrand, u))


def kernel_sum(
    x: ArrayLike,
    centers: np.ndarray,
    weights: Optional[np.ndarray],
    h: float,
    k: Kernel = GAUSSIAN,
) -> np.ndarray:
    """Sum_j weights_j * K_h(x_i - centers_j) for every x_i, in bounded-memory chunks."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    centers = np.asarray(centers, dtype=float)
    if weights is None:
        weights = np.ones_like(centers)
    out = np.empty(x.shape, dtype=float)
    flat_x = x.reshape(-1)
    flat_out = out.reshape(-1)
    rows = max(1, config.KERNEL_CHUNK_ELEMENTS // max(1, centers.size))
    for start in range(0, flat_x.size, rows):
        block = flat_x[start : start + rows]
        flat_out[start : start + rows] = k.scaled(block[:, None] - centers[None, :], h) @ weights
    return out


def convolve_kernel_with_normal(
    h: Union[float, Bandwidth], mu: float, sigma: float, x: ArrayLike
) -> np.ndarray:
    """(K_h * N(.; mu, sigma^2))(x) = N(x; mu, sigma^2 + h^2) for the Gaussian kernel."""
    h = as_bandwidth(h)
    if not sigma > 0:
        raise DomainError(f"sigma must be positive, got {sigma}")
    return normal_pdf(x, mu, math.sqrt(sigma * sigma + h * h))


def convolve_kernel_with_function(
    h: Union[float, Bandwidth],
    g: TabulatedFunction,
    x: ArrayLike,
    k: Kernel = GAUSSIAN,
) -> np.ndarray:
    """Trapezoid quadrature of the integral of K_h(x - t) g(t) dt on g's grid."""
    global _resolution_warning_logged

    h = as_bandwidth(h)
    x = np.atleast_1d(np.asarray(x, dtype=float))
    margin = config.CONVOLUTION_SUPPORT_BANDWIDTHS * h
    needed_lo = float(x.min()) - margin
    needed_hi = float(x.max()) + margin
    if not g.grid.covers(needed_lo, needed_hi):
        raise InsufficientSupportError(
            f"tabulation grid [{g.grid.lo:.6g}, {g.grid.hi:.6g}] does not cover "
            f"[{needed_lo:.6g}, {needed_hi:.6g}] (points +/- {config.CONVOLUTION_SUPPORT_BANDWIDTHS:g}h)"
        )

    spacing = g.grid.spacing
    if spacing > h / config.GRID_RESOLUTION:
        message = f"grid spacing {spacing:.3g} exceeds h/4 = {h / 4:.3g}"
        warnings.warn(message, ResolutionWarning, stacklevel=2)
        if not _resolution_warning_logged:
            logging.warning("畳み込みの格子間隔が粗すぎます: %s", message)
            _resolution_warning_logged = True

    weights = np.full(g.grid.m, spacing)
    weights[0] *= 0.5
    weights[-1] *= 0.5
    return kernel_sum(x, g.grid.points, weights * g.values, h, k)
