"""Normal-mixture true densities and the first ten Marron-Wand test densities."""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Iterable, Sequence, Union

import numpy as np
from scipy import special

from . import config
from .errors import EmptySampleError, InvalidDensityError, UnknownDensityError
from .estimators import ParametricFit, Sample
from .kernels import normal_pdf

_SEPARATOR_PATTERN = re.compile(r"[\s_\-]+")


@dataclass(frozen=True)
class NormalComponent:
    weight: float
    mean: float
    sd: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.mean) and math.isfinite(self.sd)):
            raise InvalidDensityError(f"component parameters must be finite: {self}")
        if not self.sd > 0:
            raise InvalidDensityError(f"component sd must be positive, got {self.sd}")
        if not 0 < self.weight <= 1:
            raise InvalidDensityError(f"component weight must lie in (0, 1], got {self.weight}")


@dataclass(frozen=True)
class NormalMixture:
    components: tuple[NormalComponent, ...]
    label: str = ""

    def __post_init__(self) -> None:
        components = tuple(self.components)
        if not components:
            raise InvalidDensityError("a mixture needs at least one component")
        total = math.fsum(c.weight for c in components)
        if abs(total - 1.0) > 1e-12:
            raise InvalidDensityError(f"mixture weights sum to {total!r}, not 1")
        object.__setattr__(self, "components", components)

    @classmethod
    def from_triples(cls, triples: Iterable[tuple[float, float, float]], label: str = "") -> "NormalMixture":
        return cls(tuple(NormalComponent(w, mu, sd) for w, mu, sd in triples), label)

    @property
    def weights(self) -> np.ndarray:
        return np.array([c.weight for c in self.components])

    @property
    def means(self) -> np.ndarray:
        return np.array([c.mean for c in self.components])

    @property
    def sds(self) -> np.ndarray:
        return np.array([c.sd for c in self.components])

    @property
    def mean(self) -> float:
        return math.fsum(c.weight * c.mean for c in self.components)

    @property
    def variance(self) -> float:
        mu = self.mean
        return math.fsum(c.weight * (c.sd * c.sd + (c.mean - mu) ** 2) for c in self.components)

    @property
    def min_sd(self) -> float:
        return min(c.sd for c in self.components)

    @property
    def effective_support(self) -> tuple[float, float]:
        """[min(mu_k - 10 sd_k), max(mu_k + 10 sd_k)]; the default integration range."""
        lo = min(c.mean - config.SUPPORT_SDS * c.sd for c in self.components)
        hi = max(c.mean + config.SUPPORT_SDS * c.sd for c in self.components)
        return lo, hi

    def pdf(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        total = np.zeros_like(x)
        for c in self.components:
            total += c.weight * normal_pdf(x, c.mean, c.sd)
        return total

    def cdf(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        total = np.zeros_like(x)
        for c in self.components:
            total += c.weight * special.ndtr((x - c.mean) / c.sd)
        return total

    def affine(self, a: float, b: float) -> "NormalMixture":
        """Distribution of a*X + b for a > 0."""
        if not a > 0:
            raise InvalidDensityError(f"scale must be positive, got {a}")
        return NormalMixture(
            tuple(NormalComponent(c.weight, a * c.mean + b, a * c.sd) for c in self.components),
            self.label,
        )

    def sample(self, n: int, rng: np.random.Generator) -> Sample:
        return mixture_sample(self, n, rng)


def mixture_pdf(m: NormalMixture, x) -> np.ndarray:
    return m.pdf(x)


def mixture_sample(m: NormalMixture, n: int, rng: np.random.Generator) -> Sample:
    """Two-stage composition: categorical component index, then a Gaussian draw.

    Gaussian variates come from ``Generator.standard_normal`` (ziggurat on the
    generator's bit stream), so a given generator state always yields the same
    sample.
    """
    if n < 1:
        raise EmptySampleError(f"cannot draw a sample of size {n}")
    index = rng.choice(len(m.components), size=n, p=m.weights)
    draws = m.means[index] + m.sds[index] * rng.standard_normal(n)
    return Sample(draws)


def _strongly_skewed() -> list[tuple[float, float, float]]:
    return [(1 / 8, 3 * ((2 / 3) ** l - 1), (2 / 3) ** l) for l in range(8)]


def _claw() -> list[tuple[float, float, float]]:
    return [(1 / 2, 0.0, 1.0)] + [(1 / 10, l / 2 - 1, 1 / 10) for l in range(5)]


# (weight, mean, sd) triples of the standard Marron-Wand test densities #1-#10.
_MW_PARAMETERS: dict[int, tuple[str, list[tuple[float, float, float]]]] = {
    1: ("Gaussian", [(1.0, 0.0, 1.0)]),
    2: ("Skewed Unimodal", [(1 / 5, 0.0, 1.0), (1 / 5, 1 / 2, 2 / 3), (3 / 5, 13 / 12, 5 / 9)]),
    3: ("Strongly Skewed", _strongly_skewed()),
    4: ("Kurtotic Unimodal", [(2 / 3, 0.0, 1.0), (1 / 3, 0.0, 1 / 10)]),
    5: ("Outlier", [(1 / 10, 0.0, 1.0), (9 / 10, 0.0, 1 / 10)]),
    6: ("Bimodal", [(1 / 2, -1.0, 2 / 3), (1 / 2, 1.0, 2 / 3)]),
    7: ("Separated Bimodal", [(1 / 2, -3 / 2, 1 / 2), (1 / 2, 3 / 2, 1 / 2)]),
    8: ("Skewed Bimodal", [(3 / 4, 0.0, 1.0), (1 / 4, 3 / 2, 1 / 3)]),
    9: ("Trimodal", [(9 / 20, -6 / 5, 3 / 5), (9 / 20, 6 / 5, 3 / 5), (1 / 10, 0.0, 1 / 4)]),
    10: ("Claw", _claw()),
}

MW_IDS: tuple[int, ...] = tuple(sorted(_MW_PARAMETERS))
MW_LABELS: tuple[str, ...] = tuple(_MW_PARAMETERS[i][0] for i in MW_IDS)


def mw_density(density_id: int) -> NormalMixture:
    if density_id not in _MW_PARAMETERS:
        raise UnknownDensityError(
            f"unknown density id {density_id!r}; choose 1-10: " + ", ".join(MW_LABELS)
        )
    label, triples = _MW_PARAMETERS[density_id]
    return NormalMixture.from_triples(triples, label)


def normalize_label(label: str) -> str:
    return _SEPARATOR_PATTERN.sub(" ", label).strip().lower()


def density_id_for(key: Union[int, str]) -> int:
    """Resolve an id (1-10, int or digit string) or a case-insensitive label."""
    if isinstance(key, (int, np.integer)):
        if int(key) in _MW_PARAMETERS:
            return int(key)
    else:
        text = str(key).strip()
        if text.isdigit() and int(text) in _MW_PARAMETERS:
            return int(text)
        wanted = normalize_label(text)
        for density_id, (label, _) in _MW_PARAMETERS.items():
            if normalize_label(label) == wanted:
                return density_id
    raise UnknownDensityError(f"unknown density {key!r}; choose one of: " + ", ".join(MW_LABELS))


def lookup_density(key: Union[int, str]) -> NormalMixture:
    return mw_density(density_id_for(key))


def catalog() -> Sequence[NormalMixture]:
    return [mw_density(i) for i in MW_IDS]


def moment_matched_normal(m: NormalMixture) -> ParametricFit:
    """Normal with the mixture's mean and variance: the limit of the normal MLE."""
    return ParametricFit.moment_matched(m)
