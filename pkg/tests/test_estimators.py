import math

import numpy as np
import pytest
from scipy import stats

from bias_corrected_kde.densities import MW_IDS, mw_density
from bias_corrected_kde.errors import (
    DegenerateFitError,
    EmptySampleError,
    InsufficientSupportError,
    InvalidPilotError,
    InvalidSampleError,
    RenormalisationError,
)
from bias_corrected_kde.estimators import (
    TABLE_KINDS,
    EstimatorKind,
    EstimatorSpec,
    Sample,
    constant_pilot,
    estimate,
    evaluate,
    fit_normal_mle,
    kde,
    multiplicative_raw,
    multiplicative_renorm,
    pilot_function,
    pilot_grid,
    resolution_scale,
    tabulated_convolution,
)
from bias_corrected_kde.grids import EvaluationGrid

SMALL_SAMPLE = [-1.3, -0.2, 0.4, 0.9, 2.1]
RENORMALISED = (EstimatorKind.JLN_RENORM, EstimatorKind.HG_RENORM, EstimatorKind.HOBSKDE_RENORM)


def _phi(x: float, mu: float = 0.0, var: float = 1.0) -> float:
    return math.exp(-0.5 * (x - mu) ** 2 / var) / math.sqrt(2.0 * math.pi * var)


def _k_h(u: float, h: float) -> float:
    return _phi(u / h) / h


def _product_integral(a: float, var_a: float, b: float, var_b: float, c: float, var_c: float) -> float:
    """Integral over t of N(t; a, var_a) N(t; b, var_b) N(t; c, var_c)."""
    scale = _phi(a, b, var_a + var_b)
    var_ab = var_a * var_b / (var_a + var_b)
    mean_ab = (a * var_b + b * var_a) / (var_a + var_b)
    return scale * _phi(mean_ab, c, var_ab + var_c)


class _BruteForce:
    """Direct transcription of each estimator's defining sum, one term at a time."""

    def __init__(self, xs: list[float], h: float) -> None:
        self.xs = xs
        self.h = h
        self.n = len(xs)
        self.mu = sum(xs) / self.n
        self.var = sum((v - self.mu) ** 2 for v in xs) / self.n

    def kde(self, x: float) -> float:
        return sum(_k_h(x - xi, self.h) for xi in self.xs) / self.n

    def fit(self, x: float) -> float:
        return _phi(x, self.mu, self.var)

    def hg_raw(self, x: float) -> float:
        return self.fit(x) * sum(_k_h(x - xi, self.h) / self.fit(xi) for xi in self.xs) / self.n

    def _corrected(self, pilot, x: float) -> float:
        return pilot(x) * sum(_k_h(x - xi, self.h) / pilot(xi) for xi in self.xs) / self.n

    def jln_raw(self, x: float) -> float:
        return self._corrected(self.kde, x)

    def hobskde_raw(self, x: float) -> float:
        return self._corrected(self.hg_raw, x)

    def _conv_kde(self, y: float) -> float:
        return sum(_phi(y, xj, 2 * self.h**2) for xj in self.xs) / self.n

    def _conv_fit(self, y: float) -> float:
        return _phi(y, self.mu, self.var + self.h**2)

    def _conv_hg_raw(self, y: float) -> float:
        h2 = self.h**2
        return (
            sum(_product_integral(y, h2, self.mu, self.var, xj, h2) / self.fit(xj) for xj in self.xs)
            / self.n
        )

    def _renorm(self, pilot, conv, x: float) -> float:
        numerator = pilot(x) * sum(_k_h(x - xi, self.h) / pilot(xi) for xi in self.xs)
        denominator = sum(conv(xi) / pilot(xi) for xi in self.xs)
        return numerator / denominator

    def jln_renorm(self, x: float) -> float:
        return self._renorm(self.kde, self._conv_kde, x)

    def hg_renorm(self, x: float) -> float:
        return self._renorm(self.fit, self._conv_fit, x)

    def hobskde_renorm(self, x: float) -> float:
        return self._renorm(self.hg_raw, self._conv_hg_raw, x)

    def value(self, kind: EstimatorKind, x: float) -> float:
        return getattr(self, kind.value)(x)


def _wide_grid(s: Sample, h: float) -> EvaluationGrid:
    return EvaluationGrid.with_spacing(s.min - 8 * h, s.max + 8 * h, h / 4)


def test_sample_is_sorted_and_validated():
    s = Sample.of([3.0, -1.0, 2.0])

    np.testing.assert_array_equal(s.values, [-1.0, 2.0, 3.0])
    assert s.n == 3
    assert s.range == 4.0
    with pytest.raises(EmptySampleError):
        Sample([])
    with pytest.raises(InvalidSampleError):
        Sample([1.0, float("nan")])
    with pytest.raises(InvalidSampleError):
        Sample([1.0, float("inf")])


def test_fit_normal_mle_two_points():
    fit = fit_normal_mle(Sample([-1.0, 1.0]))

    assert fit.mu == 0.0
    assert fit.sigma == 1.0


def test_fit_normal_mle_is_consistent():
    s = Sample(np.random.default_rng(5).standard_normal(1_000_000))
    fit = fit_normal_mle(s)

    assert abs(fit.mu) < 0.005
    assert abs(fit.sigma - 1.0) < 0.005


@pytest.mark.parametrize("values", [[1.0, 1.0, 1.0], [2.5]])
def test_fit_normal_mle_rejects_degenerate_samples(values):
    with pytest.raises(DegenerateFitError):
        fit_normal_mle(Sample(values))


def test_kde_hand_values():
    assert kde(Sample([0.0]), 1.0, 0.0) == pytest.approx(0.3989422804, abs=1e-10)
    assert kde(Sample([-1.0, 1.0]), 1.0, 0.0) == pytest.approx(0.2419707245, abs=1e-9)


def test_kde_integrates_to_one():
    m = mw_density(2)
    s = m.sample(100, np.random.default_rng(1))
    h = 0.3
    lo, hi = m.effective_support
    grid = EvaluationGrid.with_spacing(min(lo, s.min - 8 * h), max(hi, s.max + 8 * h), h / 4)

    assert grid.integrate(kde(s, h, grid.points)) == pytest.approx(1.0, abs=1e-8)


def test_unit_pilot_reproduces_kde_exactly():
    s = mw_density(6).sample(60, np.random.default_rng(2))
    x = np.linspace(-3, 3, 61)
    base = kde(s, 0.4, x)

    np.testing.assert_array_equal(multiplicative_raw(s, 0.4, constant_pilot(1.0), x), base)
    np.testing.assert_array_equal(
        multiplicative_renorm(s, 0.4, constant_pilot(1.0), constant_pilot(1.0), x),
        base,
    )


@pytest.mark.parametrize("c", [0.1, 1.0, 7.0])
def test_constant_pilot_cancels(c):
    s = mw_density(4).sample(40, np.random.default_rng(3))
    x = np.linspace(-2, 2, 41)
    base = kde(s, 0.25, x)

    np.testing.assert_allclose(multiplicative_raw(s, 0.25, constant_pilot(c), x), base, rtol=1e-12)
    np.testing.assert_allclose(
        multiplicative_renorm(s, 0.25, constant_pilot(c), constant_pilot(c), x),
        base,
        rtol=1e-12,
    )


def test_multiplicative_raw_matches_three_factor_evaluation():
    s = Sample([-1.0, 1.0])
    fit = fit_normal_mle(s)
    h, x = 0.5, 0.3
    expected = _phi(x) * (_k_h(x + 1.0, h) / _phi(-1.0) + _k_h(x - 1.0, h) / _phi(1.0)) / 2

    assert multiplicative_raw(s, h, fit.pdf, x) == pytest.approx(expected, abs=1e-12)


@pytest.mark.parametrize("bad", [0.0, -1.0, float("nan")])
def test_invalid_pilot_is_rejected(bad):
    s = Sample([-1.0, 0.0, 1.0])

    def pilot(t):
        t = np.asarray(t, dtype=float)
        return np.where(t == 0.0, bad, 1.0)

    with pytest.raises(InvalidPilotError):
        multiplicative_raw(s, 0.5, pilot, np.array([0.5]))


def test_non_positive_renormalising_constant_is_rejected():
    s = Sample([-1.0, 0.0, 1.0])

    with pytest.raises(RenormalisationError):
        multiplicative_renorm(s, 0.5, constant_pilot(1.0), constant_pilot(-1.0), np.array([0.0]))


def test_kde_kind_equals_unit_pilot_on_grid():
    s = mw_density(1).sample(30, np.random.default_rng(4))
    grid = _wide_grid(s, 0.3)

    est = estimate(EstimatorSpec(EstimatorKind.KDE, 0.3), s, grid)

    np.testing.assert_array_equal(est.values, multiplicative_raw(s, 0.3, constant_pilot(1.0), grid.points))


@pytest.mark.parametrize("kind", list(EstimatorKind))
def test_every_kind_matches_direct_transcription(kind):
    h = 0.5
    s = Sample(SMALL_SAMPLE)
    oracle = _BruteForce(SMALL_SAMPLE, h)
    x = np.linspace(s.min - 3 * h, s.max + 3 * h, 20)

    values = evaluate(EstimatorSpec(kind, h), s, x)
    expected = np.array([oracle.value(kind, float(point)) for point in x])

    np.testing.assert_allclose(values, expected, rtol=1e-10, atol=1e-12)


def test_hobskde_pipeline_matches_double_loop_on_grid():
    m = mw_density(1)
    s = m.sample(5, np.random.default_rng(9))
    h = 0.4
    grid = _wide_grid(s, h)
    oracle = _BruteForce(list(s.values), h)

    est = estimate(EstimatorSpec(EstimatorKind.HOBSKDE_RAW, h), s, grid)
    index = np.linspace(0, grid.m - 1, 20).astype(int)
    expected = np.array([oracle.hobskde_raw(float(grid.points[i])) for i in index])

    np.testing.assert_allclose(est.values[index], expected, rtol=1e-10, atol=1e-14)


@pytest.mark.parametrize("kind", list(EstimatorKind))
def test_estimates_are_exchangeable(kind):
    values = mw_density(2).sample(50, np.random.default_rng(6)).values
    shuffled = np.random.default_rng(7).permutation(values)
    grid = _wide_grid(Sample(values), 0.3)
    spec = EstimatorSpec(kind, 0.3)

    np.testing.assert_array_equal(
        estimate(spec, Sample(values), grid).values,
        estimate(spec, Sample(shuffled), grid).values,
    )


@pytest.mark.parametrize("kind", list(EstimatorKind))
def test_affine_equivariance(kind):
    s = mw_density(8).sample(40, np.random.default_rng(8))
    h = 0.3
    grid = _wide_grid(s, h)
    moved_grid = EvaluationGrid(2 * grid.lo + 3, 2 * grid.hi + 3, grid.m)

    base = estimate(EstimatorSpec(kind, h), s, grid).values
    moved = estimate(EstimatorSpec(kind, 2 * h), s.affine(2.0, 3.0), moved_grid).values

    np.testing.assert_allclose(moved, base / 2, rtol=1e-9, atol=1e-13)


def test_estimate_requires_margin():
    s = Sample([-1.0, 0.0, 1.0])
    grid = EvaluationGrid(-2.0, 2.0, 401)

    with pytest.raises(InsufficientSupportError):
        estimate(EstimatorSpec(EstimatorKind.KDE, 0.5), s, grid)


@pytest.mark.parametrize("density_id", MW_IDS)
@pytest.mark.parametrize("n", [100, 500])
@pytest.mark.parametrize("h", [0.1, 0.5])
def test_renormalised_estimators_integrate_to_one(density_id, n, h):
    s = mw_density(density_id).sample(n, np.random.default_rng(density_id * 1000 + n))
    grid = _wide_grid(s, h)

    for kind in RENORMALISED:
        est = estimate(EstimatorSpec(kind, h), s, grid)
        assert est.integral() == pytest.approx(1.0, abs=2e-6), kind
        assert np.all(est.values >= 0)


@pytest.mark.parametrize("density_id", MW_IDS)
def test_raw_semiparametric_mass_is_close_to_one(density_id):
    s = mw_density(density_id).sample(100, np.random.default_rng(density_id))
    h = 0.1 * fit_normal_mle(s).sigma
    grid = _wide_grid(s, h)

    est = estimate(EstimatorSpec(EstimatorKind.HG_RAW, h), s, grid)

    assert abs(est.integral() - 1.0) < 0.05


@pytest.mark.parametrize("density_id", MW_IDS)
def test_raw_semiparametric_mass_at_reference_bandwidth(density_id):
    s = mw_density(density_id).sample(100, np.random.default_rng(density_id))
    fit = fit_normal_mle(s)
    h = fit.sigma * s.n ** (-0.2)
    grid = _wide_grid(s, h)
    # Each term integrates to N(X_i; mu, sigma^2 + h^2) / N(X_i; mu, sigma^2).
    widened = stats.norm.pdf(s.values, fit.mu, math.hypot(fit.sigma, h))
    exact = float(np.mean(widened / stats.norm.pdf(s.values, fit.mu, fit.sigma)))
    z = (s.values - fit.mu) / fit.sigma
    kurtosis = float(np.mean(z**4))

    est = estimate(EstimatorSpec(EstimatorKind.HG_RAW, h), s, grid)

    assert est.integral() == pytest.approx(exact, rel=1e-6)
    assert exact > 0.9
    if kurtosis < 5.0:
        assert abs(exact - 1.0) < 0.05
    else:
        # Heavy tails inflate the mass: the 1/g(X_i) weights blow up away from the fitted mean.
        assert exact > 1.0


@pytest.mark.parametrize("multiple", [10.0, 100.0])
def test_renormalised_mass_at_very_large_bandwidth(multiple):
    s = mw_density(1).sample(100, np.random.default_rng(1))
    h = multiple * s.range

    for kind in RENORMALISED:
        grid = EvaluationGrid.with_spacing(
            s.min - 8 * h, s.max + 8 * h, resolution_scale(kind, s, h) / 4
        )
        est = estimate(EstimatorSpec(kind, h), s, grid)
        assert est.integral() == pytest.approx(1.0, abs=2e-6), kind


def test_resolution_scale_follows_the_fit_for_semiparametric_pilots():
    s = mw_density(1).sample(100, np.random.default_rng(2))
    sigma = fit_normal_mle(s).sigma

    assert resolution_scale(EstimatorKind.HOBSKDE_RENORM, s, 50.0) == sigma
    assert resolution_scale(EstimatorKind.HOBSKDE_RENORM, s, 0.1) == 0.1
    assert resolution_scale(EstimatorKind.JLN_RENORM, s, 50.0) == 50.0
    assert pilot_grid(s, 50.0, sigma).spacing == pytest.approx(sigma / 4, rel=1e-2)
    assert pilot_grid(s, 50.0).spacing < 50.0 / 4


@pytest.mark.parametrize("h", [0.3, 3.0, 30.0])
def test_pilot_convolution_matches_finer_quadrature(h):
    s = mw_density(1).sample(100, np.random.default_rng(3))
    kind = EstimatorKind.HOBSKDE_RENORM
    g = pilot_function(kind, s, h)
    scale = resolution_scale(kind, s, h)

    coarse = tabulated_convolution(s, h, g, scale)(s.values)
    fine = tabulated_convolution(s, h, g, scale / 4)(s.values)

    np.testing.assert_allclose(coarse, fine, rtol=1e-9)


def test_large_bandwidth_renormalised_estimate_is_the_parametric_fit():
    s = mw_density(2).sample(100, np.random.default_rng(12))
    fit = fit_normal_mle(s)
    h = 100 * s.range
    x = np.linspace(fit.mu - 3 * fit.sigma, fit.mu + 3 * fit.sigma, 61)
    target = fit.pdf(x)
    mask = target > 0.01

    values = evaluate(EstimatorSpec(EstimatorKind.HG_RENORM, h), s, x)

    np.testing.assert_allclose(values[mask], target[mask], rtol=0.01)


def test_estimator_kind_parsing_and_symbols():
    assert EstimatorKind.parse("HG") is EstimatorKind.HG_RAW
    assert EstimatorKind.parse("hobskde-renorm") is EstimatorKind.HOBSKDE_RENORM
    assert EstimatorKind.parse(" KDE ") is EstimatorKind.KDE
    assert EstimatorKind.KDE.symbol == "f̂"
    assert EstimatorKind.HOBSKDE_RENORM.symbol == "f̂_{S,N}^R"
    assert EstimatorKind.JLN_RAW not in TABLE_KINDS
    with pytest.raises(ValueError):
        EstimatorKind.parse("bogus")
