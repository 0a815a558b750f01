import math

import numpy as np
import pytest
from scipy import integrate, stats

from bias_corrected_kde.densities import (
    MW_IDS,
    MW_LABELS,
    NormalMixture,
    catalog,
    lookup_density,
    mixture_pdf,
    mixture_sample,
    moment_matched_normal,
    mw_density,
)
from bias_corrected_kde.errors import EmptySampleError, InvalidDensityError, UnknownDensityError


def test_catalog_has_ten_labelled_densities():
    assert MW_IDS == tuple(range(1, 11))
    assert MW_LABELS[0] == "Gaussian"
    assert MW_LABELS[4] == "Outlier"
    assert MW_LABELS[9] == "Claw"
    assert [m.label for m in catalog()] == list(MW_LABELS)


@pytest.mark.parametrize("density_id", MW_IDS)
def test_every_density_integrates_to_one(density_id):
    m = mw_density(density_id)
    lo, hi = m.effective_support
    x = np.linspace(lo, hi, 200_001)

    assert integrate.trapezoid(m.pdf(x), x) == pytest.approx(1.0, abs=1e-8)
    assert float(m.cdf(hi) - m.cdf(lo)) == pytest.approx(1.0, abs=1e-12)


@pytest.mark.parametrize("density_id", MW_IDS)
def test_cdf_is_integral_of_pdf(density_id):
    m = mw_density(density_id)
    total, _ = integrate.quad(lambda t: float(m.pdf(t)), m.effective_support[0], 0.3, limit=200)

    assert float(m.cdf(0.3)) == pytest.approx(total, abs=1e-7)


def test_gaussian_matches_scipy():
    x = np.linspace(-5, 5, 51)

    np.testing.assert_allclose(mixture_pdf(mw_density(1), x), stats.norm.pdf(x), rtol=1e-14)


def test_kurtotic_unimodal_value_at_zero():
    expected = (2 / 3) * stats.norm.pdf(0.0) + (1 / 3) * stats.norm.pdf(0.0, scale=0.1)

    assert float(mw_density(4).pdf(0.0)) == pytest.approx(expected, rel=1e-14)


def test_weights_must_sum_to_one():
    with pytest.raises(InvalidDensityError):
        NormalMixture.from_triples([(0.5, 0.0, 1.0), (0.4, 1.0, 1.0)])


@pytest.mark.parametrize("triple", [(1.0, 0.0, 0.0), (1.0, 0.0, -1.0), (1.0, float("nan"), 1.0), (0.0, 0.0, 1.0)])
def test_invalid_component_is_rejected(triple):
    with pytest.raises(InvalidDensityError):
        NormalMixture.from_triples([triple])


def test_unknown_id_lists_the_labels():
    with pytest.raises(UnknownDensityError) as excinfo:
        mw_density(11)

    assert "Claw" in str(excinfo.value)
    assert "Gaussian" in str(excinfo.value)


@pytest.mark.parametrize(
    "key, expected",
    [
        (1, 1),
        ("1", 1),
        ("Gaussian", 1),
        ("gaussian", 1),
        ("skewed unimodal", 2),
        ("Separated_Bimodal", 7),
        ("  kurtotic-unimodal ", 4),
        ("10", 10),
    ],
)
def test_lookup_by_id_or_label(key, expected):
    assert lookup_density(key) == mw_density(expected)


@pytest.mark.parametrize("key", [0, 99, "99", "Gausian", ""])
def test_lookup_rejects_unknown_keys(key):
    with pytest.raises(UnknownDensityError):
        lookup_density(key)


def test_moments_match_quadrature():
    m = mw_density(2)
    lo, hi = m.effective_support
    mean, _ = integrate.quad(lambda t: t * float(m.pdf(t)), lo, hi)
    second, _ = integrate.quad(lambda t: t * t * float(m.pdf(t)), lo, hi)

    assert m.mean == pytest.approx(mean, abs=1e-8)
    assert m.variance == pytest.approx(second - mean**2, abs=1e-8)

    fit = moment_matched_normal(m)
    assert fit.mu == m.mean
    assert fit.sigma == pytest.approx(math.sqrt(m.variance))


def test_affine_transform_of_density():
    m = mw_density(6)
    moved = m.affine(2.0, 1.0)
    x = np.linspace(-6, 6, 25)

    np.testing.assert_allclose(moved.pdf(x), m.pdf((x - 1.0) / 2.0) / 2.0, rtol=1e-13)
    with pytest.raises(InvalidDensityError):
        m.affine(-1.0, 0.0)


def test_sampling_is_reproducible():
    m = mw_density(3)

    first = mixture_sample(m, 50, np.random.default_rng(11))
    second = mixture_sample(m, 50, np.random.default_rng(11))

    assert first.n == 50
    np.testing.assert_array_equal(first.values, second.values)


def test_sample_moments_and_distribution():
    m = mw_density(8)
    s = m.sample(100_000, np.random.default_rng(2024))

    se_mean = math.sqrt(m.variance / s.n)
    assert abs(float(np.mean(s.values)) - m.mean) < 5 * se_mean
    assert float(np.var(s.values)) == pytest.approx(m.variance, rel=0.03)
    assert stats.kstest(s.values, m.cdf).pvalue > 1e-4


def test_sample_size_must_be_positive():
    with pytest.raises(EmptySampleError):
        mixture_sample(mw_density(1), 0, np.random.default_rng(0))


def _equal_probability_edges(m, bins):
    lo, hi = m.effective_support
    x = np.linspace(lo, hi, 400_001)
    return np.interp(np.linspace(0.0, 1.0, bins + 1)[1:-1], m.cdf(x), x)


@pytest.mark.parametrize("density_id", MW_IDS)
def test_sampling_passes_chi_square_on_equal_probability_bins(density_id):
    m = mw_density(density_id)
    s = m.sample(100_000, np.random.default_rng(500 + density_id))
    edges = _equal_probability_edges(m, 50)

    observed = np.bincount(np.searchsorted(edges, s.values), minlength=50)
    cumulative = np.concatenate(([0.0], m.cdf(edges), [1.0]))
    expected = s.n * np.diff(cumulative)

    assert observed.sum() == s.n
    assert stats.chisquare(observed, expected).pvalue > 1e-3


def test_separated_bimodal_mass_below_the_midpoint():
    m = mw_density(7)
    midpoint = 0.5 * (m.means[0] + m.means[1])

    s = m.sample(1_000_000, np.random.default_rng(77))

    assert midpoint == 0.0
    assert float(np.mean(s.values < midpoint)) == pytest.approx(float(m.cdf(midpoint)), abs=0.005)


def test_bimodal_value_at_zero():
    expected = 0.5 * stats.norm.pdf(0.0, -1.0, 2 / 3) + 0.5 * stats.norm.pdf(0.0, 1.0, 2 / 3)

    assert float(mw_density(6).pdf(0.0)) == pytest.approx(expected, rel=1e-14)
    assert expected == pytest.approx(1.5 * stats.norm.pdf(1.5), rel=1e-14)
