"""Tests for detector response models, their widths and sampling."""

from __future__ import annotations

import logging
import math
from pathlib import Path

import numpy as np
import pytest
from scipy import integrate, stats

from pairjitter.errors import ConfigurationError, UndefinedRatioError
from pairjitter.models import (
    FWHM_PER_SIGMA,
    DoubleGaussian,
    GaussExpTail,
    Gaussian,
    component_integrals,
    convolve_with_gaussian,
    evaluate,
    figures_of_merit,
    fwhm,
    gaussian_density,
    gaussian_fwhm,
    half_max_crossings,
    load_model,
    model_from_dict,
    model_to_dict,
    normalize,
    predicted_c12,
    ratio_r,
    sample,
    save_model,
    separation,
    total_weight,
    weight_ratio,
)


def _tail_convolution(sigma: float, tau: float, x: float) -> float:
    """Quadrature of ``∫₀^∞ e^{−s/τ} G(σ, x − s) ds``."""

    def integrand(s: float) -> float:
        return math.exp(-s / tau) * math.exp(-0.5 * ((x - s) / sigma) ** 2) / (sigma * math.sqrt(2 * math.pi))

    upper = max(x, 0.0) + 12.0 * sigma
    points = [x] if 0.0 < x < upper else None
    head, _ = integrate.quad(integrand, 0.0, upper, points=points, epsabs=0.0, epsrel=1e-13, limit=200)
    tail, _ = integrate.quad(integrand, upper, math.inf, epsabs=0.0, epsrel=1e-13, limit=200)
    return head + tail


def test_gaussian_basics() -> None:
    assert gaussian_fwhm(10.0) == pytest.approx(23.548, abs=1e-3)
    assert gaussian_fwhm(15.0) == pytest.approx(35.3, abs=0.05)
    m = Gaussian(mu=5.0, sigma=10.0)
    assert evaluate(m, 5.0) == pytest.approx(1.0 / (10.0 * math.sqrt(2 * math.pi)))
    assert isinstance(evaluate(m, 0.0), float)
    assert evaluate(m, np.array([0.0, 5.0])).shape == (2,)


@pytest.mark.parametrize(
    "factory",
    [
        lambda: Gaussian(0.0, 0.0),
        lambda: GaussExpTail(1.0, 1.0, 0.0, 10.0, -1.0),
        lambda: GaussExpTail(0.0, 0.0, 0.0, 10.0, 5.0),
        lambda: DoubleGaussian(0.0, 1.0, 0.0, 0.0, 1.0, 1.0),
        lambda: Gaussian(math.nan, 1.0),
    ],
)
def test_invalid_parameters_rejected(factory) -> None:  # type: ignore[no-untyped-def]
    with pytest.raises(ConfigurationError):
        factory()


def test_pure_tail_matches_quadrature() -> None:
    m = GaussExpTail(a=0.0, b=1.0, mu=0.0, sigma=20.0, tau=100.0)
    assert evaluate(m, 50.0) == pytest.approx(_tail_convolution(20.0, 100.0, 50.0), rel=1e-9)


def test_closed_form_matches_quadrature_over_random_draws() -> None:
    rng = np.random.default_rng(7)
    for _ in range(200):
        sigma = float(rng.uniform(5.0, 100.0))
        tau = float(rng.uniform(10.0, 500.0))
        x = float(rng.uniform(-3.0 * sigma, 10.0 * tau))
        m = GaussExpTail(a=0.0, b=1.0, mu=0.0, sigma=sigma, tau=tau)
        assert evaluate(m, x) == pytest.approx(_tail_convolution(sigma, tau, x), rel=1e-8)


def test_far_tail_is_finite_and_non_negative() -> None:
    m = GaussExpTail(a=1.0, b=0.5, mu=0.0, sigma=2.0, tau=1000.0)
    values = evaluate(m, np.array([-1e4, -50.0, 0.0, 50.0, 1e5]))
    assert np.all(np.isfinite(values))
    assert np.all(values >= 0.0)


def test_narrow_tail_under_wide_gaussian_stays_finite() -> None:
    m = GaussExpTail(a=0.0, b=1.0, mu=0.0, sigma=1000.0, tau=1.0)
    x = np.linspace(-5000.0, 5000.0, 41)
    values = evaluate(m, x)
    assert np.all(np.isfinite(values))
    # a tail much shorter than the Gaussian only delays it by tau
    delayed = m.tau * gaussian_density(math.hypot(m.sigma, m.tau), x - m.tau)
    np.testing.assert_allclose(values, delayed, rtol=1e-5)
    far = evaluate(m, np.array([-1e7, 1e7]))
    assert np.all(np.isfinite(far))
    assert np.all(far >= 0.0)


@pytest.mark.parametrize(
    "model",
    [
        Gaussian(10.0, 20.0),
        GaussExpTail(0.7, 0.002, 0.0, 25.0, 150.0),
        DoubleGaussian(0.6, 0.4, 0.0, 120.0, 40.0, 70.0),
    ],
)
def test_response_integrates_to_total_weight(model) -> None:  # type: ignore[no-untyped-def]
    value, _ = integrate.quad(lambda t: evaluate(model, t), -2000.0, 4000.0, limit=400, points=[0.0, 120.0])
    assert value == pytest.approx(total_weight(model), rel=1e-6)
    assert total_weight(normalize(model)) == pytest.approx(1.0)


def test_convolution_widens_in_quadrature() -> None:
    widened = convolve_with_gaussian(Gaussian(3.0, 16.7), 16.7)
    assert isinstance(widened, Gaussian)
    assert widened.sigma == pytest.approx(16.7 * math.sqrt(2))
    assert widened.mu == 3.0
    assert convolve_with_gaussian(Gaussian(0.0, 5.0), 0.0) == Gaussian(0.0, 5.0)


def test_tail_convolution_matches_numerical_convolution() -> None:
    m = GaussExpTail(a=0.4, b=0.004, mu=10.0, sigma=30.0, tau=150.0)
    sigma_ref = 17.0
    closed = convolve_with_gaussian(m, sigma_ref)
    for t in np.linspace(-50.0, 1200.0, 25):
        numeric, _ = integrate.quad(
            lambda u: evaluate(m, float(t) - u) * float(gaussian_density(sigma_ref, u)),
            -12.0 * sigma_ref,
            12.0 * sigma_ref,
            epsabs=0.0,
            epsrel=1e-12,
            limit=200,
        )
        assert evaluate(closed, float(t)) == pytest.approx(numeric, rel=1e-8)


def _numerical_convolution(model, sigma_ref: float, t: float) -> float:  # type: ignore[no-untyped-def]
    value, _ = integrate.quad(
        lambda u: evaluate(model, t - u) * float(gaussian_density(sigma_ref, u)),
        -12.0 * sigma_ref,
        12.0 * sigma_ref,
        epsabs=0.0,
        epsrel=1e-12,
        limit=200,
    )
    return value


def test_double_gaussian_convolution_matches_numerical_convolution() -> None:
    m = DoubleGaussian(a=0.9, b=0.1, mu1=0.0, mu2=250.0, sigma1=83.23, sigma2=60.0)
    closed = convolve_with_gaussian(m, 17.0)
    assert isinstance(closed, DoubleGaussian)
    assert (closed.a, closed.b, closed.mu1, closed.mu2) == (m.a, m.b, m.mu1, m.mu2)
    for t in np.linspace(-400.0, 600.0, 21):
        numeric = _numerical_convolution(m, 17.0, float(t))
        assert evaluate(closed, float(t)) == pytest.approx(numeric, rel=1e-8)


def test_convolution_closed_over_random_parameters() -> None:
    rng = np.random.default_rng(29)
    for _ in range(12):
        sigma_ref = float(rng.uniform(5.0, 40.0))
        models = [
            Gaussian(float(rng.uniform(-50.0, 50.0)), float(rng.uniform(5.0, 80.0))),
            GaussExpTail(
                a=float(rng.uniform(0.0, 1.0)),
                b=float(rng.uniform(1e-4, 1e-2)),
                mu=float(rng.uniform(-50.0, 50.0)),
                sigma=float(rng.uniform(5.0, 80.0)),
                tau=float(rng.uniform(20.0, 400.0)),
            ),
            DoubleGaussian(
                a=float(rng.uniform(0.1, 1.0)),
                b=float(rng.uniform(0.0, 1.0)),
                mu1=float(rng.uniform(-50.0, 50.0)),
                mu2=float(rng.uniform(-300.0, 300.0)),
                sigma1=float(rng.uniform(5.0, 80.0)),
                sigma2=float(rng.uniform(5.0, 80.0)),
            ),
        ]
        for m in models:
            closed = convolve_with_gaussian(m, sigma_ref)
            assert type(closed) is type(m)
            assert total_weight(closed) == pytest.approx(total_weight(m))
            centre = m.mu1 if isinstance(m, DoubleGaussian) else m.mu
            spread = math.hypot(m.sigma1 if isinstance(m, DoubleGaussian) else m.sigma, sigma_ref)
            for k in (-1.5, 0.0, 1.5):
                t = centre + k * spread
                assert evaluate(closed, t) == pytest.approx(_numerical_convolution(m, sigma_ref, t), rel=1e-7)


def test_predicted_counts_integrate_to_pairs() -> None:
    t = np.arange(-2000.0, 2000.0, 2.0) + 1.0
    counts = predicted_c12(Gaussian(0.0, 16.7), 16.7, 1e5, 3.0, 2.0, t)
    assert (counts - 3.0).sum() == pytest.approx(1e5, rel=1e-3)
    assert counts.min() == pytest.approx(3.0)


def test_predicted_counts_match_quadrature_shape() -> None:
    sigma12 = 23.6
    sigma = sigma12 / math.sqrt(2)
    t = np.linspace(-100.0, 100.0, 41)
    counts = predicted_c12(Gaussian(0.0, sigma), sigma, 1e5, 0.2, 2.0, t)
    for ti, ci in zip(t, counts):
        numeric, _ = integrate.quad(
            lambda u: float(gaussian_density(sigma, ti - u)) * float(gaussian_density(sigma, u)),
            -300.0,
            300.0,
            points=[ti / 2.0],
            epsabs=0.0,
            epsrel=1e-12,
            limit=200,
        )
        assert ci == pytest.approx(1e5 * 2.0 * numeric + 0.2, rel=1e-8)


def test_predicted_counts_normalize_composite_models() -> None:
    t = np.linspace(-200.0, 200.0, 11)
    small = DoubleGaussian(0.2, 0.1, 0.0, 40.0, 20.0, 30.0)
    large = DoubleGaussian(2.0, 1.0, 0.0, 40.0, 20.0, 30.0)
    np.testing.assert_allclose(predicted_c12(small, 5.0, 1e4, 1.0, 2.0, t), predicted_c12(large, 5.0, 1e4, 1.0, 2.0, t))


def test_fwhm_gaussian_is_exact() -> None:
    assert fwhm(Gaussian(0.0, 10.0)) == pytest.approx(FWHM_PER_SIGMA * 10.0, rel=1e-12)


def test_fwhm_tail_matches_dense_grid() -> None:
    m = GaussExpTail(a=1.0, b=0.01, mu=0.0, sigma=20.0, tau=300.0)
    grid = np.arange(-300.0, 600.0, 0.001)
    values = evaluate(m, grid)
    half = 0.5 * values.max()
    above = np.flatnonzero(values >= half)
    assert fwhm(m) == pytest.approx(grid[above[-1]] - grid[above[0]], abs=0.01)


def test_fwhm_tail_exceeds_gaussian_core() -> None:
    m = GaussExpTail(a=0.5, b=0.005, mu=0.0, sigma=20.0, tau=100.0)
    assert fwhm(m) > gaussian_fwhm(20.0)


def test_multimodal_response_uses_outer_crossings(caplog: pytest.LogCaptureFixture) -> None:
    m = DoubleGaussian(1.0, 1.0, 0.0, 200.0, 10.0, 10.0)
    with caplog.at_level(logging.WARNING, logger="pairjitter.models"):
        crossings = half_max_crossings(m)
    assert crossings.multimodal
    assert crossings.width == pytest.approx(200.0 + gaussian_fwhm(10.0), abs=1e-3)
    assert "multimodal" in caplog.text


def test_ratio_r_and_undefined_case() -> None:
    m = GaussExpTail(a=0.5, b=0.005, mu=0.0, sigma=80.0, tau=100.0)
    assert ratio_r(m) == pytest.approx(1.0)
    assert component_integrals(m) == pytest.approx((0.5, 0.5))
    assert ratio_r(GaussExpTail(a=0.0, b=0.01, mu=0.0, sigma=80.0, tau=100.0)) == 0.0
    with pytest.raises(UndefinedRatioError):
        ratio_r(GaussExpTail(a=1.0, b=0.0, mu=0.0, sigma=80.0, tau=100.0))
    with pytest.raises(TypeError):
        ratio_r(Gaussian(0.0, 1.0))  # type: ignore[arg-type]


def test_double_gaussian_figures() -> None:
    m = DoubleGaussian(0.9, 0.1, 0.0, 250.0, 83.23, 60.0)
    assert weight_ratio(m) == pytest.approx(9.0)
    assert separation(m) == -250.0
    merit = figures_of_merit(m)
    assert merit.fwhm_ps == pytest.approx(196.9, abs=0.05)
    assert merit.ratio_r == pytest.approx(9.0)
    assert merit.separation_ps == -250.0
    assert not merit.multimodal


def test_symmetric_double_gaussian_sample_mean(rng: np.random.Generator) -> None:
    m = DoubleGaussian(1.0, 1.0, -50.0, 50.0, 20.0, 20.0)
    draws = sample(m, rng, 200_000)
    assert abs(draws.mean()) < 5 * draws.std() / math.sqrt(draws.size)


def test_sample_scalar_and_consumption_independent_of_parameters() -> None:
    first = np.random.default_rng(1)
    second = np.random.default_rng(1)
    assert isinstance(sample(GaussExpTail(1.0, 0.01, 0.0, 10.0, 50.0), first), float)
    sample(GaussExpTail(1.0, 0.0, 5.0, 30.0, 500.0), second)
    assert first.random() == second.random()


def test_tail_samples_follow_density() -> None:
    m = GaussExpTail(a=1.0, b=0.02, mu=0.0, sigma=30.0, tau=500.0)
    draws = sample(m, np.random.default_rng(11), 1_000_000)
    edges = np.arange(-90.0, 2510.0, 25.0)
    observed, _ = np.histogram(draws, edges)
    shape = normalize(m)
    fine = np.arange(edges[0], edges[-1], 0.5) + 0.25
    density = evaluate(shape, fine) * 0.5
    probabilities = density.reshape(observed.size, -1).sum(axis=1)
    expected = observed.sum() * probabilities / probabilities.sum()
    _, p_value = stats.chisquare(observed, expected)
    assert p_value > 0.01


def test_tailless_samples_match_density_cdf() -> None:
    m = GaussExpTail(a=1.0, b=0.0, mu=12.0, sigma=40.0, tau=300.0)
    draws = sample(m, np.random.default_rng(17), 200_000)
    grid = np.linspace(m.mu - 10.0 * m.sigma, m.mu + 10.0 * m.sigma, 20_001)
    cdf = integrate.cumulative_trapezoid(evaluate(m, grid), grid, initial=0.0)
    _, p_value = stats.kstest(draws, lambda x: np.interp(x, grid, cdf, left=0.0, right=1.0))
    assert p_value > 0.01


def test_model_dict_round_trip_and_validation(tmp_path: Path) -> None:
    m = GaussExpTail(a=0.5, b=0.005, mu=1.0, sigma=80.0, tau=100.0)
    data = model_to_dict(m)
    assert data == {
        "family": "gauss-exp",
        "parameters": {"a": 0.5, "b": 0.005, "mu": 1.0, "sigma": 80.0, "tau": 100.0},
    }
    assert load_model(save_model(m, tmp_path / "m.json")) == m
    with pytest.raises(ConfigurationError):
        model_from_dict({"family": "lorentz", "parameters": {}})
    with pytest.raises(ConfigurationError):
        model_from_dict({"family": "gauss", "parameters": {"mu": 0.0}})
