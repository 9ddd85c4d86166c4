"""Histogram fits, reference-jitter subtraction and the characterization pipeline.

Fits vary the pair count ``N``, the accidental floor ``C0`` and the shape of
the device-under-test response. The reference detector enters only through a
fixed Gaussian width ``sigma_ref`` folded in by
:func:`~pairjitter.models.convolve_with_gaussian`. Because the response is
normalized inside :func:`~pairjitter.models.predicted_c12`, composite models
are parameterized by a Gaussian share ``w`` in ``[0, 1]``:

``gauss``         ``N, C0, mu, sigma``
``gauss-exp``     ``N, C0, mu, sigma, tau, w`` with ``A = w``, ``B = (1 − w)/tau``
``double-gauss``  ``N, C0, mu1, sigma1, mu2, sigma2, w`` with ``A = w``, ``B = 1 − w``
"""

from __future__ import annotations

import logging
import math
import re
from collections.abc import Callable, Mapping, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Final, Optional, TypeVar, Union

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .config import HistogramConfig
from .correlation import (
    CorrelationHistogram,
    G2Result,
    cross_correlation,
    default_sidebands,
    normalize_g2,
    sideband_mask,
)
from .errors import (
    ConfigurationError,
    DegenerateFitError,
    DomainError,
    NoPeakError,
    PairJitterError,
    StageError,
)
from .lm import (
    LMResult,
    covariance_matrix,
    finite_difference_jacobian,
    levenberg_marquardt,
    null_combination,
)
from .models import (
    FWHM_PER_SIGMA,
    DoubleGaussian,
    FigureOfMerit,
    GaussExpTail,
    Gaussian,
    ResponseModel,
    figures_of_merit,
    fwhm,
    gaussian_density,
    model_to_dict,
    predicted_c12,
)
from .timetag_io import TimeTagStream

logger = logging.getLogger(__name__)

__all__ = [
    "FAMILY_PARAMETERS",
    "FIT_WINDOW_SIGMAS",
    "PEAK_SIGNIFICANCE",
    "WEIGHTINGS",
    "JitterValue",
    "InitialGuess",
    "FitResult",
    "CharacterizationJob",
    "CharacterizationReport",
    "parse_uncertain",
    "subtract_reference",
    "model_from_vector",
    "vector_from_model",
    "initial_guess",
    "default_fit_mask",
    "fit_jacobian",
    "fit_counts",
    "fit_histogram",
    "characterize",
    "characterize_batch",
    "fit_result_to_dict",
    "report_to_dict",
]

FAMILY_PARAMETERS: Final[dict[str, tuple[str, ...]]] = {
    "gauss": ("N", "C0", "mu", "sigma"),
    "gauss-exp": ("N", "C0", "mu", "sigma", "tau", "w"),
    "double-gauss": ("N", "C0", "mu1", "sigma1", "mu2", "sigma2", "w"),
}
FIT_WINDOW_SIGMAS: Final = 8.0
PEAK_SIGNIFICANCE: Final = 5.0
WEIGHTINGS: Final = ("counts", "poisson")
_MIN_BINS_PER_PARAMETER: Final = 3
# lower bound on the expected count used as a Poisson weight
_MIN_EXPECTED_COUNTS: Final = 0.1
_REWEIGHT_PASSES: Final = 8
_REWEIGHT_RTOL: Final = 1e-6

T = TypeVar("T")


# --------------------------------------------------------------------------- #
# Jitter arithmetic
# --------------------------------------------------------------------------- #


@dataclass(frozen=True)
class JitterValue:
    """Gaussian timing jitter ``sigma ± error`` in ps."""

    sigma: float
    error: float = 0.0
    wavelength_nm: Optional[float] = None

    def __post_init__(self) -> None:
        if not (math.isfinite(self.sigma) and self.sigma > 0):
            raise ConfigurationError(f"Jitter sigma must be positive, got {self.sigma!r}.")
        if not (math.isfinite(self.error) and self.error >= 0):
            raise ConfigurationError(f"Jitter uncertainty must be non-negative, got {self.error!r}.")

    @property
    def fwhm(self) -> float:
        return FWHM_PER_SIGMA * self.sigma

    @property
    def fwhm_error(self) -> float:
        return FWHM_PER_SIGMA * self.error

    def to_dict(self) -> dict[str, Any]:
        return {
            "sigma_ps": self.sigma,
            "sigma_error_ps": self.error,
            "fwhm_ps": self.fwhm,
            "fwhm_error_ps": self.fwhm_error,
            "wavelength_nm": self.wavelength_nm,
        }


_PARENTHESES = re.compile(r"^\s*([+-]?\d+(?:\.(\d*))?)\((\d+)\)\s*$")


def parse_uncertain(text: str, wavelength_nm: Optional[float] = None) -> JitterValue:
    """Parse ``"23.8,0.2"``, ``"23.8(2)"`` or a bare ``"23.8"`` into a :class:`JitterValue`."""

    match = _PARENTHESES.match(text)
    try:
        if match:
            value = float(match.group(1))
            decimals = len(match.group(2) or "")
            error = int(match.group(3)) * 10.0 ** (-decimals)
        else:
            parts = [part.strip() for part in text.split(",")]
            if len(parts) > 2 or not parts[0]:
                raise ValueError(text)
            value = float(parts[0])
            error = float(parts[1]) if len(parts) == 2 else 0.0
    except ValueError as exc:
        if isinstance(exc, ConfigurationError):
            raise
        raise ConfigurationError(f"Expected 'value,error' or 'value(err)', got {text!r}.") from exc
    return JitterValue(value, error, wavelength_nm)


def subtract_reference(combined: JitterValue, reference: JitterValue) -> JitterValue:
    """Remove a reference detector's jitter in quadrature.

    ``σ₂ = √(σ₁₂² − σ_ref²)`` with first-order uncertainty
    ``δσ₂ = √((σ₁₂·δσ₁₂)² + (σ_ref·δσ_ref)²) / σ₂``.

    Raises:
        DomainError: If the reference is at least as wide as the combined width.
    """

    if combined.sigma <= reference.sigma:
        raise DomainError(
            f"unphysical subtraction: reference jitter {reference.sigma:g} ps exceeds "
            f"the combined width {combined.sigma:g} ps"
        )
    # (a − b)(a + b) keeps precision when the widths are close
    sigma = math.sqrt((combined.sigma - reference.sigma) * (combined.sigma + reference.sigma))
    error = math.hypot(combined.sigma * combined.error, reference.sigma * reference.error) / sigma
    return JitterValue(sigma, error, combined.wavelength_nm)


# --------------------------------------------------------------------------- #
# Parameter vectors
# --------------------------------------------------------------------------- #


def _names(family: str) -> tuple[str, ...]:
    try:
        return FAMILY_PARAMETERS[family]
    except KeyError:
        raise ConfigurationError(
            f"Unknown model family {family!r}; expected one of {sorted(FAMILY_PARAMETERS)}."
        ) from None


def model_from_vector(family: str, x: Sequence[float]) -> ResponseModel:
    """Normalized response for a fit vector; invalid shapes raise ConfigurationError."""

    _names(family)
    if family == "gauss":
        return Gaussian(mu=float(x[2]), sigma=float(x[3]))
    if family == "gauss-exp":
        mu, sigma, tau, w = (float(v) for v in x[2:6])
        if not 0.0 <= w <= 1.0:
            raise ConfigurationError(f"Gaussian share w={w} is outside [0, 1].")
        if not tau > 0:
            raise ConfigurationError(f"tau must be positive, got {tau}.")
        return GaussExpTail(a=w, b=(1.0 - w) / tau, mu=mu, sigma=sigma, tau=tau)
    mu1, sigma1, mu2, sigma2, w = (float(v) for v in x[2:7])
    if not 0.0 < w <= 1.0:
        raise ConfigurationError(f"Gaussian share w={w} is outside (0, 1].")
    return DoubleGaussian(a=w, b=1.0 - w, mu1=mu1, mu2=mu2, sigma1=sigma1, sigma2=sigma2)


def vector_from_model(model: ResponseModel, n_pairs: float, floor: float) -> NDArray[np.float64]:
    """Fit vector equivalent to ``model`` (any weight normalization)."""

    if isinstance(model, Gaussian):
        return np.array([n_pairs, floor, model.mu, model.sigma])
    if isinstance(model, GaussExpTail):
        w = model.a / (model.a + model.b * model.tau)
        return np.array([n_pairs, floor, model.mu, model.sigma, model.tau, w])
    w = model.a / (model.a + model.b)
    return np.array([n_pairs, floor, model.mu1, model.sigma1, model.mu2, model.sigma2, w])


# --------------------------------------------------------------------------- #
# Initial guess
# --------------------------------------------------------------------------- #


@dataclass(frozen=True)
class InitialGuess:
    """Moment-based starting point for a fit."""

    family: str
    parameters: dict[str, float]
    sigma_total: float
    clamped: bool = False

    def vector(self) -> NDArray[np.float64]:
        return np.array([self.parameters[name] for name in _names(self.family)], dtype=float)


def _half_max_span(excess: NDArray[np.float64], peak: int) -> tuple[int, int]:
    half = 0.5 * excess[peak]
    above = excess >= half
    left = peak
    while left > 0 and above[left - 1]:
        left -= 1
    right = peak
    while right < excess.size - 1 and above[right + 1]:
        right += 1
    return left, right


def _tail_time_constant(
    centers: NDArray[np.float64],
    excess: NDArray[np.float64],
    start: float,
    floor: float,
    fallback: float,
) -> float:
    threshold = max(3.0 * math.sqrt(max(floor, 1.0)), 0.02 * float(excess.max()))
    idx = np.flatnonzero(centers >= start)
    usable: list[int] = []
    for i in idx:
        if excess[i] <= threshold:
            break
        usable.append(int(i))
    if len(usable) < 3:
        return fallback
    slope, _ = np.polyfit(centers[usable], np.log(excess[usable]), 1)
    return -1.0 / slope if slope < 0 else fallback


def _secondary_shoulder(
    centers: NDArray[np.float64], excess: NDArray[np.float64], peak: int, min_gap: float
) -> Optional[float]:
    width = max(3, int(round(min_gap / max(centers[1] - centers[0], 1e-12) / 2)))
    kernel = np.ones(width) / width
    smooth = np.convolve(excess, kernel, mode="same")
    interior = np.arange(1, smooth.size - 1)
    maxima = interior[(smooth[interior] > smooth[interior - 1]) & (smooth[interior] >= smooth[interior + 1])]
    candidates = [
        int(i)
        for i in maxima
        if abs(centers[i] - centers[peak]) > min_gap and smooth[i] >= 0.1 * smooth[peak]
    ]
    if not candidates:
        return None
    best = max(candidates, key=lambda i: smooth[i])
    return float(centers[best])


def initial_guess(
    h: CorrelationHistogram,
    family: str,
    *,
    sigma_ref: float = 0.0,
    sidebands: Optional[Sequence[tuple[float, float]]] = None,
) -> InitialGuess:
    """Starting parameters from the histogram's moments.

    ``C0`` is the sideband median, ``mu`` the peak bin, the total width comes
    from the half-maximum span and ``sigma_ref`` is removed from it in
    quadrature. ``N`` is the background-subtracted sum.

    Raises:
        NoPeakError: If the highest bin is not ``5√C0`` above the floor.
    """

    _names(family)
    counts = h.counts.astype(float)
    centers = h.centers
    width = float(h.bin_width_ps)
    mask = sideband_mask(h, sidebands if sidebands is not None else default_sidebands(h))
    floor = float(np.median(counts[mask])) if mask.any() else float(np.median(counts))
    peak = int(np.argmax(counts))
    top = float(counts[peak])
    if top <= floor + PEAK_SIGNIFICANCE * math.sqrt(floor):
        raise NoPeakError(
            f"No coincidence peak above the accidental floor (max {top:g} vs floor {floor:g}); "
            "acquire longer to build up a discernible peak."
        )
    excess = counts - floor
    left, right = _half_max_span(excess, peak)
    sigma_total = max((right - left + 1) * width / FWHM_PER_SIGMA, 0.5 * width)
    sigma = math.sqrt(max(sigma_total**2 - sigma_ref**2, (0.5 * width) ** 2, (0.1 * sigma_total) ** 2))

    mu = float(centers[peak])
    clamped = peak in (0, h.n_bins - 1)
    if clamped:
        mu = float(np.clip(mu, centers[1], centers[-2]))
        logger.warning("Coincidence peak sits at the window edge; mu clamped to %.1f ps.", mu)
    n_pairs = max(float(excess.sum()), float(excess[peak]) * width)

    params: dict[str, float] = {"N": n_pairs, "C0": max(floor, 0.0)}
    if family == "gauss":
        params.update(mu=mu, sigma=sigma)
    elif family == "gauss-exp":
        span = float(h.window_ps[1] - h.window_ps[0])
        tau = _tail_time_constant(centers, excess, mu + 2.0 * sigma_total, floor, 2.0 * sigma_total)
        params.update(mu=mu, sigma=sigma, tau=float(np.clip(tau, width, span)), w=0.5)
    else:
        shoulder = _secondary_shoulder(centers, excess, peak, 2.0 * sigma_total)
        mu2 = shoulder if shoulder is not None else mu + 2.0 * sigma
        params.update(mu1=mu, sigma1=sigma, mu2=mu2, sigma2=sigma, w=0.9)
    logger.debug("Initial guess for %s: %s", family, params)
    return InitialGuess(family=family, parameters=params, sigma_total=sigma_total, clamped=clamped)


def default_fit_mask(
    h: CorrelationHistogram,
    guess: InitialGuess,
    sidebands: Optional[Sequence[tuple[float, float]]] = None,
) -> NDArray[np.bool_]:
    """Peak ± 8σ (plus 8τ on the right for tails) together with the sidebands."""

    centers = h.centers
    p = guess.parameters
    reach = FIT_WINDOW_SIGMAS * guess.sigma_total
    if guess.family == "double-gauss":
        lo = min(p["mu1"], p["mu2"]) - reach
        hi = max(p["mu1"], p["mu2"]) + reach
    else:
        lo = p["mu"] - reach
        hi = p["mu"] + reach
        if guess.family == "gauss-exp":
            hi += FIT_WINDOW_SIGMAS * p["tau"]
    mask = (centers >= lo) & (centers <= hi)
    return mask | sideband_mask(h, sidebands if sidebands is not None else default_sidebands(h))


# --------------------------------------------------------------------------- #
# Fitting
# --------------------------------------------------------------------------- #


@dataclass(frozen=True, eq=False)
class FitResult:
    """Best-fit parameters, uncertainties and diagnostics of one histogram fit."""

    family: str
    names: tuple[str, ...]
    values: NDArray[np.float64]
    errors: NDArray[np.float64]
    covariance: NDArray[np.float64]
    model: ResponseModel
    sigma_ref: float
    reduced_chi_square: float
    n_bins: int
    iterations: int
    converged: bool
    message: str
    derived: dict[str, tuple[float, float]] = field(default_factory=dict)
    figures: Optional[FigureOfMerit] = None
    cost_history: tuple[float, ...] = ()

    def value(self, name: str) -> float:
        return float(self.values[self.names.index(name)])

    def error(self, name: str) -> float:
        return float(self.errors[self.names.index(name)])

    @property
    def parameters(self) -> dict[str, float]:
        return {name: float(v) for name, v in zip(self.names, self.values)}

    @property
    def n_pairs(self) -> float:
        return self.value("N")

    @property
    def floor(self) -> float:
        return self.value("C0")


def _weights(counts: NDArray[np.float64]) -> NDArray[np.float64]:
    return np.sqrt(np.maximum(counts, 1.0))


def _gaussian_jacobian(
    x: NDArray[np.float64],
    centers: NDArray[np.float64],
    bin_width: float,
    sigma_ref: float,
    sqrt_w: NDArray[np.float64],
) -> NDArray[np.float64]:
    n_pairs, _, mu, sigma = x
    s = math.hypot(sigma, sigma_ref)
    dt = centers - mu
    g = gaussian_density(s, dt)
    peak = n_pairs * bin_width * g
    d_pred = np.column_stack(
        [
            bin_width * g,
            np.ones_like(centers),
            peak * dt / s**2,
            peak * (dt**2 / s**2 - 1.0) / s * (sigma / s),
        ]
    )
    return -d_pred / sqrt_w[:, None]


def _typical_scales(family: str, x: NDArray[np.float64], bin_width: float) -> NDArray[np.float64]:
    scales = []
    for name, value in zip(_names(family), x):
        if name in ("N", "C0"):
            scales.append(max(abs(value), 1.0))
        elif name == "w":
            scales.append(0.01)
        else:
            scales.append(bin_width)
    return np.asarray(scales)


def fit_jacobian(
    family: str,
    x: Sequence[float],
    centers: ArrayLike,
    counts: ArrayLike,
    bin_width: float,
    sigma_ref: float = 0.0,
) -> NDArray[np.float64]:
    """Jacobian of the weighted residuals used by the fit.

    Analytic for the Gaussian family, central differences otherwise.
    """

    vector = np.asarray(x, dtype=float)
    t = np.asarray(centers, dtype=float)
    c = np.asarray(counts, dtype=float)
    sqrt_w = _weights(c)
    if family == "gauss":
        return _gaussian_jacobian(vector, t, bin_width, sigma_ref, sqrt_w)
    residual = _residual_function(family, t, c, bin_width, sigma_ref)
    return finite_difference_jacobian(residual, vector, _typical_scales(family, vector, bin_width))


def _residual_function(
    family: str,
    centers: NDArray[np.float64],
    counts: NDArray[np.float64],
    bin_width: float,
    sigma_ref: float,
    sqrt_w: Optional[NDArray[np.float64]] = None,
) -> Callable[[NDArray[np.float64]], NDArray[np.float64]]:
    weights = _weights(counts) if sqrt_w is None else sqrt_w

    def residual(x: NDArray[np.float64]) -> NDArray[np.float64]:
        model = model_from_vector(family, x)
        predicted = predicted_c12(model, sigma_ref, x[0], x[1], bin_width, centers)
        return (counts - predicted) / weights

    return residual


def _model_weights(
    family: str,
    x: NDArray[np.float64],
    centers: NDArray[np.float64],
    bin_width: float,
    sigma_ref: float,
) -> NDArray[np.float64]:
    expected = predicted_c12(model_from_vector(family, x), sigma_ref, x[0], x[1], bin_width, centers)
    return np.sqrt(np.maximum(expected, _MIN_EXPECTED_COUNTS))


def _solve(
    family: str,
    centers: NDArray[np.float64],
    counts: NDArray[np.float64],
    bin_width: float,
    sigma_ref: float,
    x0: NDArray[np.float64],
    sqrt_w: NDArray[np.float64],
    max_iterations: int,
) -> LMResult:
    residual = _residual_function(family, centers, counts, bin_width, sigma_ref, sqrt_w)
    jac: Optional[Callable[[NDArray[np.float64]], NDArray[np.float64]]] = None
    if family == "gauss":

        def jac(x: NDArray[np.float64]) -> NDArray[np.float64]:
            return _gaussian_jacobian(x, centers, bin_width, sigma_ref, sqrt_w)

    return levenberg_marquardt(
        residual,
        x0,
        jac,
        scales=_typical_scales(family, x0, bin_width),
        max_iterations=max_iterations,
    )


def _propagate(
    func: Callable[[NDArray[np.float64]], float],
    x: NDArray[np.float64],
    cov: NDArray[np.float64],
    scales: NDArray[np.float64],
) -> tuple[float, float]:
    value = func(x)
    gradient = finite_difference_jacobian(lambda p: np.array([func(p)]), x, scales)[0]
    variance = float(gradient @ cov @ gradient)
    return value, math.sqrt(max(variance, 0.0))


def _derived_quantities(
    family: str, x: NDArray[np.float64], cov: NDArray[np.float64], bin_width: float
) -> dict[str, tuple[float, float]]:
    names = _names(family)
    scales = _typical_scales(family, x, bin_width)
    out: dict[str, tuple[float, float]] = {}
    if family == "gauss":
        sigma_err = math.sqrt(max(cov[3, 3], 0.0))
        out["fwhm_ps"] = (FWHM_PER_SIGMA * x[3], FWHM_PER_SIGMA * sigma_err)
        return out

    iw = names.index("w")
    w = x[iw]
    w_err = math.sqrt(max(cov[iw, iw], 0.0))
    out["A"] = (w, w_err)
    if family == "gauss-exp":
        it = names.index("tau")
        out["B"] = _propagate(lambda p: (1.0 - p[iw]) / p[it], x, cov, scales)
        if w < 1.0:
            out["R"] = (w / (1.0 - w), w_err / (1.0 - w) ** 2)
    else:
        out["B"] = (1.0 - w, w_err)
        if w < 1.0:
            out["weight_ratio"] = (w / (1.0 - w), w_err / (1.0 - w) ** 2)
        i1, i2 = names.index("mu1"), names.index("mu2")
        sep_var = cov[i1, i1] + cov[i2, i2] - 2.0 * cov[i1, i2]
        out["separation_ps"] = (x[i1] - x[i2], math.sqrt(max(sep_var, 0.0)))
    out["fwhm_ps"] = _propagate(lambda p: fwhm(model_from_vector(family, p)), x, cov, scales)
    return out


def fit_counts(
    centers: ArrayLike,
    counts: ArrayLike,
    bin_width: float,
    family: str,
    sigma_ref: float = 0.0,
    init: Union[InitialGuess, Mapping[str, float], Sequence[float], None] = None,
    *,
    max_iterations: int = 500,
    weighting: str = "poisson",
) -> FitResult:
    """Weighted least-squares fit of ``predicted_c12`` to binned counts.

    The first pass weights residuals by ``1/√max(counts, 1)``. With
    ``weighting="poisson"`` the fit is then repeated with weights from the
    expected counts of the previous pass until the parameters settle; the
    fixed point is the Poisson maximum-likelihood estimate. The covariance
    is the inverse normal matrix of the last pass scaled by the reduced
    chi-square.

    Raises:
        ConfigurationError: Fewer than three bins per free parameter, or
            ``sigma_ref < 0``.
        DegenerateFitError: The normal matrix is singular at the solution.
    """

    names = _names(family)
    t = np.asarray(centers, dtype=float)
    c = np.asarray(counts, dtype=float)
    if t.shape != c.shape or t.ndim != 1:
        raise ConfigurationError("centers and counts must be 1-D arrays of the same length.")
    if sigma_ref < 0:
        raise ConfigurationError(f"sigma_ref must be >= 0, got {sigma_ref}.")
    if t.size < _MIN_BINS_PER_PARAMETER * len(names):
        raise ConfigurationError(
            f"{family} fit needs at least {_MIN_BINS_PER_PARAMETER * len(names)} bins, got {t.size}."
        )
    if init is None:
        raise ConfigurationError("fit_counts needs starting parameters; use fit_histogram for a guess.")
    if isinstance(init, InitialGuess):
        x0 = init.vector()
    elif isinstance(init, Mapping):
        try:
            x0 = np.array([float(init[name]) for name in names])
        except KeyError as exc:
            raise ConfigurationError(f"Starting parameters lack {exc.args[0]!r}; need {names}.") from None
    else:
        x0 = np.asarray(init, dtype=float)
        if x0.shape != (len(names),):
            raise ConfigurationError(f"Expected {len(names)} starting values for {family}.")
    if weighting not in WEIGHTINGS:
        raise ConfigurationError(f"Unknown weighting {weighting!r}; expected one of {WEIGHTINGS}.")

    result = _solve(family, t, c, bin_width, sigma_ref, x0, _weights(c), max_iterations)
    combination = null_combination(result.jacobian, names)
    if combination is not None:
        raise DegenerateFitError(combination)
    iterations = result.iterations
    if weighting == "poisson":
        scales = _typical_scales(family, x0, bin_width)
        for _ in range(_REWEIGHT_PASSES):
            previous = result.x
            sqrt_w = _model_weights(family, previous, t, bin_width, sigma_ref)
            result = _solve(family, t, c, bin_width, sigma_ref, previous, sqrt_w, max_iterations)
            iterations += result.iterations
            if np.all(np.abs(result.x - previous) <= _REWEIGHT_RTOL * np.maximum(np.abs(previous), scales)):
                break
        else:
            logger.warning("Poisson reweighting still moving after %d passes.", _REWEIGHT_PASSES)
        combination = null_combination(result.jacobian, names)
        if combination is not None:
            raise DegenerateFitError(combination)
    dof = t.size - len(names)
    cov = covariance_matrix(result.jacobian, result.cost, dof)
    errors = np.sqrt(np.clip(np.diag(cov), 0.0, None))
    model = model_from_vector(family, result.x)
    derived = _derived_quantities(family, result.x, cov, bin_width)
    chi2 = result.cost / dof
    logger.info(
        "%s fit: χ²_red=%.3f after %d iterations (%s)", family, chi2, iterations, result.message
    )
    return FitResult(
        family=family,
        names=names,
        values=result.x,
        errors=errors,
        covariance=cov,
        model=model,
        sigma_ref=float(sigma_ref),
        reduced_chi_square=float(chi2),
        n_bins=int(t.size),
        iterations=iterations,
        converged=result.converged,
        message=result.message,
        derived=derived,
        figures=figures_of_merit(model),
        cost_history=result.cost_history,
    )


def fit_histogram(
    h: CorrelationHistogram,
    family: str,
    sigma_ref: float = 0.0,
    init: Union[InitialGuess, Mapping[str, float], None] = None,
    *,
    fit_window: Optional[tuple[float, float]] = None,
    sidebands: Optional[Sequence[tuple[float, float]]] = None,
    max_iterations: int = 500,
    weighting: str = "poisson",
) -> FitResult:
    """Fit a correlation histogram, guessing starting values when ``init`` is omitted.

    Only bins inside ``fit_window`` are used when it is given; otherwise the
    peak region and the sidebands (see :func:`default_fit_mask`).
    """

    guess = init if init is not None else initial_guess(h, family, sigma_ref=sigma_ref, sidebands=sidebands)
    if fit_window is not None:
        lo, hi = fit_window
        if hi <= lo:
            raise ConfigurationError(f"fit window must be non-empty, got {fit_window}.")
        mask = (h.centers >= lo) & (h.centers < hi)
    elif isinstance(guess, InitialGuess):
        mask = default_fit_mask(h, guess, sidebands)
    else:
        mask = np.ones(h.n_bins, dtype=bool)
    return fit_counts(
        h.centers[mask],
        h.counts[mask],
        h.bin_width_ps,
        family,
        sigma_ref,
        guess,
        max_iterations=max_iterations,
        weighting=weighting,
    )


# --------------------------------------------------------------------------- #
# Pipeline
# --------------------------------------------------------------------------- #


@dataclass(frozen=True, eq=False)
class CharacterizationReport:
    """Every intermediate artifact of one characterization run."""

    histogram: CorrelationHistogram
    g2: G2Result
    guess: InitialGuess
    fit: FitResult
    sigma_ref: Optional[JitterValue]
    config: HistogramConfig
    jitter: Optional[JitterValue] = None
    label: Optional[str] = None


@dataclass(frozen=True, eq=False)
class CharacterizationJob:
    """Inputs of one :func:`characterize` call for batch processing."""

    dut: TimeTagStream
    ref: TimeTagStream
    sigma_ref: JitterValue
    family: str
    config: HistogramConfig = field(default_factory=HistogramConfig)
    wavelength_nm: Optional[float] = None
    label: Optional[str] = None


def _stage(name: str, func: Callable[..., T], *args: Any, **kwargs: Any) -> T:
    logger.info("characterize: %s", name)
    try:
        return func(*args, **kwargs)
    except PairJitterError as exc:
        raise StageError(name, exc) from exc


def _as_jitter(value: Union[JitterValue, float]) -> Optional[JitterValue]:
    if isinstance(value, JitterValue):
        return value
    if value < 0:
        raise ConfigurationError(f"sigma_ref must be >= 0, got {value}.")
    return JitterValue(float(value)) if value > 0 else None


def characterize(
    dut: TimeTagStream,
    ref: TimeTagStream,
    sigma_ref: Union[JitterValue, float],
    family: str,
    config: Optional[HistogramConfig] = None,
    *,
    wavelength_nm: Optional[float] = None,
    label: Optional[str] = None,
) -> CharacterizationReport:
    """Histogram, normalize, guess, fit and summarize a DUT against a reference.

    ``Δt`` is DUT minus reference, so a diffusion tail of the DUT appears on
    the positive side. A failing stage raises :class:`StageError` naming it.
    """

    config = config or HistogramConfig()
    _names(family)
    reference = _as_jitter(sigma_ref)
    sigma_ref_ps = reference.sigma if reference is not None else 0.0
    sidebands = config.sidebands_ps

    h = _stage(
        "cross_correlation",
        cross_correlation,
        dut,
        ref,
        config.window_ps,
        config.bin_width_ps,
        workers=config.workers,
    )
    g2 = _stage("normalize_g2", normalize_g2, h, sidebands)
    guess = _stage("initial_guess", initial_guess, h, family, sigma_ref=sigma_ref_ps, sidebands=sidebands)
    fit = _stage("fit_histogram", fit_histogram, h, family, sigma_ref_ps, guess, sidebands=sidebands)

    jitter: Optional[JitterValue] = None
    if family == "gauss":
        sigma = fit.value("sigma")
        ref_term = sigma_ref_ps * (reference.error if reference else 0.0) / sigma
        jitter = JitterValue(sigma, math.hypot(fit.error("sigma"), ref_term), wavelength_nm)
    logger.info("characterize: done (%s, converged=%s)", family, fit.converged)
    return CharacterizationReport(
        histogram=h,
        g2=g2,
        guess=guess,
        fit=fit,
        sigma_ref=reference,
        config=config,
        jitter=jitter,
        label=label,
    )


def characterize_batch(
    jobs: Sequence[CharacterizationJob], max_workers: Optional[int] = None
) -> list[CharacterizationReport]:
    """Run independent characterizations concurrently; reports keep job order."""

    def run(job: CharacterizationJob) -> CharacterizationReport:
        return characterize(
            job.dut,
            job.ref,
            job.sigma_ref,
            job.family,
            job.config,
            wavelength_nm=job.wavelength_nm,
            label=job.label,
        )

    if max_workers == 1 or len(jobs) < 2:
        return [run(job) for job in jobs]
    with ThreadPoolExecutor(max_workers=max_workers) as pool:
        return list(pool.map(run, jobs))


# --------------------------------------------------------------------------- #
# Serialization
# --------------------------------------------------------------------------- #


def fit_result_to_dict(result: FitResult) -> dict[str, Any]:
    figures = result.figures
    return {
        "family": result.family,
        "parameters": {
            name: {"value": float(v), "error": float(e)}
            for name, v, e in zip(result.names, result.values, result.errors)
        },
        "derived": {name: {"value": v, "error": e} for name, (v, e) in result.derived.items()},
        "model": model_to_dict(result.model),
        "sigma_ref_ps": result.sigma_ref,
        "reduced_chi_square": result.reduced_chi_square,
        "n_bins": result.n_bins,
        "iterations": result.iterations,
        "converged": result.converged,
        "message": result.message,
        "figures_of_merit": None
        if figures is None
        else {
            "fwhm_ps": figures.fwhm_ps,
            "ratio_r": figures.ratio_r,
            "component_integrals": list(figures.component_integrals),
            "separation_ps": figures.separation_ps,
            "multimodal": figures.multimodal,
        },
    }


def report_to_dict(report: CharacterizationReport) -> dict[str, Any]:
    h = report.histogram
    return {
        "label": report.label,
        "config": report.config.to_dict(),
        "sigma_ref": report.sigma_ref.to_dict() if report.sigma_ref is not None else None,
        "histogram": {
            "channels": list(h.channels),
            "bin_width_ps": h.bin_width_ps,
            "window_ps": list(h.window_ps),
            "duration_ps": h.duration_ps,
            "total_pairs": h.total_pairs_considered,
            "rates_hz": list(h.rates_hz) if h.rates_hz is not None else None,
        },
        "g2": {
            "floor": report.g2.floor,
            "floor_error": report.g2.floor_error,
            "sideband_bins": report.g2.sideband_bins,
            "contaminated": report.g2.contaminated,
        },
        "initial_guess": {
            "parameters": dict(report.guess.parameters),
            "clamped": report.guess.clamped,
        },
        "fit": fit_result_to_dict(report.fit),
        "jitter": report.jitter.to_dict() if report.jitter is not None else None,
    }
