"""Detector temporal-response models, their convolutions and figures of merit.

Three families are supported, all with times in picoseconds:

``Gaussian``
    ``f(t) = G(σ, t − μ)``, unit integral.
``GaussExpTail``
    ``f(t) = A·G(σ, t − μ) + B·[G(σ) ∗ 1_{x≥0} e^{−x/τ}](t − μ)``, integral
    ``A + Bτ``. The tail is one-sided: a diffusion-delayed avalanche can only
    arrive late.
``DoubleGaussian``
    ``f(t) = A·G(σ₁, t − μ₁) + B·G(σ₂, t − μ₂)``, integral ``A + B``.

Weights keep the conventional parameterization, so fitted ``A``, ``B`` and
``R = A/(Bτ)`` have their usual meaning; :func:`normalize` produces the
unit-integral density where one is needed.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Any, ClassVar, Final, Mapping, Union, overload

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.optimize import brentq, minimize_scalar
from scipy.special import erfc, erfcx
from typing_extensions import TypeAlias

from .errors import ConfigurationError, ParseError, UndefinedRatioError

logger = logging.getLogger(__name__)

__all__ = [
    "FWHM_PER_SIGMA",
    "Gaussian",
    "GaussExpTail",
    "DoubleGaussian",
    "ResponseModel",
    "FAMILIES",
    "FigureOfMerit",
    "HalfMaximum",
    "gaussian_density",
    "gaussian_fwhm",
    "total_weight",
    "component_integrals",
    "normalize",
    "evaluate",
    "convolve_with_gaussian",
    "predicted_c12",
    "half_max_crossings",
    "fwhm",
    "ratio_r",
    "weight_ratio",
    "separation",
    "figures_of_merit",
    "sample",
    "model_to_dict",
    "model_from_dict",
    "save_model",
    "load_model",
]

FWHM_PER_SIGMA: Final = 2.0 * math.sqrt(2.0 * math.log(2.0))
_SQRT2: Final = math.sqrt(2.0)
_SQRT2PI: Final = math.sqrt(2.0 * math.pi)


def _positive(name: str, value: float) -> None:
    if not (math.isfinite(value) and value > 0):
        raise ConfigurationError(f"{name} must be a positive finite number, got {value!r}.")


def _non_negative(name: str, value: float) -> None:
    if not (math.isfinite(value) and value >= 0):
        raise ConfigurationError(f"{name} must be a non-negative finite number, got {value!r}.")


def _finite(name: str, value: float) -> None:
    if not math.isfinite(value):
        raise ConfigurationError(f"{name} must be finite, got {value!r}.")


@dataclass(frozen=True)
class Gaussian:
    """Normalized Gaussian response."""

    mu: float
    sigma: float
    family: ClassVar[str] = "gauss"

    def __post_init__(self) -> None:
        _finite("mu", self.mu)
        _positive("sigma", self.sigma)


@dataclass(frozen=True)
class GaussExpTail:
    """Gaussian plus Gaussian-broadened one-sided exponential tail (Si-APD)."""

    a: float
    b: float
    mu: float
    sigma: float
    tau: float
    family: ClassVar[str] = "gauss-exp"

    def __post_init__(self) -> None:
        _non_negative("a", self.a)
        _non_negative("b", self.b)
        _finite("mu", self.mu)
        _positive("sigma", self.sigma)
        _positive("tau", self.tau)
        if self.a + self.b * self.tau <= 0:
            raise ConfigurationError("GaussExpTail needs A + B·τ > 0.")


@dataclass(frozen=True)
class DoubleGaussian:
    """Weighted sum of two Gaussians (InGaAs-APD)."""

    a: float
    b: float
    mu1: float
    mu2: float
    sigma1: float
    sigma2: float
    family: ClassVar[str] = "double-gauss"

    def __post_init__(self) -> None:
        _positive("a", self.a)
        _non_negative("b", self.b)
        _finite("mu1", self.mu1)
        _finite("mu2", self.mu2)
        _positive("sigma1", self.sigma1)
        _positive("sigma2", self.sigma2)


ResponseModel: TypeAlias = Union[Gaussian, GaussExpTail, DoubleGaussian]

FAMILIES: Final[dict[str, type]] = {
    Gaussian.family: Gaussian,
    GaussExpTail.family: GaussExpTail,
    DoubleGaussian.family: DoubleGaussian,
}


@dataclass(frozen=True)
class HalfMaximum:
    """Location of the maximum and the outermost half-maximum crossings."""

    peak_time: float
    peak_value: float
    left: float
    right: float
    multimodal: bool = False

    @property
    def width(self) -> float:
        return self.right - self.left


@dataclass(frozen=True)
class FigureOfMerit:
    """Summary numbers quoted for a detector response."""

    fwhm_ps: float
    ratio_r: float | None
    component_integrals: tuple[float, ...]
    separation_ps: float | None = None
    multimodal: bool = False

    def __post_init__(self) -> None:
        _positive("fwhm_ps", self.fwhm_ps)


def gaussian_density(sigma: float | NDArray[np.float64], x: ArrayLike) -> NDArray[np.float64]:
    """``G(σ, x) = exp(−x²/2σ²)/√(2πσ²)``."""

    x = np.asarray(x, dtype=float)
    return np.exp(-0.5 * (x / sigma) ** 2) / (sigma * _SQRT2PI)


def gaussian_fwhm(sigma: float) -> float:
    """Full width at half maximum of a Gaussian, ``2√(2 ln 2)·σ``."""

    return FWHM_PER_SIGMA * sigma


def _emg_kernel(sigma: float, tau: float, x: NDArray[np.float64]) -> NDArray[np.float64]:
    """``[G(σ) ∗ 1_{x≥0} e^{−x/τ}](x)`` in closed form.

    Uses ``½·exp(σ²/2τ² − x/τ)·erfc(z)`` with ``z = (σ/τ − x/σ)/√2`` where the
    exponent is harmless (``z < 0``), and the algebraically identical
    ``½·exp(−x²/2σ²)·erfcx(z)`` elsewhere so large exponents never overflow.
    """

    z = (sigma / tau - x / sigma) / _SQRT2
    out = np.empty_like(x)
    scaled = z >= 0
    xs = x[scaled]
    out[scaled] = 0.5 * np.exp(-0.5 * (xs / sigma) ** 2) * erfcx(z[scaled])
    xd = x[~scaled]
    out[~scaled] = 0.5 * np.exp(0.5 * (sigma / tau) ** 2 - xd / tau) * erfc(z[~scaled])
    return out


@overload
def evaluate(model: ResponseModel, t: float) -> float: ...


@overload
def evaluate(model: ResponseModel, t: NDArray[Any]) -> NDArray[np.float64]: ...


def evaluate(model: ResponseModel, t: Any) -> Any:
    """Response density (1/ps) at time(s) ``t``; scalars in, scalars out."""

    scalar = np.ndim(t) == 0
    x = np.atleast_1d(np.asarray(t, dtype=float))
    if isinstance(model, Gaussian):
        values = gaussian_density(model.sigma, x - model.mu)
    elif isinstance(model, GaussExpTail):
        dx = x - model.mu
        values = model.a * gaussian_density(model.sigma, dx)
        if model.b > 0:
            values = values + model.b * _emg_kernel(model.sigma, model.tau, dx)
    elif isinstance(model, DoubleGaussian):
        values = model.a * gaussian_density(model.sigma1, x - model.mu1)
        if model.b > 0:
            values = values + model.b * gaussian_density(model.sigma2, x - model.mu2)
    else:
        raise TypeError(f"Unsupported response model {type(model).__name__}.")
    return float(values[0]) if scalar else values


def total_weight(model: ResponseModel) -> float:
    """Integral of the response over all times."""

    return float(sum(component_integrals(model)))


def component_integrals(model: ResponseModel) -> tuple[float, ...]:
    """Integral of each additive component."""

    if isinstance(model, Gaussian):
        return (1.0,)
    if isinstance(model, GaussExpTail):
        return (model.a, model.b * model.tau)
    return (model.a, model.b)


def normalize(model: ResponseModel) -> ResponseModel:
    """Copy of ``model`` rescaled to unit integral."""

    if isinstance(model, Gaussian):
        return model
    weight = total_weight(model)
    if isinstance(model, GaussExpTail):
        return GaussExpTail(model.a / weight, model.b / weight, model.mu, model.sigma, model.tau)
    return DoubleGaussian(
        model.a / weight, model.b / weight, model.mu1, model.mu2, model.sigma1, model.sigma2
    )


def convolve_with_gaussian(model: ResponseModel, sigma_ref: float) -> ResponseModel:
    """Convolve with a zero-mean Gaussian; every family is closed under this."""

    _non_negative("sigma_ref", sigma_ref)
    if sigma_ref == 0:
        return model

    def widen(sigma: float) -> float:
        return math.hypot(sigma, sigma_ref)

    if isinstance(model, Gaussian):
        return Gaussian(model.mu, widen(model.sigma))
    if isinstance(model, GaussExpTail):
        return GaussExpTail(model.a, model.b, model.mu, widen(model.sigma), model.tau)
    return DoubleGaussian(
        model.a, model.b, model.mu1, model.mu2, widen(model.sigma1), widen(model.sigma2)
    )


def predicted_c12(
    model: ResponseModel,
    sigma_ref: float,
    n_pairs: float,
    floor: float,
    bin_width: float,
    t: ArrayLike,
) -> NDArray[np.float64]:
    """Expected counts per bin: ``N·Δ·(f̂ ∗ G(σ_ref))(t) + C₀`` with ``f̂`` normalized."""

    _non_negative("N", n_pairs)
    _non_negative("C0", floor)
    _positive("bin_width", bin_width)
    shape = convolve_with_gaussian(normalize(model), sigma_ref)
    return n_pairs * bin_width * np.atleast_1d(evaluate(shape, np.asarray(t, dtype=float))) + floor


def _centres_and_scales(model: ResponseModel) -> list[tuple[float, float]]:
    if isinstance(model, Gaussian):
        return [(model.mu, model.sigma)]
    if isinstance(model, GaussExpTail):
        return [(model.mu, model.sigma)]
    return [(model.mu1, model.sigma1), (model.mu2, model.sigma2)]


def _search_grid(model: ResponseModel) -> NDArray[np.float64]:
    parts = _centres_and_scales(model)
    widest = max(scale for _, scale in parts)
    lo = min(centre for centre, _ in parts) - 12.0 * widest
    hi = max(centre for centre, _ in parts) + 12.0 * widest
    if isinstance(model, GaussExpTail) and model.b > 0:
        hi += 40.0 * model.tau
    pieces = [np.linspace(lo, hi, 20001)]
    for centre, scale in parts:
        pieces.append(np.linspace(centre - 12.0 * scale, centre + 12.0 * scale, 4001))
    if isinstance(model, GaussExpTail) and model.b > 0:
        pieces.append(np.linspace(model.mu, model.mu + 8.0 * (model.sigma + model.tau), 4001))
    return np.unique(np.concatenate(pieces))


def half_max_crossings(model: ResponseModel) -> HalfMaximum:
    """Global maximum and the outermost half-maximum crossings.

    The maximum is bracketed on a dense grid and refined with a bounded
    Brent/golden-section search; each crossing is then bisected with
    :func:`scipy.optimize.brentq` to 1e-6 ps. When the density dips below half
    maximum between the outermost crossings the result is flagged multimodal.
    """

    if isinstance(model, Gaussian):
        half_width = 0.5 * gaussian_fwhm(model.sigma)
        return HalfMaximum(
            peak_time=model.mu,
            peak_value=float(evaluate(model, model.mu)),
            left=model.mu - half_width,
            right=model.mu + half_width,
        )

    grid = _search_grid(model)
    values = evaluate(model, grid)
    i = int(np.argmax(values))
    peak_time, peak_value = float(grid[i]), float(values[i])
    if 0 < i < grid.size - 1:
        refined = minimize_scalar(
            lambda s: -evaluate(model, s),
            bounds=(float(grid[i - 1]), float(grid[i + 1])),
            method="bounded",
            options={"xatol": 1e-9},
        )
        if -refined.fun > peak_value:
            peak_time, peak_value = float(refined.x), float(-refined.fun)

    half = 0.5 * peak_value
    above = np.flatnonzero(values >= half)
    first, last = int(above[0]), int(above[-1])
    multimodal = bool(above.size != last - first + 1)
    if multimodal:
        logger.warning("Response is multimodal at half maximum; using the outermost crossings.")

    def excess(s: float) -> float:
        return evaluate(model, s) - half

    left = brentq(excess, float(grid[first - 1]), float(grid[first]), xtol=1e-6)
    right = brentq(excess, float(grid[last]), float(grid[last + 1]), xtol=1e-6)
    return HalfMaximum(peak_time, peak_value, float(left), float(right), multimodal)


def fwhm(model: ResponseModel) -> float:
    """Full width at half maximum in ps (exact for a Gaussian, numeric otherwise)."""

    if isinstance(model, Gaussian):
        return gaussian_fwhm(model.sigma)
    return half_max_crossings(model).width


def ratio_r(model: GaussExpTail) -> float:
    """``R = A/(Bτ)``: Gaussian coincidences over tail coincidences."""

    if not isinstance(model, GaussExpTail):
        raise TypeError("R is defined for GaussExpTail models only.")
    if model.b == 0:
        raise UndefinedRatioError("Ratio R is undefined (infinite) because B = 0.")
    return model.a / (model.b * model.tau)


def weight_ratio(model: DoubleGaussian) -> float:
    """``A/B`` of a double-Gaussian response."""

    if model.b == 0:
        raise UndefinedRatioError("Weight ratio A/B is undefined because B = 0.")
    return model.a / model.b


def separation(model: DoubleGaussian) -> float:
    """Temporal separation ``μ₁ − μ₂`` of the two components."""

    return model.mu1 - model.mu2


def figures_of_merit(model: ResponseModel) -> FigureOfMerit:
    """FWHM plus the ratios that matter for each family."""

    ratio: float | None = None
    gap: float | None = None
    if isinstance(model, Gaussian):
        return FigureOfMerit(fwhm(model), None, component_integrals(model))
    crossings = half_max_crossings(model)
    if isinstance(model, GaussExpTail):
        ratio = ratio_r(model) if model.b > 0 else None
    else:
        ratio = weight_ratio(model) if model.b > 0 else None
        gap = separation(model)
    return FigureOfMerit(
        fwhm_ps=crossings.width,
        ratio_r=ratio,
        component_integrals=component_integrals(model),
        separation_ps=gap,
        multimodal=crossings.multimodal,
    )


def sample(model: ResponseModel, rng: np.random.Generator, size: int | None = None) -> Any:
    """Draw detection delays from the normalized response.

    The generator is owned by the caller; the number of variates consumed
    depends only on ``size`` and the family, not on parameter values.
    """

    n = 1 if size is None else size
    if isinstance(model, Gaussian):
        draws = rng.normal(model.mu, model.sigma, n)
    elif isinstance(model, GaussExpTail):
        gaussian_share = model.a / total_weight(model)
        pick_gaussian = rng.random(n) < gaussian_share
        jitter = rng.normal(0.0, model.sigma, n)
        delay = rng.exponential(model.tau, n)
        draws = model.mu + jitter + np.where(pick_gaussian, 0.0, delay)
    elif isinstance(model, DoubleGaussian):
        pick_first = rng.random(n) < model.a / total_weight(model)
        unit = rng.standard_normal(n)
        draws = np.where(
            pick_first, model.mu1 + model.sigma1 * unit, model.mu2 + model.sigma2 * unit
        )
    else:
        raise TypeError(f"Unsupported response model {type(model).__name__}.")
    return float(draws[0]) if size is None else draws


def model_to_dict(model: ResponseModel) -> dict[str, Any]:
    """``{"family": ..., "parameters": {...}}`` with times in ps."""

    return {"family": model.family, "parameters": asdict(model)}


def model_from_dict(data: Mapping[str, Any]) -> ResponseModel:
    """Inverse of :func:`model_to_dict`; unknown families or keys are rejected."""

    family = data.get("family")
    cls = FAMILIES.get(str(family))
    if cls is None:
        raise ConfigurationError(f"Unknown response family {family!r}; expected one of {sorted(FAMILIES)}.")
    params = data.get("parameters")
    if not isinstance(params, Mapping):
        raise ConfigurationError("Response model needs a 'parameters' object.")
    expected = {f.name for f in fields(cls)}
    if set(params) != expected:
        raise ConfigurationError(
            f"{family} parameters must be exactly {sorted(expected)}, got {sorted(params)}."
        )
    try:
        return cls(**{key: float(value) for key, value in params.items()})
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigurationError):
            raise
        raise ConfigurationError(f"Invalid {family} parameters: {params}") from exc


def save_model(model: ResponseModel, path: str | Path) -> Path:
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    target.write_text(json.dumps(model_to_dict(model), indent=2) + "\n", encoding="utf-8")
    return target


def load_model(path: str | Path) -> ResponseModel:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except UnicodeDecodeError as exc:
        raise ParseError(path, exc.start, "not valid UTF-8") from exc
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"Failed to parse model file {path}: {exc}") from exc
    return model_from_dict(data)
