"""Collinear Type-II critical phase matching for the angle-tuned pair source.

The pump travels as an extraordinary wave at ``theta_internal`` to the optic
axis. One daughter photon is ordinary, the other extraordinary at the same
angle; ``SourceGeometry.polarization`` selects which. Tilting the crystal by
the external angle of incidence changes ``theta_internal`` through refraction
at the entrance face, and the signal wavelength follows from the root of the
phase mismatch ``Δk = k_p − k_s − k_i`` with the idler fixed by energy
conservation.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from collections.abc import Mapping, Sequence
from dataclasses import asdict, dataclass, replace
from pathlib import Path
from typing import Any, Final

import numpy as np
from scipy.optimize import brentq, minimize_scalar
from typing_extensions import Literal

from .data.crystals import load_default_crystals, load_crystal
from .dispersion import UniaxialCrystal, n_extraordinary, n_ordinary
from .errors import (
    ConfigurationError,
    DomainError,
    NoPhaseMatchError,
    PairJitterError,
    ParseError,
    SolverError,
    ValidityRangeError,
)

logger = logging.getLogger(__name__)

__all__ = [
    "Polarization",
    "Rotation",
    "SourceGeometry",
    "PhaseMatchSolution",
    "TuningRow",
    "FilterCalibration",
    "CalibrationResult",
    "REFERENCE_TUNING_POINTS",
    "TUNING_COLUMNS",
    "REFERENCE_BOUNDS_DEG",
    "idler_from_signal",
    "internal_angle",
    "phase_mismatch",
    "solve_signal_wavelength",
    "tuning_curve",
    "tuning_rows_as_dicts",
    "write_tuning_csv",
    "calibrate_geometry",
    "tuning_rms",
    "load_geometry",
    "geometry_to_dict",
    "load_filter_calibration",
    "transmission_at",
    "wavelength_from_transmission",
]

Polarization = Literal["signal-ordinary", "signal-extraordinary"]
Rotation = Literal["toward-axis", "away-from-axis"]

_POLARIZATIONS: Final = ("signal-ordinary", "signal-extraordinary")
_ROTATIONS: Final = ("toward-axis", "away-from-axis")

SIGNAL_BRACKET_NM: Final = (480.0, 790.0)
RESIDUAL_TOLERANCE: Final = 1e-6  # rad/µm
ANGLE_TOLERANCE_DEG: Final = 1e-6
MAX_ANGLE_ITERATIONS: Final = 100
_SCAN_POINTS: Final = 64
REFERENCE_BOUNDS_DEG: Final = (-45.0, 45.0)
_REFERENCE_GRID_STEP_DEG: Final = 1.0

# Measured (angle of incidence in degrees, signal wavelength in nm) pairs of the
# angle-tuned BBO source; used to pick the polarization/rotation flags and the
# incidence reference orientation.
REFERENCE_TUNING_POINTS: Final[tuple[tuple[float, float], ...]] = (
    (12.7, 526.0),
    (13.7, 542.0),
    (24.7, 647.0),
    (26.7, 661.0),
)

TUNING_COLUMNS: Final = (
    "theta_incidence_deg",
    "theta_internal_deg",
    "lambda_signal_nm",
    "lambda_idler_nm",
    "residual",
    "status",
)


@dataclass(frozen=True)
class SourceGeometry:
    """Crystal cut and pump configuration of the pair source."""

    crystal: UniaxialCrystal
    theta_cut_deg: float = 43.6
    phi_cut_deg: float = 30.0  # recorded only; the collinear model ignores it
    pump_nm: float = 405.0
    length_mm: float = 2.0
    polarization: Polarization = "signal-ordinary"
    rotation: Rotation = "away-from-axis"
    # external angle at which the pump meets the entrance face at normal incidence
    incidence_reference_deg: float = 0.0

    def __post_init__(self) -> None:
        if not (0.0 < self.theta_cut_deg < 90.0):
            raise ConfigurationError(f"theta_cut_deg must be in (0, 90), got {self.theta_cut_deg}.")
        if not self.crystal.ordinary.contains(self.pump_nm / 1000.0):
            raise ValidityRangeError(self.pump_nm / 1000.0, self.crystal.valid_range, "pump")
        if self.polarization not in _POLARIZATIONS:
            raise ConfigurationError(f"polarization must be one of {_POLARIZATIONS}.")
        if self.rotation not in _ROTATIONS:
            raise ConfigurationError(f"rotation must be one of {_ROTATIONS}.")
        if self.length_mm <= 0:
            raise ConfigurationError("length_mm must be positive.")
        if not abs(self.incidence_reference_deg) < 90.0:
            raise ConfigurationError(
                f"incidence_reference_deg must lie in (-90, 90), got {self.incidence_reference_deg}."
            )

    @property
    def rotation_sign(self) -> float:
        return -1.0 if self.rotation == "toward-axis" else 1.0


@dataclass(frozen=True)
class PhaseMatchSolution:
    """Signal/idler pair phase matched at one angle of incidence."""

    theta_incidence_deg: float
    theta_internal_deg: float
    lambda_signal_nm: float
    lambda_idler_nm: float
    residual_mismatch: float


@dataclass(frozen=True)
class TuningRow:
    """One row of a tuning curve; ``status`` is ``"ok"`` or the solver message."""

    theta_incidence_deg: float
    theta_internal_deg: float
    lambda_signal_nm: float
    lambda_idler_nm: float
    residual: float
    status: str = "ok"

    @property
    def ok(self) -> bool:
        return self.status == "ok"

    @classmethod
    def from_solution(cls, solution: PhaseMatchSolution) -> TuningRow:
        return cls(
            theta_incidence_deg=solution.theta_incidence_deg,
            theta_internal_deg=solution.theta_internal_deg,
            lambda_signal_nm=solution.lambda_signal_nm,
            lambda_idler_nm=solution.lambda_idler_nm,
            residual=solution.residual_mismatch,
        )


def idler_from_signal(pump_nm: float, signal_nm: float) -> float:
    """Idler wavelength from energy conservation ``1/λi = 1/λp − 1/λs``."""

    if signal_nm <= pump_nm:
        raise DomainError(
            f"Signal wavelength {signal_nm} nm must exceed the pump wavelength {pump_nm} nm."
        )
    return 1.0 / (1.0 / pump_nm - 1.0 / signal_nm)


def _pump_index(geometry: SourceGeometry, theta_internal: float) -> float:
    return n_extraordinary(geometry.crystal, geometry.pump_nm / 1000.0, theta_internal)


def internal_angle(geometry: SourceGeometry, theta_incidence_deg: float) -> float:
    """Internal propagation angle (degrees) to the optic axis for an external tilt.

    Solves ``θ = θ_cut ± asin(sin θ_f / n_p(θ))`` by fixed-point iteration, the
    pump index being extraordinary and therefore angle dependent. ``θ_f`` is
    the angle to the entrance-face normal, ``θ_i − incidence_reference_deg``.
    """

    face_deg = theta_incidence_deg - geometry.incidence_reference_deg
    if not abs(face_deg) < 90.0:
        raise DomainError(
            f"Angle to the face normal must be below 90° in magnitude, got {face_deg} "
            f"at incidence {theta_incidence_deg}°."
        )
    cut = math.radians(geometry.theta_cut_deg)
    sin_i = math.sin(math.radians(face_deg))
    if sin_i == 0.0:
        return geometry.theta_cut_deg
    theta = cut
    for _ in range(MAX_ANGLE_ITERATIONS):
        try:
            refracted = math.asin(sin_i / _pump_index(geometry, theta))
        except DomainError as exc:
            raise SolverError(f"Internal angle left [0°, 90°] at incidence {theta_incidence_deg}°.") from exc
        updated = cut + geometry.rotation_sign * refracted
        if abs(math.degrees(updated - theta)) <= ANGLE_TOLERANCE_DEG:
            return math.degrees(updated)
        theta = updated
    raise SolverError(
        f"Internal angle did not converge within {MAX_ANGLE_ITERATIONS} iterations "
        f"at incidence {theta_incidence_deg}°."
    )


def phase_mismatch(geometry: SourceGeometry, theta_internal_deg: float, signal_nm: float) -> float:
    """Collinear ``Δk = k_p − k_s − k_i`` in rad/µm with ``k = 2πn/λ``."""

    crystal = geometry.crystal
    theta = math.radians(theta_internal_deg)
    idler_nm = idler_from_signal(geometry.pump_nm, signal_nm)
    lam_p, lam_s, lam_i = geometry.pump_nm / 1000.0, signal_nm / 1000.0, idler_nm / 1000.0

    n_p = n_extraordinary(crystal, lam_p, theta)
    if geometry.polarization == "signal-ordinary":
        n_s = n_ordinary(crystal, lam_s)
        n_i = n_extraordinary(crystal, lam_i, theta)
    else:
        n_s = n_extraordinary(crystal, lam_s, theta)
        n_i = n_ordinary(crystal, lam_i)
    return 2.0 * math.pi * (n_p / lam_p - n_s / lam_s - n_i / lam_i)


def _signal_bracket(geometry: SourceGeometry) -> tuple[float, float]:
    lo_um, hi_um = geometry.crystal.valid_range
    pump = geometry.pump_nm
    lo, hi = SIGNAL_BRACKET_NM
    # Keep the signal and its idler inside the dispersion window.
    if hi_um * 1000.0 > pump:
        lo = max(lo, 1.0 / (1.0 / pump - 1.0 / (hi_um * 1000.0)))
    lo = max(lo, lo_um * 1000.0, pump * (1.0 + 1e-9))
    hi = min(hi, 2.0 * pump * (1.0 - 1e-12))
    if lo >= hi:
        raise NoPhaseMatchError(f"Empty signal search bracket for a {pump} nm pump.")
    return lo, hi


def solve_signal_wavelength(geometry: SourceGeometry, theta_incidence_deg: float) -> PhaseMatchSolution:
    """Phase-matched signal/idler pair at one external angle of incidence.

    Raises:
        NoPhaseMatchError: If ``Δk`` has no sign change in the search bracket.
        SolverError: If the internal angle or the root does not converge.
    """

    theta_internal = internal_angle(geometry, theta_incidence_deg)
    lo, hi = _signal_bracket(geometry)

    def mismatch(signal_nm: float) -> float:
        return phase_mismatch(geometry, theta_internal, signal_nm)

    grid = np.linspace(lo, hi, _SCAN_POINTS)
    values = np.array([mismatch(float(x)) for x in grid])
    crossings = np.flatnonzero(np.sign(values[:-1]) * np.sign(values[1:]) <= 0)
    if crossings.size == 0:
        raise NoPhaseMatchError(f"no phase-matched solution at this angle ({theta_incidence_deg}°)")
    if crossings.size > 1:
        logger.debug("Δk changes sign %d times; using the shortest signal root.", crossings.size)
    k = int(crossings[0])
    a, b = float(grid[k]), float(grid[k + 1])
    if values[k] == 0.0:
        signal = a
    elif values[k + 1] == 0.0:
        signal = b
    else:
        signal = brentq(mismatch, a, b, xtol=1e-10, rtol=4 * np.finfo(float).eps, maxiter=200)
    residual = abs(mismatch(signal))
    if residual > RESIDUAL_TOLERANCE:
        raise SolverError(f"Phase-matching residual {residual:.3e} rad/µm exceeds tolerance.")
    idler = idler_from_signal(geometry.pump_nm, signal)
    logger.debug(
        "θ_i=%.4f° θ_int=%.6f° → λs=%.4f nm λi=%.4f nm", theta_incidence_deg, theta_internal, signal, idler
    )
    return PhaseMatchSolution(
        theta_incidence_deg=float(theta_incidence_deg),
        theta_internal_deg=theta_internal,
        lambda_signal_nm=signal,
        lambda_idler_nm=idler,
        residual_mismatch=residual,
    )


def tuning_curve(
    geometry: SourceGeometry, theta_start: float, theta_end: float, n_points: int
) -> list[TuningRow]:
    """Solve on ``n_points`` evenly spaced angles; failures become flagged rows."""

    if n_points < 2:
        raise ConfigurationError(f"A tuning curve needs at least 2 points, got {n_points}.")
    rows: list[TuningRow] = []
    for theta in np.linspace(theta_start, theta_end, n_points):
        theta = float(theta)
        try:
            rows.append(TuningRow.from_solution(solve_signal_wavelength(geometry, theta)))
        except (SolverError, DomainError, ValidityRangeError) as exc:
            logger.info("No solution at θ_i=%.4f°: %s", theta, exc)
            try:
                theta_internal = internal_angle(geometry, theta)
            except PairJitterError:
                theta_internal = math.nan
            rows.append(
                TuningRow(theta, theta_internal, math.nan, math.nan, math.nan, status=str(exc))
            )
    return rows


def tuning_rows_as_dicts(rows: Sequence[TuningRow]) -> list[dict[str, Any]]:
    """Render tuning rows with the fixed CSV column order and number formats."""

    def fmt(value: float, spec: str) -> str:
        return "nan" if math.isnan(value) else format(value, spec)

    return [
        {
            "theta_incidence_deg": fmt(row.theta_incidence_deg, ".6f"),
            "theta_internal_deg": fmt(row.theta_internal_deg, ".6f"),
            "lambda_signal_nm": fmt(row.lambda_signal_nm, ".6f"),
            "lambda_idler_nm": fmt(row.lambda_idler_nm, ".6f"),
            "residual": fmt(row.residual, ".3e"),
            "status": row.status,
        }
        for row in rows
    ]


def write_tuning_csv(rows: Sequence[TuningRow], path: str | Path) -> Path:
    """Write ``rows`` as CSV (gnuplot-friendly numeric columns first)."""

    from .tables import SimpleTable

    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    SimpleTable(tuning_rows_as_dicts(rows), TUNING_COLUMNS).to_csv(target)
    return target


@dataclass(frozen=True)
class CalibrationResult:
    """Best flag combination and, per candidate, its RMS error (nm) and reference angle."""

    geometry: SourceGeometry
    rms_nm: float
    candidates: dict[tuple[str, str], float]
    references: dict[tuple[str, str], float]


def tuning_rms(geometry: SourceGeometry, reference_points: Sequence[tuple[float, float]]) -> float:
    """RMS signal-wavelength error (nm) over ``reference_points``; ``inf`` if any fails."""

    errors = []
    for theta, signal_nm in reference_points:
        try:
            errors.append(solve_signal_wavelength(geometry, theta).lambda_signal_nm - signal_nm)
        except PairJitterError:
            return math.inf
    return math.sqrt(sum(e * e for e in errors) / len(errors))


def _fit_reference(
    geometry: SourceGeometry,
    reference_points: Sequence[tuple[float, float]],
    bounds: tuple[float, float],
) -> tuple[float, float]:
    lo, hi = bounds
    grid = np.arange(lo, hi + 0.5 * _REFERENCE_GRID_STEP_DEG, _REFERENCE_GRID_STEP_DEG)
    scores = [
        tuning_rms(replace(geometry, incidence_reference_deg=float(ref)), reference_points) for ref in grid
    ]
    k = int(np.argmin(scores))
    if math.isinf(scores[k]):
        return math.nan, math.inf

    def objective(ref: float) -> float:
        rms = tuning_rms(replace(geometry, incidence_reference_deg=ref), reference_points)
        return 1e6 if math.isinf(rms) else rms

    window = (
        max(lo, float(grid[k]) - _REFERENCE_GRID_STEP_DEG),
        min(hi, float(grid[k]) + _REFERENCE_GRID_STEP_DEG),
    )
    refined = minimize_scalar(objective, bounds=window, method="bounded", options={"xatol": 1e-3})
    if refined.fun < scores[k]:
        return float(refined.x), float(refined.fun)
    return float(grid[k]), float(scores[k])


def calibrate_geometry(
    geometry: SourceGeometry,
    reference_points: Sequence[tuple[float, float]] = REFERENCE_TUNING_POINTS,
    *,
    fit_reference: bool = True,
    reference_bounds_deg: tuple[float, float] = REFERENCE_BOUNDS_DEG,
) -> CalibrationResult:
    """Choose the flags, and optionally the incidence reference, that best reproduce measured points.

    For each polarization/rotation combination the reference orientation is
    scanned on a 1° grid over ``reference_bounds_deg`` and refined with a
    bounded scalar minimization of the RMS signal error. With
    ``fit_reference=False`` the geometry's own reference is kept.
    """

    if not reference_points:
        raise ConfigurationError("At least one reference point is required.")
    lo, hi = reference_bounds_deg
    if not (-90.0 < lo < hi < 90.0):
        raise ConfigurationError(
            f"reference_bounds_deg must satisfy -90 < lo < hi < 90, got {reference_bounds_deg}."
        )
    candidates: dict[tuple[str, str], float] = {}
    references: dict[tuple[str, str], float] = {}
    for polarization in _POLARIZATIONS:
        for rotation in _ROTATIONS:
            trial = replace(geometry, polarization=polarization, rotation=rotation)
            if fit_reference:
                reference, rms = _fit_reference(trial, reference_points, reference_bounds_deg)
            else:
                reference, rms = trial.incidence_reference_deg, tuning_rms(trial, reference_points)
            candidates[(polarization, rotation)] = rms
            references[(polarization, rotation)] = reference
            logger.info(
                "calibration %s / %s: reference %.3f°, rms %.3f nm", polarization, rotation, reference, rms
            )
    (polarization, rotation), rms = min(candidates.items(), key=lambda item: item[1])
    if math.isinf(rms):
        raise NoPhaseMatchError("No flag combination phase matches every reference point.")
    best = replace(
        geometry,
        polarization=polarization,
        rotation=rotation,
        incidence_reference_deg=references[(polarization, rotation)],
    )
    return CalibrationResult(geometry=best, rms_nm=rms, candidates=candidates, references=references)


def geometry_to_dict(geometry: SourceGeometry) -> dict[str, Any]:
    data = asdict(geometry)
    data["crystal"] = geometry.crystal.name
    return data


def load_geometry(path: str | Path | None = None) -> SourceGeometry:
    """Load a geometry JSON file; ``None`` returns the bundled default.

    The ``crystal`` key is either a bundled crystal name or a path to a
    coefficient file.
    """

    if path is None:
        from importlib import resources

        raw = resources.files("pairjitter.data").joinpath("default_geometry.json").read_text(encoding="utf-8")
    else:
        try:
            raw = Path(path).read_text(encoding="utf-8")
        except UnicodeDecodeError as exc:
            raise ParseError(path, exc.start, "not valid UTF-8") from exc
    try:
        data = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"Failed to parse geometry file {path}: {exc}") from exc
    if not isinstance(data, Mapping):
        raise ConfigurationError("Geometry file must contain a JSON object.")

    crystal_ref = str(data.get("crystal", "BBO"))
    repository = load_default_crystals()
    if crystal_ref in repository:
        crystal = repository.get(crystal_ref)
    else:
        crystal_path = Path(crystal_ref)
        if path is not None and not crystal_path.is_absolute():
            crystal_path = Path(path).parent / crystal_path
        crystal = load_crystal(crystal_path)

    known = {
        "theta_cut_deg",
        "phi_cut_deg",
        "pump_nm",
        "length_mm",
        "polarization",
        "rotation",
        "incidence_reference_deg",
    }
    unknown = set(data) - known - {"crystal"}
    if unknown:
        raise ConfigurationError(f"Unknown geometry keys: {sorted(unknown)}")
    kwargs: dict[str, Any] = {}
    for key in known & set(data):
        value = data[key]
        kwargs[key] = str(value) if key in {"polarization", "rotation"} else float(value)
    return SourceGeometry(crystal=crystal, **kwargs)


@dataclass(frozen=True)
class FilterCalibration:
    """Transmission curve of a longpass colour-glass filter."""

    name: str
    wavelengths_nm: tuple[float, ...]
    transmissions: tuple[float, ...]
    wavelength_uncertainty_nm: float = 0.0

    def __post_init__(self) -> None:
        if len(self.wavelengths_nm) != len(self.transmissions):
            raise ConfigurationError("Calibration wavelength and transmission columns differ in length.")
        if len(self.wavelengths_nm) < 2:
            raise ConfigurationError("A filter calibration needs at least 2 points.")
        lam = np.asarray(self.wavelengths_nm, dtype=float)
        trans = np.asarray(self.transmissions, dtype=float)
        if np.any(np.diff(lam) <= 0):
            raise ConfigurationError("Calibration wavelengths must be strictly increasing.")
        if np.any(np.diff(trans) < 0):
            raise ConfigurationError("A longpass calibration must be non-decreasing in transmission.")
        if np.any((trans < 0) | (trans > 1)):
            raise ConfigurationError("Transmissions must lie in [0, 1].")
        if self.wavelength_uncertainty_nm < 0:
            raise ConfigurationError("wavelength_uncertainty_nm must be non-negative.")


def load_filter_calibration(
    path: str | Path, *, name: str | None = None, wavelength_uncertainty_nm: float = 0.0
) -> FilterCalibration:
    """Read a two-column ``wavelength_nm,transmission`` CSV (header optional)."""

    target = Path(path)
    wavelengths: list[float] = []
    transmissions: list[float] = []
    try:
        text = target.read_bytes().decode("utf-8")
    except UnicodeDecodeError as exc:
        raise ParseError(target, exc.start, "not valid UTF-8") from exc
    for line_no, row in enumerate(csv.reader(text.splitlines()), start=1):
        if not row or row[0].lstrip().startswith("#"):
            continue
        try:
            lam, trans = float(row[0]), float(row[1])
        except (IndexError, ValueError) as exc:
            if line_no == 1:
                continue
            raise ConfigurationError(f"{target}: line {line_no}: expected two numeric columns.") from exc
        wavelengths.append(lam)
        transmissions.append(trans)
    return FilterCalibration(
        name=name or target.stem,
        wavelengths_nm=tuple(wavelengths),
        transmissions=tuple(transmissions),
        wavelength_uncertainty_nm=wavelength_uncertainty_nm,
    )


def transmission_at(cal: FilterCalibration, wavelength_nm: float) -> float:
    """Forward (piecewise-linear) interpolation of the calibration curve."""

    return float(np.interp(wavelength_nm, cal.wavelengths_nm, cal.transmissions))


def wavelength_from_transmission(
    cal: FilterCalibration, measured_t: float, delta_t: float = 0.0
) -> tuple[float, float]:
    """Invert the calibration at ``measured_t``.

    Returns:
        ``(wavelength_nm, uncertainty_nm)`` where the uncertainty combines the
        calibration's wavelength uncertainty with ``delta_t`` divided by the
        local slope, in quadrature.

    Raises:
        DomainError: If ``measured_t`` is outside the calibrated range or falls
            on a flat stretch of the curve.
    """

    lam = np.asarray(cal.wavelengths_nm, dtype=float)
    trans = np.asarray(cal.transmissions, dtype=float)
    if delta_t < 0:
        raise ConfigurationError("delta_t must be non-negative.")
    if not (trans[0] <= measured_t <= trans[-1]) or trans[0] == trans[-1]:
        raise DomainError(
            f"filter not discriminating at this wavelength (T={measured_t} outside "
            f"{trans[0]:g}–{trans[-1]:g} for {cal.name})"
        )
    idx = int(np.searchsorted(trans, measured_t, side="left"))
    if trans[idx] == measured_t:
        wavelength = float(lam[idx])
        slope = 0.0
        for lo, hi in ((idx, idx + 1), (idx - 1, idx)):
            if 0 <= lo and hi < lam.size and trans[hi] > trans[lo]:
                slope = (trans[hi] - trans[lo]) / (lam[hi] - lam[lo])
                break
    else:
        lo, hi = idx - 1, idx
        slope = (trans[hi] - trans[lo]) / (lam[hi] - lam[lo])
        wavelength = float(lam[lo] + (measured_t - trans[lo]) / slope)
    if slope <= 0:
        raise DomainError(f"filter not discriminating at this wavelength (flat curve at T={measured_t})")
    uncertainty = math.hypot(cal.wavelength_uncertainty_nm, delta_t / slope)
    return wavelength, float(uncertainty)
