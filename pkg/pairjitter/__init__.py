"""Timing-jitter characterization of single-photon detectors with photon pairs."""

from __future__ import annotations

import re
from importlib import metadata as _metadata
from pathlib import Path

from .config import HistogramConfig, OutputConfig, build_histogram_config, build_output_config
from .correlation import (
    CorrelationHistogram,
    G2Result,
    Waveform,
    cross_correlation,
    event_times_from_waveforms,
    load_histogram,
    noise_jitter_estimate,
    normalize_g2,
    save_histogram,
    threshold_crossing_time,
)
from .data.crystals import CrystalRepository, default_crystal, load_crystal, load_default_crystals
from .dispersion import SellmeierSet, UniaxialCrystal, n_extraordinary, n_ordinary
from .errors import (
    ConfigurationError,
    DomainError,
    FitError,
    PairJitterError,
    ParseError,
    SolverError,
    StageError,
)
from .fitting import (
    CharacterizationReport,
    FitResult,
    JitterValue,
    characterize,
    characterize_batch,
    fit_counts,
    fit_histogram,
    initial_guess,
    parse_uncertain,
    subtract_reference,
)
from .models import (
    DoubleGaussian,
    GaussExpTail,
    Gaussian,
    ResponseModel,
    evaluate,
    figures_of_merit,
    fwhm,
    predicted_c12,
    ratio_r,
)
from .phasematch import (
    SourceGeometry,
    calibrate_geometry,
    load_geometry,
    solve_signal_wavelength,
    tuning_curve,
    wavelength_from_transmission,
)
from .simulator import DetectorConfig, SimConfig, SimulationResult, simulate
from .tables import SimpleTable
from .timetag_io import TimeTagStream, load_timetags, save_timetags


def _read_local_version() -> str:
    """Return the project version from ``pyproject.toml`` when not installed."""

    pyproject = Path(__file__).resolve().parent.parent / "pyproject.toml"
    if pyproject.is_file():
        match = re.search(r'^version\s*=\s*"([^"]+)"', pyproject.read_text(), re.MULTILINE)
        if match:
            return match.group(1)
    return "0.0.0"


try:
    __version__ = _metadata.version("pairjitter")
except _metadata.PackageNotFoundError:
    __version__ = _read_local_version()

__all__ = [
    "CharacterizationReport",
    "ConfigurationError",
    "CorrelationHistogram",
    "CrystalRepository",
    "DetectorConfig",
    "DomainError",
    "DoubleGaussian",
    "FitError",
    "FitResult",
    "G2Result",
    "GaussExpTail",
    "Gaussian",
    "HistogramConfig",
    "JitterValue",
    "OutputConfig",
    "PairJitterError",
    "ParseError",
    "ResponseModel",
    "SellmeierSet",
    "SimConfig",
    "SimpleTable",
    "SimulationResult",
    "SolverError",
    "SourceGeometry",
    "StageError",
    "TimeTagStream",
    "UniaxialCrystal",
    "Waveform",
    "build_histogram_config",
    "build_output_config",
    "calibrate_geometry",
    "characterize",
    "characterize_batch",
    "cross_correlation",
    "default_crystal",
    "evaluate",
    "event_times_from_waveforms",
    "figures_of_merit",
    "fit_counts",
    "fit_histogram",
    "fwhm",
    "initial_guess",
    "load_crystal",
    "load_default_crystals",
    "load_geometry",
    "load_histogram",
    "load_timetags",
    "n_extraordinary",
    "n_ordinary",
    "noise_jitter_estimate",
    "normalize_g2",
    "parse_uncertain",
    "predicted_c12",
    "ratio_r",
    "save_histogram",
    "save_timetags",
    "simulate",
    "solve_signal_wavelength",
    "subtract_reference",
    "threshold_crossing_time",
    "tuning_curve",
    "wavelength_from_transmission",
    "__version__",
]
