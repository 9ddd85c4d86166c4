"""Exception hierarchy shared by the library and the command-line tool."""

from __future__ import annotations

from pathlib import Path

__all__ = [
    "PairJitterError",
    "ConfigurationError",
    "ValidityRangeError",
    "DomainError",
    "ParseError",
    "TimeTagValidationError",
    "SolverError",
    "NoPhaseMatchError",
    "FitError",
    "DegenerateFitError",
    "NoPeakError",
    "NormalizationError",
    "ResourceGuardError",
    "StageError",
    "UndefinedRatioError",
]


class PairJitterError(Exception):
    """Base class for every error raised deliberately by :mod:`pairjitter`."""


class ConfigurationError(PairJitterError, ValueError):
    """A user-supplied parameter is invalid or inconsistent."""


class ValidityRangeError(ConfigurationError):
    """A wavelength lies outside a dispersion model's validity window."""

    def __init__(self, wavelength_um: float, valid_range: tuple[float, float], label: str = ""):
        lo, hi = valid_range
        where = f" for {label}" if label else ""
        super().__init__(
            f"Wavelength {wavelength_um:g} µm is outside the validity range "
            f"{lo:g}–{hi:g} µm{where}."
        )
        self.wavelength_um = wavelength_um
        self.valid_range = valid_range


class DomainError(PairJitterError, ValueError):
    """Inputs fall outside the mathematical domain of an operation."""


class ParseError(PairJitterError, ValueError):
    """A file could not be decoded; ``offset`` is the byte offset of the fault."""

    def __init__(self, path: str | Path, offset: int, reason: str):
        super().__init__(f"{path}: byte offset {offset}: {reason}")
        self.path = Path(path)
        self.offset = offset
        self.reason = reason


class TimeTagValidationError(ConfigurationError):
    """Time tags are unsorted or fall outside the acquisition window."""


class SolverError(PairJitterError, RuntimeError):
    """A numerical solver failed to converge."""


class NoPhaseMatchError(SolverError):
    """No sign change of the phase mismatch exists in the search bracket."""


class FitError(PairJitterError, RuntimeError):
    """A histogram fit cannot be performed or produced no usable result."""


class DegenerateFitError(FitError):
    """The normal matrix is singular; ``combination`` names the null direction."""

    def __init__(self, combination: str):
        super().__init__(f"Degenerate fit: unidentifiable parameter combination {combination}.")
        self.combination = combination


class NoPeakError(FitError):
    """The histogram has no coincidence peak above the accidental floor."""


class NormalizationError(PairJitterError, ValueError):
    """The accidental floor is zero so g2 cannot be formed."""


class ResourceGuardError(ConfigurationError):
    """A simulation would exceed the configured tag budget."""

    def __init__(self, estimated_tags: float, limit: float):
        super().__init__(
            f"Simulation refused: about {estimated_tags:.3g} tags expected, "
            f"limit is {limit:.3g}."
        )
        self.estimated_tags = estimated_tags
        self.limit = limit


class StageError(PairJitterError):
    """A stage of the characterization pipeline failed."""

    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"Stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause


class UndefinedRatioError(DomainError):
    """A figure-of-merit ratio is undefined because its denominator is zero."""
