"""Refractive indices of negative uniaxial crystals from Sellmeier coefficients."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Final

import numpy as np

from .errors import ConfigurationError, DomainError, ValidityRangeError

__all__ = [
    "SellmeierSet",
    "UniaxialCrystal",
    "index_ellipse",
    "n_ordinary",
    "n_extraordinary_principal",
    "n_extraordinary",
]

_GRID_POINTS: Final = 200


@dataclass(frozen=True)
class SellmeierSet:
    """Coefficients of ``n²(λ) = b1 + b2/(λ² − b3) − b4·λ²`` with λ in µm."""

    b1: float
    b2: float
    b3: float
    b4: float
    valid_range: tuple[float, float]

    def __post_init__(self) -> None:
        lo, hi = self.valid_range
        if not (0 < lo < hi):
            raise ConfigurationError(
                f"Validity range must satisfy 0 < min < max, got {self.valid_range}."
            )
        if lo * lo - self.b3 <= 0:
            raise ConfigurationError(
                f"Sellmeier pole at λ = {math.sqrt(max(self.b3, 0.0)):g} µm lies inside "
                f"the validity range {lo:g}–{hi:g} µm."
            )
        grid = np.linspace(lo, hi, _GRID_POINTS)
        if np.any(self._n_squared(grid) <= 1.0):
            raise ConfigurationError("Sellmeier set yields n² <= 1 inside its validity range.")

    def _n_squared(self, wavelength_um: np.ndarray | float) -> np.ndarray | float:
        lam2 = wavelength_um * wavelength_um
        return self.b1 + self.b2 / (lam2 - self.b3) - self.b4 * lam2

    def contains(self, wavelength_um: float) -> bool:
        lo, hi = self.valid_range
        return lo <= wavelength_um <= hi

    def index(self, wavelength_um: float, label: str = "") -> float:
        """Return ``n(λ)``; raises :class:`ValidityRangeError` outside the range."""

        if not self.contains(wavelength_um):
            raise ValidityRangeError(wavelength_um, self.valid_range, label)
        return math.sqrt(self._n_squared(wavelength_um))


@dataclass(frozen=True)
class UniaxialCrystal:
    """Ordinary and principal extraordinary dispersion of a uniaxial crystal."""

    name: str
    ordinary: SellmeierSet
    extraordinary_principal: SellmeierSet
    source: str = ""

    def __post_init__(self) -> None:
        lo = max(self.ordinary.valid_range[0], self.extraordinary_principal.valid_range[0])
        hi = min(self.ordinary.valid_range[1], self.extraordinary_principal.valid_range[1])
        if lo >= hi:
            raise ConfigurationError(f"{self.name}: ordinary and extraordinary ranges do not overlap.")
        grid = np.linspace(lo, hi, _GRID_POINTS)
        n_o = np.sqrt(self.ordinary._n_squared(grid))
        n_e = np.sqrt(self.extraordinary_principal._n_squared(grid))
        if np.any(n_e >= n_o):
            raise ConfigurationError(f"{self.name} is not negative uniaxial (n_e >= n_o somewhere).")

    @property
    def valid_range(self) -> tuple[float, float]:
        """Wavelength window (µm) shared by both Sellmeier sets."""

        return (
            max(self.ordinary.valid_range[0], self.extraordinary_principal.valid_range[0]),
            min(self.ordinary.valid_range[1], self.extraordinary_principal.valid_range[1]),
        )


def index_ellipse(n_o: float, n_e: float, theta: float) -> float:
    """Extraordinary index at angle ``theta`` from ``1/n² = cos²θ/n_o² + sin²θ/n_e²``."""

    if theta == 0.0:
        return n_o
    c = math.cos(theta)
    s = math.sin(theta)
    return 1.0 / math.sqrt(c * c / (n_o * n_o) + s * s / (n_e * n_e))


def n_ordinary(crystal: UniaxialCrystal, wavelength_um: float) -> float:
    """Ordinary refractive index of ``crystal`` at ``wavelength_um``."""

    return crystal.ordinary.index(wavelength_um, f"{crystal.name} (ordinary)")


def n_extraordinary_principal(crystal: UniaxialCrystal, wavelength_um: float) -> float:
    """Extraordinary index for propagation perpendicular to the optic axis."""

    return crystal.extraordinary_principal.index(wavelength_um, f"{crystal.name} (extraordinary)")


def n_extraordinary(crystal: UniaxialCrystal, wavelength_um: float, theta: float) -> float:
    """Extraordinary index for propagation at ``theta`` radians to the optic axis.

    Raises:
        DomainError: If ``theta`` is outside ``[0, π/2]``.
        ValidityRangeError: If the wavelength is outside the Sellmeier window.
    """

    if not (0.0 <= theta <= math.pi / 2):
        raise DomainError(f"Propagation angle {theta!r} rad is outside [0, π/2].")
    n_o = n_ordinary(crystal, wavelength_um)
    if theta == 0.0:
        return n_o
    n_e = n_extraordinary_principal(crystal, wavelength_um)
    return index_ellipse(n_o, n_e, theta)
