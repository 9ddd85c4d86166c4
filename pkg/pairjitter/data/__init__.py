"""Data files bundled with pairjitter: crystal coefficients and default geometry."""

from __future__ import annotations

from .crystals import (
    BUNDLED_CRYSTAL_FILES,
    CrystalRepository,
    crystal_from_dict,
    default_crystal,
    load_crystal,
    load_crystals,
    load_default_crystals,
    normalise_name,
)

__all__ = [
    "BUNDLED_CRYSTAL_FILES",
    "CrystalRepository",
    "crystal_from_dict",
    "default_crystal",
    "load_crystal",
    "load_crystals",
    "load_default_crystals",
    "normalise_name",
]
