"""Tests covering public package re-exports."""

from __future__ import annotations

import pairjitter
from pairjitter import characterize, cross_correlation, fwhm, simulate, subtract_reference
from pairjitter.correlation import cross_correlation as module_cross_correlation
from pairjitter.fitting import characterize as module_characterize
from pairjitter.fitting import subtract_reference as module_subtract_reference
from pairjitter.models import fwhm as module_fwhm
from pairjitter.simulator import simulate as module_simulate


def test_pipeline_functions_are_reexported() -> None:
    """The package namespace should reference the implementing modules' functions."""

    assert characterize is module_characterize
    assert subtract_reference is module_subtract_reference
    assert cross_correlation is module_cross_correlation
    assert fwhm is module_fwhm
    assert simulate is module_simulate


def test_all_names_resolve() -> None:
    for name in pairjitter.__all__:
        assert hasattr(pairjitter, name), name
    assert pairjitter.__all__.index("__version__") == len(pairjitter.__all__) - 1


def test_version_is_a_release_string() -> None:
    parts = pairjitter.__version__.split(".")
    assert len(parts) >= 3
    assert all(part.isdigit() for part in parts[:3])
