"""Test configuration, path setup and shared fixtures for the pairjitter suite."""

from __future__ import annotations

import sys
from pathlib import Path

import numpy as np
import pytest

ROOT = Path(__file__).resolve().parents[1]
if str(ROOT) not in sys.path:
    sys.path.insert(0, str(ROOT))

from pairjitter.data.crystals import default_crystal  # noqa: E402
from pairjitter.dispersion import UniaxialCrystal  # noqa: E402
from pairjitter.phasematch import SourceGeometry, load_geometry  # noqa: E402


@pytest.fixture(scope="session")
def bbo() -> UniaxialCrystal:
    return default_crystal()


@pytest.fixture(scope="session")
def geometry() -> SourceGeometry:
    """The bundled, calibrated BBO source."""

    return load_geometry()


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20240611)
