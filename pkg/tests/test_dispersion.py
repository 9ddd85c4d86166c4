"""Unit tests for crystal dispersion and the bundled coefficient files."""

from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np
import pytest

from pairjitter.data.crystals import load_crystal, load_default_crystals
from pairjitter.dispersion import (
    SellmeierSet,
    UniaxialCrystal,
    index_ellipse,
    n_extraordinary,
    n_extraordinary_principal,
    n_ordinary,
)
from pairjitter.errors import ConfigurationError, DomainError, ValidityRangeError

# Published BBO indices (crystal vendor handbook values).
REFERENCE_INDICES = [
    (1.064, 1.6551, 1.5425),
    (0.532, 1.6749, 1.5555),
    (0.4047, 1.6927, 1.5680),
]


@pytest.mark.parametrize(("wavelength_um", "n_o", "n_e"), REFERENCE_INDICES)
def test_bbo_matches_published_table(bbo: UniaxialCrystal, wavelength_um: float, n_o: float, n_e: float) -> None:
    assert n_ordinary(bbo, wavelength_um) == pytest.approx(n_o, abs=1e-3)
    assert n_extraordinary_principal(bbo, wavelength_um) == pytest.approx(n_e, abs=1e-3)


def test_normal_dispersion_and_negative_uniaxial(bbo: UniaxialCrystal) -> None:
    assert n_ordinary(bbo, 1.0) < n_ordinary(bbo, 0.5)
    assert n_extraordinary_principal(bbo, 0.405) < n_ordinary(bbo, 0.405)


@pytest.mark.parametrize("wavelength_um", [10.0, 0.05])
def test_out_of_range_wavelength_names_the_range(bbo: UniaxialCrystal, wavelength_um: float) -> None:
    with pytest.raises(ValidityRangeError, match="0.22"):
        n_ordinary(bbo, wavelength_um)
    with pytest.raises(ValidityRangeError):
        n_extraordinary_principal(bbo, wavelength_um)


def test_extraordinary_endpoints(bbo: UniaxialCrystal) -> None:
    lam = 0.405
    assert n_extraordinary(bbo, lam, 0.0) == n_ordinary(bbo, lam)
    assert n_extraordinary(bbo, lam, math.pi / 2) == pytest.approx(n_extraordinary_principal(bbo, lam), abs=1e-12)
    middle = n_extraordinary(bbo, lam, math.pi / 4)
    assert n_extraordinary_principal(bbo, lam) < middle < n_ordinary(bbo, lam)


def test_extraordinary_strictly_decreasing_in_angle(bbo: UniaxialCrystal) -> None:
    thetas = np.linspace(0.0, math.pi / 2, 100)
    values = np.array([n_extraordinary(bbo, 0.81, float(t)) for t in thetas])
    assert np.all(np.diff(values) < 0)


@pytest.mark.parametrize("theta", [-0.1, math.pi / 2 + 1e-6])
def test_angle_outside_quadrant_is_domain_error(bbo: UniaxialCrystal, theta: float) -> None:
    with pytest.raises(DomainError):
        n_extraordinary(bbo, 0.5, theta)


def test_indices_bounded_over_validity_range(bbo: UniaxialCrystal) -> None:
    lo, hi = bbo.valid_range
    for lam in np.linspace(lo, hi, 50):
        for value in (n_ordinary(bbo, float(lam)), n_extraordinary_principal(bbo, float(lam))):
            assert 1.0 < value < 3.0


def test_index_ellipse_is_the_shared_kernel(bbo: UniaxialCrystal) -> None:
    lam, theta = 0.7, 0.6
    expected = index_ellipse(n_ordinary(bbo, lam), n_extraordinary_principal(bbo, lam), theta)
    assert n_extraordinary(bbo, lam, theta) == expected


def test_sellmeier_rejects_pole_inside_range() -> None:
    with pytest.raises(ConfigurationError, match="pole"):
        SellmeierSet(2.7, 0.02, 0.09, 0.01, valid_range=(0.2, 1.0))


def test_crystal_must_be_negative_uniaxial() -> None:
    ordinary = SellmeierSet(2.3730, 0.0128, 0.0156, 0.0044, (0.22, 1.9))
    extraordinary = SellmeierSet(2.7405, 0.0184, 0.0179, 0.0155, (0.22, 1.9))
    with pytest.raises(ConfigurationError, match="negative uniaxial"):
        UniaxialCrystal("swapped", ordinary, extraordinary)


def test_repository_aliases_resolve_to_default_set() -> None:
    repo = load_default_crystals()
    default = repo.get("BBO")
    assert repo.get("beta-BBO") is default
    assert repo.get("bbo_eimerl") is default
    assert repo.get("bbo_kato") is not default
    assert "Eimerl" in default.source
    with pytest.raises(KeyError):
        repo.get("KTP")


def test_load_crystal_from_user_file(tmp_path: Path) -> None:
    path = tmp_path / "bbo_copy.json"
    path.write_text(
        json.dumps(
            {
                "name": "BBO copy",
                "valid_range_um": [0.22, 1.9],
                "ordinary": {"b1": 2.7405, "b2": 0.0184, "b3": 0.0179, "b4": 0.0155},
                "extraordinary": {"b1": 2.3730, "b2": 0.0128, "b3": 0.0156, "b4": 0.0044},
            }
        ),
        encoding="utf-8",
    )
    crystal = load_crystal(path)
    assert crystal.name == "BBO copy"
    assert n_ordinary(crystal, 0.532) == pytest.approx(1.6749, abs=1e-3)


def test_load_crystal_rejects_missing_block(tmp_path: Path) -> None:
    path = tmp_path / "broken.json"
    path.write_text(json.dumps({"name": "x", "valid_range_um": [0.3, 1.0], "ordinary": {}}), encoding="utf-8")
    with pytest.raises(ConfigurationError):
        load_crystal(path)
