"""Crystal dispersion coefficient files bundled with pairjitter."""

from __future__ import annotations

import json
import re
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Any, Iterable, Iterator, Mapping

from ..dispersion import SellmeierSet, UniaxialCrystal
from ..errors import ConfigurationError

__all__ = [
    "BUNDLED_CRYSTAL_FILES",
    "CrystalRepository",
    "normalise_name",
    "crystal_from_dict",
    "load_crystal",
    "load_crystals",
    "load_default_crystals",
    "default_crystal",
]

# Order matters: the first file claims shared aliases such as "bbo".
BUNDLED_CRYSTAL_FILES: tuple[str, ...] = ("bbo_eimerl.json", "bbo_kato.json")


def normalise_name(value: str) -> str:
    """Lower-case ``value`` and strip everything but letters and digits."""

    return re.sub(r"[^a-z0-9]", "", value.lower())


class CrystalRepository:
    """In-memory index of :class:`UniaxialCrystal` keyed by several aliases."""

    def __init__(self, entries: Iterable[tuple[UniaxialCrystal, Iterable[str]]]):
        self._entries: list[UniaxialCrystal] = []
        aliases: dict[str, UniaxialCrystal] = {}
        for crystal, names in entries:
            self._entries.append(crystal)
            for name in (crystal.name, *names):
                key = normalise_name(name)
                if key:
                    aliases.setdefault(key, crystal)
        self._aliases = aliases

    def get(self, identifier: str) -> UniaxialCrystal:
        """Return the crystal for *identifier* or raise :class:`KeyError`."""

        crystal = self._aliases.get(normalise_name(identifier))
        if crystal is None:
            raise KeyError(identifier)
        return crystal

    def names(self) -> list[str]:
        return [crystal.name for crystal in self._entries]

    def __contains__(self, identifier: str) -> bool:
        return normalise_name(identifier) in self._aliases

    def __iter__(self) -> Iterator[UniaxialCrystal]:
        yield from self._entries


def _sellmeier(payload: Any, valid_range: tuple[float, float], label: str) -> SellmeierSet:
    if not isinstance(payload, Mapping):
        raise ConfigurationError(f"Crystal file is missing the '{label}' coefficient block.")
    try:
        return SellmeierSet(
            b1=float(payload["b1"]),
            b2=float(payload["b2"]),
            b3=float(payload["b3"]),
            b4=float(payload["b4"]),
            valid_range=valid_range,
        )
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, ConfigurationError):
            raise
        raise ConfigurationError(f"Invalid '{label}' coefficients: {payload}") from exc


def crystal_from_dict(data: Mapping[str, Any]) -> tuple[UniaxialCrystal, list[str]]:
    """Build a crystal and its alias list from a decoded coefficient file."""

    try:
        name = str(data["name"]).strip()
        lo, hi = (float(value) for value in data["valid_range_um"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigurationError("Crystal file needs 'name' and a two-item 'valid_range_um'.") from exc
    if not name:
        raise ConfigurationError("Crystal name cannot be empty.")
    crystal = UniaxialCrystal(
        name=name,
        ordinary=_sellmeier(data.get("ordinary"), (lo, hi), "ordinary"),
        extraordinary_principal=_sellmeier(data.get("extraordinary"), (lo, hi), "extraordinary"),
        source=str(data.get("source", "")),
    )
    aliases = [str(alias) for alias in data.get("aliases", [])]
    if data.get("slug"):
        aliases.append(str(data["slug"]))
    return crystal, aliases


def _read_payload(path: str | Path | None, bundled_name: str | None = None) -> Mapping[str, Any]:
    if path is None:
        raw = resources.files(__package__).joinpath(bundled_name or "").read_text(encoding="utf-8")
        origin = bundled_name
    else:
        raw = Path(path).read_text(encoding="utf-8")
        origin = str(path)
    try:
        data = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"Failed to parse crystal file {origin}: {exc}") from exc
    if not isinstance(data, Mapping):
        raise ConfigurationError(f"Crystal file {origin} must contain a JSON object.")
    return data


def load_crystal(path: str | Path) -> UniaxialCrystal:
    """Load a single crystal coefficient file."""

    crystal, _ = crystal_from_dict(_read_payload(path))
    return crystal


def load_crystals(paths: Iterable[str | Path] | None = None) -> CrystalRepository:
    """Load *paths*, or every bundled coefficient file when omitted."""

    if paths is None:
        payloads = [_read_payload(None, name) for name in BUNDLED_CRYSTAL_FILES]
    else:
        payloads = [_read_payload(path) for path in paths]
    return CrystalRepository(crystal_from_dict(payload) for payload in payloads)


@lru_cache(maxsize=1)
def load_default_crystals() -> CrystalRepository:
    """Return the cached repository of bundled crystals."""

    return load_crystals()


def default_crystal() -> UniaxialCrystal:
    """The default BBO coefficient set."""

    return load_default_crystals().get("BBO")
