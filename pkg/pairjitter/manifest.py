"""Run manifests written next to every file a command produces."""

from __future__ import annotations

import hashlib
import json
import os
from collections.abc import Iterable, Iterator, Mapping, Sequence
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Optional

from .errors import ConfigurationError, ParseError

__all__ = [
    "MANIFEST_SUFFIX",
    "RunManifest",
    "file_digest",
    "manifest_path_for",
    "build_manifest",
    "write_manifest",
    "load_manifest",
    "changed_outputs",
    "working_directory",
]

MANIFEST_SUFFIX = ".manifest.json"
_CHUNK = 1 << 20


@dataclass(frozen=True)
class RunManifest:
    """What ran, with which inputs and settings, and what it produced."""

    subcommand: str
    argv: list[str]
    config: dict[str, Any]
    inputs: dict[str, str]
    outputs: dict[str, str]
    version: str
    cwd: str
    seed: Optional[int] = None
    timestamp: str = field(default_factory=lambda: datetime.now(timezone.utc).isoformat())

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


def file_digest(path: str | Path) -> str:
    """``sha256:<hex>`` of a file's bytes."""

    digest = hashlib.sha256()
    with Path(path).open("rb") as handle:
        for block in iter(lambda: handle.read(_CHUNK), b""):
            digest.update(block)
    return f"sha256:{digest.hexdigest()}"


def manifest_path_for(output: str | Path) -> Path:
    target = Path(output)
    return target.with_name(target.name + MANIFEST_SUFFIX)


def build_manifest(
    subcommand: str,
    argv: Sequence[str],
    config: Mapping[str, Any],
    inputs: Iterable[str | Path],
    outputs: Iterable[str | Path],
    *,
    seed: Optional[int] = None,
) -> RunManifest:
    from . import __version__

    return RunManifest(
        subcommand=subcommand,
        argv=list(argv),
        config=dict(config),
        inputs={str(Path(p)): file_digest(p) for p in inputs},
        outputs={str(Path(p)): file_digest(p) for p in outputs},
        version=__version__,
        cwd=os.getcwd(),
        seed=seed,
    )


def write_manifest(manifest: RunManifest, output: str | Path) -> Path:
    """Write ``manifest`` as ``<output>.manifest.json``."""

    target = manifest_path_for(output)
    target.parent.mkdir(parents=True, exist_ok=True)
    target.write_text(json.dumps(manifest.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return target


def load_manifest(path: str | Path) -> RunManifest:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except UnicodeDecodeError as exc:
        raise ParseError(path, exc.start, "not valid UTF-8") from exc
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"Failed to parse manifest {path}: {exc}") from exc
    try:
        return RunManifest(
            subcommand=str(data["subcommand"]),
            argv=[str(arg) for arg in data["argv"]],
            config=dict(data.get("config", {})),
            inputs=dict(data.get("inputs", {})),
            outputs=dict(data.get("outputs", {})),
            version=str(data.get("version", "")),
            cwd=str(data.get("cwd", os.getcwd())),
            seed=data.get("seed"),
            timestamp=str(data.get("timestamp", "")),
        )
    except (KeyError, TypeError) as exc:
        raise ConfigurationError(f"Manifest {path} lacks required fields: {exc}") from exc


def changed_outputs(manifest: RunManifest) -> list[str]:
    """Outputs whose current digest differs from the recorded one (or that vanished)."""

    changed = []
    for name, recorded in manifest.outputs.items():
        path = Path(manifest.cwd) / name
        if not path.is_file() or file_digest(path) != recorded:
            changed.append(name)
    return changed


@contextmanager
def working_directory(path: str | Path) -> Iterator[None]:
    previous = os.getcwd()
    os.chdir(path)
    try:
        yield
    finally:
        os.chdir(previous)
