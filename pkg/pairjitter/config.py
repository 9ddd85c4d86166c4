"""Configuration helpers for histogram construction and output placement."""

from __future__ import annotations

import os
from argparse import Namespace
from collections.abc import Mapping
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Any, Optional

from .errors import ConfigurationError

__all__ = [
    "ENV_BIN_PS",
    "ENV_WINDOW_PS",
    "ENV_WORKERS",
    "ENV_OUTPUT_DIR",
    "HistogramConfig",
    "OutputConfig",
    "build_histogram_config",
    "build_output_config",
    "resolve_output_path",
]

ENV_BIN_PS = "PAIRJITTER_BIN_PS"
ENV_WINDOW_PS = "PAIRJITTER_WINDOW_PS"
ENV_WORKERS = "PAIRJITTER_WORKERS"
ENV_OUTPUT_DIR = "PAIRJITTER_OUTPUT_DIR"

_DEFAULT_BIN_PS = 2
_DEFAULT_HALF_WINDOW_PS = 2000


@dataclass(frozen=True)
class HistogramConfig:
    """Binning of a cross-correlation histogram.

    ``sidebands_ps`` holds ``(start, stop)`` regions used for the accidental
    floor; ``None`` means the outer quarter of the window on each side.
    """

    bin_width_ps: int = _DEFAULT_BIN_PS
    window_ps: tuple[int, int] = (-_DEFAULT_HALF_WINDOW_PS, _DEFAULT_HALF_WINDOW_PS)
    sidebands_ps: Optional[tuple[tuple[float, float], ...]] = None
    workers: int = 1

    def __post_init__(self) -> None:
        if self.bin_width_ps <= 0:
            raise ConfigurationError(f"bin width must be positive, got {self.bin_width_ps}.")
        lo, hi = self.window_ps
        if hi <= lo:
            raise ConfigurationError(f"window must be non-empty, got {self.window_ps}.")
        if (hi - lo) % self.bin_width_ps:
            raise ConfigurationError(
                f"window span {hi - lo} ps is not a whole number of {self.bin_width_ps} ps bins."
            )
        if self.workers < 1:
            raise ConfigurationError(f"workers must be >= 1, got {self.workers}.")

    def to_dict(self) -> dict[str, Any]:
        data = asdict(self)
        data["window_ps"] = list(self.window_ps)
        if self.sidebands_ps is not None:
            data["sidebands_ps"] = [list(region) for region in self.sidebands_ps]
        return data

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> HistogramConfig:
        sidebands = data.get("sidebands_ps")
        try:
            return cls(
                bin_width_ps=int(data.get("bin_width_ps", _DEFAULT_BIN_PS)),
                window_ps=tuple(int(v) for v in data.get("window_ps", cls.window_ps)),  # type: ignore[arg-type]
                sidebands_ps=(
                    None if sidebands is None else tuple((float(a), float(b)) for a, b in sidebands)
                ),
                workers=int(data.get("workers", 1)),
            )
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ConfigurationError):
                raise
            raise ConfigurationError(f"Invalid histogram configuration: {dict(data)}") from exc


@dataclass(frozen=True)
class OutputConfig:
    """Where files produced by a command end up."""

    output_dir: Path

    def resolve(self, value: str | Path) -> Path:
        return resolve_output_path(self.output_dir, value)


def resolve_output_path(base_dir: Path, value: str | Path) -> Path:
    candidate = Path(value).expanduser()
    if candidate.is_absolute():
        return candidate
    return (base_dir / candidate).resolve()


def _env_int(env: Mapping[str, str], name: str) -> Optional[int]:
    raw = env.get(name)
    if raw is None or not raw.strip():
        return None
    try:
        return int(raw)
    except ValueError as exc:
        raise ConfigurationError(f"{name} must be an integer, got {raw!r}.") from exc


def build_histogram_config(
    args: Namespace,
    env: Mapping[str, str] | None = None,
) -> HistogramConfig:
    """Merge CLI flags with environment variables (flag > environment > default).

    ``args`` may provide ``bin``, ``window`` (symmetric half-width),
    ``window_lo``/``window_hi``, ``sideband`` (list of pairs) and ``workers``;
    missing attributes count as unset.
    """

    env = os.environ if env is None else env

    bin_width = getattr(args, "bin", None)
    if bin_width is None:
        bin_width = _env_int(env, ENV_BIN_PS)
    if bin_width is None:
        bin_width = _DEFAULT_BIN_PS

    lo = getattr(args, "window_lo", None)
    hi = getattr(args, "window_hi", None)
    half = getattr(args, "window", None)
    if half is None:
        half = _env_int(env, ENV_WINDOW_PS)
    if half is None:
        half = _DEFAULT_HALF_WINDOW_PS
    if half <= 0:
        raise ConfigurationError(f"window half-width must be positive, got {half}.")
    window = (int(lo) if lo is not None else -int(half), int(hi) if hi is not None else int(half))

    workers = getattr(args, "workers", None)
    if workers is None:
        workers = _env_int(env, ENV_WORKERS)
    if workers is None:
        workers = 1

    sidebands = getattr(args, "sideband", None)
    return HistogramConfig(
        bin_width_ps=int(bin_width),
        window_ps=window,
        sidebands_ps=tuple((float(a), float(b)) for a, b in sidebands) if sidebands else None,
        workers=int(workers),
    )


def build_output_config(args: Namespace, env: Mapping[str, str] | None = None) -> OutputConfig:
    """Output directory from ``--output-dir``, then ``PAIRJITTER_OUTPUT_DIR``, then the cwd."""

    env = os.environ if env is None else env
    flag = getattr(args, "output_dir", None)
    if flag is not None:
        base_dir = Path(flag).expanduser()
    else:
        env_dir = env.get(ENV_OUTPUT_DIR)
        base_dir = Path(env_dir).expanduser() if env_dir else Path.cwd()
    return OutputConfig(output_dir=base_dir)
