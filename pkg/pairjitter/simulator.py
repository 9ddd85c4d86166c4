"""Monte Carlo photon-pair time-tag generator used as ground truth.

Pairs are emitted simultaneously at Poisson times; each photon is detected
independently with its detector's efficiency and delayed by a draw from the
detector response. Every random component draws from its own counter-based
substream so switching dark counts on or off leaves the pair sampling
untouched under a fixed seed.
"""

from __future__ import annotations

import json
import logging
import math
from collections.abc import Mapping
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Final

import numpy as np
from numpy.typing import NDArray

from .errors import ConfigurationError, ParseError, ResourceGuardError
from .models import ResponseModel, model_from_dict, model_to_dict, sample
from .timetag_io import TimeTagStream

logger = logging.getLogger(__name__)

__all__ = [
    "MAX_TAGS",
    "DetectorConfig",
    "SimConfig",
    "SimulationResult",
    "expected_tags",
    "expected_accidentals",
    "apply_dead_time",
    "simulate",
    "sim_config_to_dict",
    "sim_config_from_dict",
    "load_sim_config",
    "save_truth",
]

MAX_TAGS: Final = 100_000_000
_SEED_MAX: Final = 2**64 - 1
_SUBSTREAMS: Final = ("pairs", "efficiency_a", "efficiency_b", "response_a", "response_b", "dark_a", "dark_b")


def _rate(name: str, value: float) -> None:
    if not (math.isfinite(value) and value >= 0):
        raise ConfigurationError(f"{name} must be a non-negative finite number, got {value!r}.")


@dataclass(frozen=True)
class DetectorConfig:
    """One detector: response, efficiency, dark rate (1/s), delay and dead time (ps)."""

    response: ResponseModel
    efficiency: float = 1.0
    dark_rate_hz: float = 0.0
    delay_ps: float = 0.0
    dead_time_ps: float = 0.0
    channel: str = ""

    def __post_init__(self) -> None:
        if not 0.0 <= self.efficiency <= 1.0:
            raise ConfigurationError(f"efficiency must be in [0, 1], got {self.efficiency!r}.")
        _rate("dark_rate_hz", self.dark_rate_hz)
        _rate("dead_time_ps", self.dead_time_ps)
        if not math.isfinite(self.delay_ps):
            raise ConfigurationError("delay_ps must be finite.")


@dataclass(frozen=True)
class SimConfig:
    """A two-detector pair-source acquisition."""

    pair_rate_hz: float
    duration_s: float
    detector_a: DetectorConfig
    detector_b: DetectorConfig
    seed: int = 0
    max_tags: int = MAX_TAGS

    def __post_init__(self) -> None:
        _rate("pair_rate_hz", self.pair_rate_hz)
        if not (math.isfinite(self.duration_s) and self.duration_s > 0):
            raise ConfigurationError(f"duration_s must be positive, got {self.duration_s!r}.")
        if not (isinstance(self.seed, int) and 0 <= self.seed <= _SEED_MAX):
            raise ConfigurationError(f"seed must be an integer in [0, 2**64), got {self.seed!r}.")
        if self.max_tags <= 0:
            raise ConfigurationError("max_tags must be positive.")

    @property
    def duration_ps(self) -> int:
        return int(round(self.duration_s * 1e12))

    def singles_rate(self, detector: DetectorConfig) -> float:
        return self.pair_rate_hz * detector.efficiency + detector.dark_rate_hz


@dataclass(frozen=True, eq=False)
class SimulationResult:
    stream_a: TimeTagStream
    stream_b: TimeTagStream
    truth: dict[str, Any] = field(default_factory=dict)


def expected_tags(config: SimConfig) -> float:
    """Mean number of tags over both channels before dead time."""

    return config.duration_s * (config.singles_rate(config.detector_a) + config.singles_rate(config.detector_b))


def expected_accidentals(config: SimConfig, bin_width_ps: float) -> float:
    """Accidental coincidences per bin, ``r₁·r₂·T·Δ``.

    Dead time and the coincidence peak's own contribution to the singles are
    ignored.
    """

    if bin_width_ps <= 0:
        raise ConfigurationError("bin_width_ps must be positive.")
    r1 = config.singles_rate(config.detector_a)
    r2 = config.singles_rate(config.detector_b)
    return r1 * r2 * config.duration_s * bin_width_ps * 1e-12


def apply_dead_time(tags: NDArray[np.int64], dead_time_ps: float) -> NDArray[np.int64]:
    """Non-paralyzable dead time: drop tags closer than ``dead_time_ps`` to the last kept one.

    A tag that follows its predecessor by at least the dead time is always
    kept, so only clusters of closely spaced tags are walked one kept tag at
    a time.
    """

    if dead_time_ps <= 0 or tags.size == 0:
        return tags
    isolated = np.empty(tags.size, dtype=bool)
    isolated[0] = True
    isolated[1:] = np.diff(tags) >= dead_time_ps
    if isolated.all():
        return tags
    keep = isolated.copy()
    successor = np.searchsorted(tags, tags + dead_time_ps, side="left")
    n = tags.size
    for start in np.flatnonzero(isolated[:-1] & ~isolated[1:]):
        i = int(successor[start])
        while i < n and not isolated[i]:
            keep[i] = True
            i = int(successor[i])
    return tags[keep]


def _generators(seed: int) -> dict[str, np.random.Generator]:
    children = np.random.SeedSequence(seed).spawn(len(_SUBSTREAMS))
    return {name: np.random.Generator(np.random.Philox(child)) for name, child in zip(_SUBSTREAMS, children)}


def _channel_tags(
    detector: DetectorConfig,
    emission_ps: NDArray[np.float64],
    efficiency_rng: np.random.Generator,
    response_rng: np.random.Generator,
    dark_rng: np.random.Generator,
    duration_ps: int,
    duration_s: float,
) -> tuple[NDArray[np.int64], dict[str, int], NDArray[np.bool_]]:
    n = emission_ps.size
    detected = efficiency_rng.random(n) < detector.efficiency
    delays = sample(detector.response, response_rng, n)
    photon_times = emission_ps + detector.delay_ps + delays
    n_dark = int(dark_rng.poisson(detector.dark_rate_hz * duration_s))
    dark_times = dark_rng.uniform(0.0, duration_ps, n_dark)
    times = np.concatenate([photon_times[detected], dark_times])
    inside = (times >= 0.0) & (times <= duration_ps)
    dropped = int(times.size - inside.sum())
    tags = np.sort(np.rint(times[inside]).astype(np.int64), kind="stable")
    before = tags.size
    tags = apply_dead_time(tags, detector.dead_time_ps)
    stats = {
        "photons_detected": int(detected.sum()),
        "dark_counts": n_dark,
        "dropped_outside_window": dropped,
        "dead_time_dropped": int(before - tags.size),
        "tags": int(tags.size),
    }
    return tags, stats, detected


def simulate(config: SimConfig) -> SimulationResult:
    """Generate both channels' streams and a truth record.

    Raises:
        ResourceGuardError: If the expected tag count exceeds ``max_tags``.
    """

    estimate = expected_tags(config)
    if estimate > config.max_tags:
        raise ResourceGuardError(estimate, config.max_tags)
    rngs = _generators(config.seed)
    duration_ps = config.duration_ps
    n_pairs = int(rngs["pairs"].poisson(config.pair_rate_hz * config.duration_s))
    emission = rngs["pairs"].uniform(0.0, duration_ps, n_pairs)

    tags_a, stats_a, detected_a = _channel_tags(
        config.detector_a,
        emission,
        rngs["efficiency_a"],
        rngs["response_a"],
        rngs["dark_a"],
        duration_ps,
        config.duration_s,
    )
    tags_b, stats_b, detected_b = _channel_tags(
        config.detector_b,
        emission,
        rngs["efficiency_b"],
        rngs["response_b"],
        rngs["dark_b"],
        duration_ps,
        config.duration_s,
    )
    for label, stats in (("a", stats_a), ("b", stats_b)):
        if stats["dropped_outside_window"]:
            logger.warning(
                "Channel %s: %d tag(s) fell outside [0, T] after delay and jitter and were dropped.",
                label,
                stats["dropped_outside_window"],
            )
    channel_a = config.detector_a.channel or "a"
    channel_b = config.detector_b.channel or "b"
    truth = {
        "config": sim_config_to_dict(config),
        "pairs_emitted": n_pairs,
        "pairs_detected_both": int(np.count_nonzero(detected_a & detected_b)),
        "channels": {channel_a: stats_a, channel_b: stats_b},
        "expected_accidentals_per_ps": expected_accidentals(config, 1.0),
    }
    logger.info(
        "Simulated %d pairs over %.3g s: %d + %d tags", n_pairs, config.duration_s, tags_a.size, tags_b.size
    )
    return SimulationResult(
        stream_a=TimeTagStream(channel_a, tags_a, duration_ps),
        stream_b=TimeTagStream(channel_b, tags_b, duration_ps),
        truth=truth,
    )


def _detector_to_dict(detector: DetectorConfig) -> dict[str, Any]:
    return {
        "channel": detector.channel,
        "response": model_to_dict(detector.response),
        "efficiency": detector.efficiency,
        "dark_rate_hz": detector.dark_rate_hz,
        "delay_ps": detector.delay_ps,
        "dead_time_ps": detector.dead_time_ps,
    }


def sim_config_to_dict(config: SimConfig) -> dict[str, Any]:
    return {
        "pair_rate_hz": config.pair_rate_hz,
        "duration_s": config.duration_s,
        "seed": config.seed,
        "max_tags": config.max_tags,
        "detectors": {"a": _detector_to_dict(config.detector_a), "b": _detector_to_dict(config.detector_b)},
    }


def _detector_from_dict(data: Any, label: str) -> DetectorConfig:
    if not isinstance(data, Mapping) or "response" not in data:
        raise ConfigurationError(f"Detector {label!r} needs a 'response' model.")
    known = {"channel", "response", "efficiency", "dark_rate_hz", "delay_ps", "dead_time_ps"}
    unknown = set(data) - known
    if unknown:
        raise ConfigurationError(f"Unknown keys for detector {label!r}: {sorted(unknown)}")
    try:
        return DetectorConfig(
            response=model_from_dict(data["response"]),
            efficiency=float(data.get("efficiency", 1.0)),
            dark_rate_hz=float(data.get("dark_rate_hz", 0.0)),
            delay_ps=float(data.get("delay_ps", 0.0)),
            dead_time_ps=float(data.get("dead_time_ps", 0.0)),
            channel=str(data.get("channel", label)),
        )
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigurationError):
            raise
        raise ConfigurationError(f"Invalid detector {label!r}: {exc}") from exc


def sim_config_from_dict(data: Mapping[str, Any]) -> SimConfig:
    detectors = data.get("detectors")
    if not isinstance(detectors, Mapping) or set(detectors) != {"a", "b"}:
        raise ConfigurationError("Simulation config needs 'detectors' with keys 'a' and 'b'.")
    try:
        return SimConfig(
            pair_rate_hz=float(data["pair_rate_hz"]),
            duration_s=float(data["duration_s"]),
            detector_a=_detector_from_dict(detectors["a"], "a"),
            detector_b=_detector_from_dict(detectors["b"], "b"),
            seed=int(data.get("seed", 0)),
            max_tags=int(data.get("max_tags", MAX_TAGS)),
        )
    except KeyError as exc:
        raise ConfigurationError(f"Simulation config is missing {exc.args[0]!r}.") from None
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigurationError):
            raise
        raise ConfigurationError(f"Invalid simulation config: {exc}") from exc


def load_sim_config(path: str | Path) -> SimConfig:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except UnicodeDecodeError as exc:
        raise ParseError(path, exc.start, "not valid UTF-8") from exc
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"Failed to parse simulation config {path}: {exc}") from exc
    if not isinstance(data, Mapping):
        raise ConfigurationError("Simulation config must be a JSON object.")
    return sim_config_from_dict(data)


def save_truth(result: SimulationResult, path: str | Path) -> Path:
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    target.write_text(json.dumps(result.truth, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return target
