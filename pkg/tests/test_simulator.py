"""Tests for the Monte Carlo pair-source simulator."""

from __future__ import annotations

import json
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from pairjitter.correlation import cross_correlation
from pairjitter.errors import ConfigurationError, ResourceGuardError
from pairjitter.models import Gaussian
from pairjitter.simulator import (
    DetectorConfig,
    SimConfig,
    apply_dead_time,
    expected_accidentals,
    expected_tags,
    load_sim_config,
    save_truth,
    sim_config_from_dict,
    sim_config_to_dict,
    simulate,
)


@pytest.fixture
def config() -> SimConfig:
    return SimConfig(
        pair_rate_hz=1e5,
        duration_s=0.05,
        detector_a=DetectorConfig(Gaussian(0.0, 20.0), efficiency=0.5, channel="dut"),
        detector_b=DetectorConfig(Gaussian(0.0, 16.7), efficiency=0.4, channel="ref"),
        seed=42,
    )


def test_same_seed_is_reproducible(config: SimConfig) -> None:
    first = simulate(config)
    second = simulate(config)
    np.testing.assert_array_equal(first.stream_a.timestamps, second.stream_a.timestamps)
    np.testing.assert_array_equal(first.stream_b.timestamps, second.stream_b.timestamps)
    assert first.truth == second.truth
    other = simulate(replace(config, seed=43))
    assert not np.array_equal(first.stream_a.timestamps, other.stream_a.timestamps)


def test_dark_counts_do_not_disturb_pair_sampling(config: SimConfig) -> None:
    base = simulate(config)
    noisy = simulate(replace(config, detector_a=replace(config.detector_a, dark_rate_hz=1e4)))
    assert base.truth["pairs_detected_both"] == noisy.truth["pairs_detected_both"]
    assert set(base.stream_a.timestamps.tolist()) <= set(noisy.stream_a.timestamps.tolist())


def test_streams_are_sorted_and_inside_window(config: SimConfig) -> None:
    result = simulate(config)
    for stream in (result.stream_a, result.stream_b):
        assert np.all(np.diff(stream.timestamps) >= 0)
        assert stream.timestamps.min() >= 0
        assert stream.timestamps.max() <= config.duration_ps
    assert result.stream_a.channel == "dut"
    assert result.stream_b.channel == "ref"


def test_tag_budget_guard(config: SimConfig) -> None:
    guarded = replace(config, max_tags=1000)
    assert expected_tags(guarded) == pytest.approx(0.05 * (5e4 + 4e4))
    with pytest.raises(ResourceGuardError) as info:
        simulate(guarded)
    assert info.value.limit == 1000


def test_expected_accidentals_per_bin() -> None:
    cfg = SimConfig(
        pair_rate_hz=0.0,
        duration_s=100.0,
        detector_a=DetectorConfig(Gaussian(0.0, 10.0), dark_rate_hz=1e4),
        detector_b=DetectorConfig(Gaussian(0.0, 10.0), dark_rate_hz=1e4),
    )
    assert expected_accidentals(cfg, 2.0) == pytest.approx(0.02)
    with pytest.raises(ConfigurationError):
        expected_accidentals(cfg, 0.0)


def test_dark_only_streams_give_flat_floor() -> None:
    cfg = SimConfig(
        pair_rate_hz=0.0,
        duration_s=1.0,
        detector_a=DetectorConfig(Gaussian(0.0, 10.0), dark_rate_hz=2e5),
        detector_b=DetectorConfig(Gaussian(0.0, 10.0), dark_rate_hz=2e5),
        seed=9,
    )
    result = simulate(cfg)
    h = cross_correlation(result.stream_a, result.stream_b, (-50_000, 50_000), 1000)
    expected = expected_accidentals(cfg, 1000.0)
    assert h.counts.mean() == pytest.approx(expected, rel=0.05)
    assert result.truth["pairs_emitted"] == 0


def test_peak_area_matches_pair_rate(config: SimConfig) -> None:
    result = simulate(config)
    h = cross_correlation(result.stream_a, result.stream_b, (-500, 500), 2)
    expected = config.pair_rate_hz * config.duration_s * 0.5 * 0.4
    assert result.truth["pairs_detected_both"] == pytest.approx(expected, rel=0.1)
    assert abs(int(h.counts.sum()) - result.truth["pairs_detected_both"]) <= 5


def test_apply_dead_time_is_non_paralyzable() -> None:
    tags = np.array([0, 5, 9, 10, 12, 25, 30], dtype=np.int64)
    np.testing.assert_array_equal(apply_dead_time(tags, 10), [0, 10, 25])
    np.testing.assert_array_equal(apply_dead_time(tags, 0), tags)


def _dead_time_by_walking(tags: np.ndarray, dead_time_ps: float) -> np.ndarray:
    kept = [int(tags[0])]
    for tag in tags[1:]:
        if tag - kept[-1] >= dead_time_ps:
            kept.append(int(tag))
    return np.asarray(kept, dtype=np.int64)


@pytest.mark.parametrize("dead_time_ps", [1.0, 50.0, 400.0, 5000.0])
def test_dead_time_matches_tag_by_tag_walk(rng: np.random.Generator, dead_time_ps: float) -> None:
    tags = np.sort(rng.integers(0, 2_000_000, 20_000)).astype(np.int64)
    np.testing.assert_array_equal(apply_dead_time(tags, dead_time_ps), _dead_time_by_walking(tags, dead_time_ps))


def test_dead_time_spacing_in_simulation(config: SimConfig) -> None:
    cfg = replace(config, detector_b=replace(config.detector_b, dead_time_ps=22_000_000.0))
    result = simulate(cfg)
    assert np.all(np.diff(result.stream_b.timestamps) >= 22_000_000)
    channel = result.truth["channels"]["ref"]
    assert channel["dead_time_dropped"] > 0
    assert channel["tags"] == len(result.stream_b)


@pytest.mark.parametrize(
    "kwargs",
    [
        {"efficiency": 1.5},
        {"dark_rate_hz": -1.0},
        {"delay_ps": float("inf")},
    ],
)
def test_detector_validation(kwargs: dict) -> None:  # type: ignore[type-arg]
    with pytest.raises(ConfigurationError):
        DetectorConfig(Gaussian(0.0, 1.0), **kwargs)


def test_sim_config_validation(config: SimConfig) -> None:
    with pytest.raises(ConfigurationError):
        replace(config, duration_s=0.0)
    with pytest.raises(ConfigurationError):
        replace(config, seed=-1)


def test_config_json_round_trip(config: SimConfig, tmp_path: Path) -> None:
    path = tmp_path / "sim.json"
    path.write_text(json.dumps(sim_config_to_dict(config)), encoding="utf-8")
    assert load_sim_config(path) == config


def test_config_rejects_unknown_detector_keys(config: SimConfig) -> None:
    data = sim_config_to_dict(config)
    data["detectors"]["a"]["gain"] = 3
    with pytest.raises(ConfigurationError, match="gain"):
        sim_config_from_dict(data)
    with pytest.raises(ConfigurationError, match="'a' and 'b'"):
        sim_config_from_dict({"pair_rate_hz": 1.0, "duration_s": 1.0, "detectors": {"a": {}}})


def test_truth_file(config: SimConfig, tmp_path: Path) -> None:
    result = simulate(config)
    path = save_truth(result, tmp_path / "out" / "truth.json")
    truth = json.loads(path.read_text(encoding="utf-8"))
    assert truth["config"]["seed"] == 42
    assert truth["channels"]["dut"]["tags"] == len(result.stream_a)
