"""Tests for flag/environment/default precedence of run settings."""

from __future__ import annotations

from argparse import Namespace
from pathlib import Path

import pytest

from pairjitter.config import (
    ENV_BIN_PS,
    ENV_OUTPUT_DIR,
    ENV_WINDOW_PS,
    ENV_WORKERS,
    HistogramConfig,
    build_histogram_config,
    build_output_config,
)
from pairjitter.errors import ConfigurationError


def test_defaults_without_flags_or_environment() -> None:
    config = build_histogram_config(Namespace(), env={})
    assert config == HistogramConfig()
    assert config.bin_width_ps == 2
    assert config.window_ps == (-2000, 2000)
    assert config.sidebands_ps is None
    assert config.workers == 1


def test_environment_overrides_defaults() -> None:
    env = {ENV_BIN_PS: "4", ENV_WINDOW_PS: "1000", ENV_WORKERS: "3"}
    config = build_histogram_config(Namespace(), env=env)
    assert (config.bin_width_ps, config.window_ps, config.workers) == (4, (-1000, 1000), 3)


def test_flags_override_environment() -> None:
    env = {ENV_BIN_PS: "4", ENV_WINDOW_PS: "1000"}
    args = Namespace(bin=10, window=None, window_lo=-500, window_hi=1500, sideband=[[-500, -300], [1200, 1500]])
    config = build_histogram_config(args, env=env)
    assert config.bin_width_ps == 10
    assert config.window_ps == (-500, 1500)
    assert config.sidebands_ps == ((-500.0, -300.0), (1200.0, 1500.0))


def test_bad_environment_value_names_the_variable() -> None:
    with pytest.raises(ConfigurationError, match=ENV_BIN_PS):
        build_histogram_config(Namespace(), env={ENV_BIN_PS: "two"})


@pytest.mark.parametrize(
    "kwargs",
    [{"bin_width_ps": 0}, {"window_ps": (10, -10)}, {"bin_width_ps": 3, "window_ps": (-10, 10)}, {"workers": 0}],
)
def test_histogram_config_validation(kwargs: dict) -> None:  # type: ignore[type-arg]
    with pytest.raises(ConfigurationError):
        HistogramConfig(**kwargs)


def test_histogram_config_dict_round_trip() -> None:
    config = HistogramConfig(bin_width_ps=5, window_ps=(-100, 400), sidebands_ps=((-100.0, 0.0),), workers=2)
    data = config.to_dict()
    assert data["window_ps"] == [-100, 400]
    assert HistogramConfig.from_dict(data) == config
    with pytest.raises(ConfigurationError):
        HistogramConfig.from_dict({"bin_width_ps": "wide"})


def test_output_dir_precedence(tmp_path: Path, monkeypatch: pytest.MonkeyPatch) -> None:
    monkeypatch.chdir(tmp_path)
    assert build_output_config(Namespace(), env={}).output_dir == tmp_path
    env_dir = tmp_path / "env"
    assert build_output_config(Namespace(), env={ENV_OUTPUT_DIR: str(env_dir)}).output_dir == env_dir
    flagged = build_output_config(Namespace(output_dir=tmp_path / "flag"), env={ENV_OUTPUT_DIR: str(env_dir)})
    assert flagged.output_dir == tmp_path / "flag"
    assert flagged.resolve("r.json") == (tmp_path / "flag" / "r.json").resolve()
    assert flagged.resolve(tmp_path / "abs.json") == tmp_path / "abs.json"
