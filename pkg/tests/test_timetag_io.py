"""Tests for time-tag streams and their CSV/binary file formats."""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np
import pytest

from pairjitter.errors import ConfigurationError, ParseError, TimeTagValidationError
from pairjitter.timetag_io import (
    BINARY_HEADER_SIZE,
    BINARY_MAGIC,
    TimeTagStream,
    infer_format,
    load_timetags,
    save_timetags,
)


def test_stream_rejects_unsorted_and_out_of_range() -> None:
    with pytest.raises(TimeTagValidationError, match="decrease at index 2"):
        TimeTagStream("a", np.array([1, 5, 3]), 10)
    with pytest.raises(TimeTagValidationError):
        TimeTagStream("a", np.array([1, 5, 30]), 10)


def test_stream_does_not_freeze_caller_array() -> None:
    tags = np.array([1, 2, 3], dtype=np.int64)
    stream = TimeTagStream("a", tags, 10)
    tags[0] = 0
    assert tags.flags.writeable
    assert not stream.timestamps.flags.writeable


def test_rates_and_shift() -> None:
    stream = TimeTagStream("a", np.arange(0, 1_000_000, 1000), 1_000_000)
    assert len(stream) == 1000
    assert stream.rate_hz == pytest.approx(1e9)
    shifted = stream.shifted(500)
    assert shifted.timestamps[0] == 500
    assert shifted.duration_ps == 1_000_500
    assert TimeTagStream("empty", np.array([], dtype=np.int64), 0).rate_hz == 0.0


def test_from_unsorted_infers_duration() -> None:
    stream = TimeTagStream.from_unsorted("a", [30, 10, 20])
    assert stream.timestamps.tolist() == [10, 20, 30]
    assert stream.duration_ps == 30


def test_infer_format_from_suffix() -> None:
    assert infer_format("tags.bin") == "bin"
    assert infer_format("tags.TTG") == "bin"
    assert infer_format("tags.csv") == "csv"
    assert infer_format("tags") == "csv"


def test_csv_reports_byte_offset_of_bad_record(tmp_path: Path) -> None:
    path = tmp_path / "tags.csv"
    path.write_bytes(b"# duration_ps=100\n10\n2x\n30\n")
    with pytest.raises(ParseError) as info:
        load_timetags(path)
    assert info.value.offset == len(b"# duration_ps=100\n10\n")
    assert info.value.path == path


def test_csv_negative_timestamp_is_parse_error(tmp_path: Path) -> None:
    path = tmp_path / "tags.csv"
    path.write_text("5\n-1\n", encoding="utf-8")
    with pytest.raises(ParseError, match="negative"):
        load_timetags(path)


def test_empty_csv_is_empty_stream(tmp_path: Path) -> None:
    path = tmp_path / "empty.csv"
    path.write_bytes(b"")
    stream = load_timetags(path)
    assert len(stream) == 0
    assert stream.channel == "empty"


def test_unsorted_file_requires_sort_flag(tmp_path: Path) -> None:
    path = tmp_path / "tags.csv"
    path.write_text("# duration_ps=50\n20\n10\n40\n", encoding="utf-8")
    with pytest.raises(TimeTagValidationError, match="sort=True"):
        load_timetags(path)
    stream = load_timetags(path, sort=True, channel="dut")
    assert stream.timestamps.tolist() == [10, 20, 40]
    assert stream.channel == "dut"
    assert stream.duration_ps == 50


def test_binary_header_and_partial_record(tmp_path: Path) -> None:
    path = tmp_path / "tags.bin"
    payload = BINARY_MAGIC + struct.pack("<Q", 1000) + struct.pack("<QQ", 5, 7) + b"\x01\x02\x03"
    path.write_bytes(payload)
    with pytest.raises(ParseError) as info:
        load_timetags(path)
    assert info.value.offset == BINARY_HEADER_SIZE + 16


def test_binary_empty_file_is_parse_error_at_zero(tmp_path: Path) -> None:
    path = tmp_path / "tags.bin"
    path.write_bytes(b"")
    with pytest.raises(ParseError) as info:
        load_timetags(path)
    assert info.value.offset == 0


def test_binary_bad_magic(tmp_path: Path) -> None:
    path = tmp_path / "tags.ttg"
    path.write_bytes(b"NOPE" + struct.pack("<Q", 10))
    with pytest.raises(ParseError, match="magic"):
        load_timetags(path)


@pytest.mark.parametrize("suffix", [".csv", ".bin"])
def test_save_and_load_preserve_tags(tmp_path: Path, suffix: str) -> None:
    stream = TimeTagStream("a", np.array([0, 3, 3, 17, 2_000_000_000_000]), 3_000_000_000_000)
    path = save_timetags(stream, tmp_path / f"a{suffix}")
    loaded = load_timetags(path)
    np.testing.assert_array_equal(loaded.timestamps, stream.timestamps)
    assert loaded.duration_ps == stream.duration_ps


def test_unknown_format_rejected(tmp_path: Path) -> None:
    stream = TimeTagStream("a", np.array([1]), 2)
    with pytest.raises(ConfigurationError):
        save_timetags(stream, tmp_path / "a.csv", "hdf5")  # type: ignore[arg-type]
