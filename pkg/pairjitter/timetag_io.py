"""Time-tag streams and their on-disk formats.

Two formats are understood:

``csv``
    One non-negative integer picosecond timestamp per line. Lines starting
    with ``#`` are comments; ``# duration_ps=<int>`` sets the acquisition
    duration. An empty file is a valid empty stream.
``bin``
    A 12-byte header (magic ``b"TTG1"`` then the duration as little-endian
    ``u64``) followed by densely packed little-endian ``u64`` timestamps.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Final, Optional

import numpy as np
from numpy.typing import ArrayLike, NDArray
from typing_extensions import Literal

from .errors import ConfigurationError, ParseError, TimeTagValidationError

logger = logging.getLogger(__name__)

__all__ = [
    "TagFormat",
    "TimeTagStream",
    "BINARY_MAGIC",
    "BINARY_HEADER_SIZE",
    "infer_format",
    "load_timetags",
    "save_timetags",
]

TagFormat = Literal["csv", "bin"]

BINARY_MAGIC: Final = b"TTG1"
BINARY_HEADER_SIZE: Final = 12
_RECORD: Final = np.dtype("<u8")
_BINARY_SUFFIXES: Final = {".bin", ".ttg", ".ttbin"}


@dataclass(frozen=True, eq=False)
class TimeTagStream:
    """Sorted integer-picosecond detection times of one channel."""

    channel: str
    timestamps: NDArray[np.int64]
    duration_ps: int

    def __post_init__(self) -> None:
        tags = np.ascontiguousarray(self.timestamps, dtype=np.int64).view()
        if tags.ndim != 1:
            raise ConfigurationError("Timestamps must be one-dimensional.")
        if self.duration_ps < 0:
            raise ConfigurationError(f"Acquisition duration must be >= 0 ps, got {self.duration_ps}.")
        if tags.size:
            if tags.min() < 0 or tags.max() > self.duration_ps:
                raise TimeTagValidationError(
                    f"Channel {self.channel!r}: timestamps must lie in [0, {self.duration_ps}] ps."
                )
            descending = np.flatnonzero(np.diff(tags) < 0)
            if descending.size:
                raise TimeTagValidationError(
                    f"Channel {self.channel!r}: timestamps decrease at index {int(descending[0]) + 1}."
                )
        tags.flags.writeable = False
        object.__setattr__(self, "timestamps", tags)
        object.__setattr__(self, "duration_ps", int(self.duration_ps))

    @classmethod
    def from_unsorted(
        cls, channel: str, timestamps: ArrayLike, duration_ps: int | None = None
    ) -> TimeTagStream:
        """Sort ``timestamps`` (stable) and infer the duration when omitted."""

        tags = np.sort(np.asarray(timestamps, dtype=np.int64), kind="stable")
        if duration_ps is None:
            duration_ps = int(tags[-1]) if tags.size else 0
        return cls(channel, tags, duration_ps)

    def __len__(self) -> int:
        return int(self.timestamps.size)

    @property
    def duration_s(self) -> float:
        return self.duration_ps * 1e-12

    @property
    def rate_hz(self) -> float:
        """Mean count rate in counts per second (0 for a zero-length acquisition)."""

        return len(self) / self.duration_s if self.duration_ps > 0 else 0.0

    def shifted(self, offset_ps: int) -> TimeTagStream:
        """Copy with every tag and the duration moved by ``offset_ps`` (>= 0)."""

        if offset_ps < 0:
            raise ConfigurationError("Shift offset must be non-negative.")
        return TimeTagStream(self.channel, self.timestamps + offset_ps, self.duration_ps + offset_ps)


def infer_format(path: str | Path) -> TagFormat:
    return "bin" if Path(path).suffix.lower() in _BINARY_SUFFIXES else "csv"


def _finish(
    path: Path,
    channel: str,
    tags: NDArray[np.int64],
    duration_ps: Optional[int],
    sort: bool,
) -> TimeTagStream:
    if tags.size > 1 and np.any(np.diff(tags) < 0):
        if not sort:
            first = int(np.flatnonzero(np.diff(tags) < 0)[0]) + 1
            raise TimeTagValidationError(
                f"{path}: timestamps are not sorted (record {first} is earlier than its predecessor); "
                "pass sort=True to sort on load."
            )
        logger.info("Sorting %d unsorted tags from %s", tags.size, path)
        tags = np.sort(tags, kind="stable")
    if duration_ps is None:
        duration_ps = int(tags.max()) if tags.size else 0
    return TimeTagStream(channel, tags, duration_ps)


def _load_csv(path: Path) -> tuple[NDArray[np.int64], Optional[int]]:
    raw = path.read_bytes()
    values: list[int] = []
    duration: Optional[int] = None
    offset = 0
    for line in raw.splitlines(keepends=True):
        text = line.strip()
        if text.startswith(b"#"):
            key, sep, value = text[1:].strip().partition(b"=")
            if sep and key.strip() == b"duration_ps":
                try:
                    duration = int(value.strip())
                except ValueError:
                    raise ParseError(path, offset, f"invalid duration header {text!r}") from None
        elif text:
            try:
                tag = int(text)
            except ValueError:
                raise ParseError(path, offset, f"not an integer timestamp: {text[:40]!r}") from None
            if tag < 0:
                raise ParseError(path, offset, f"negative timestamp {tag}")
            values.append(tag)
        offset += len(line)
    return np.asarray(values, dtype=np.int64), duration


def _load_binary(path: Path) -> tuple[NDArray[np.int64], int]:
    raw = path.read_bytes()
    if len(raw) < BINARY_HEADER_SIZE:
        raise ParseError(path, 0, f"missing {BINARY_HEADER_SIZE}-byte TTG1 header ({len(raw)} bytes)")
    if raw[:4] != BINARY_MAGIC:
        raise ParseError(path, 0, f"bad magic {raw[:4]!r}, expected {BINARY_MAGIC!r}")
    duration = int(np.frombuffer(raw, dtype=_RECORD, count=1, offset=4)[0])
    payload = len(raw) - BINARY_HEADER_SIZE
    whole, partial = divmod(payload, _RECORD.itemsize)
    if partial:
        offset = BINARY_HEADER_SIZE + whole * _RECORD.itemsize
        raise ParseError(path, offset, f"trailing partial record of {partial} bytes")
    tags = np.frombuffer(raw, dtype=_RECORD, offset=BINARY_HEADER_SIZE)
    if tags.size and int(tags.max()) > np.iinfo(np.int64).max:
        raise ParseError(path, BINARY_HEADER_SIZE, "timestamp exceeds the signed 64-bit range")
    return tags.astype(np.int64), duration


def load_timetags(
    path: str | Path,
    fmt: TagFormat | None = None,
    *,
    channel: str | None = None,
    duration_ps: int | None = None,
    sort: bool = False,
) -> TimeTagStream:
    """Read a time-tag file.

    The duration is taken from ``duration_ps`` when given, otherwise from the
    file header, otherwise from the last tag.

    Raises:
        ParseError: Malformed record; ``offset`` locates it in the file.
        TimeTagValidationError: Unsorted tags without ``sort=True``, or tags
            beyond the duration.
    """

    target = Path(path)
    fmt = fmt or infer_format(target)
    if fmt == "csv":
        tags, header_duration = _load_csv(target)
    elif fmt == "bin":
        tags, header_duration = _load_binary(target)
    else:
        raise ConfigurationError(f"Unknown time-tag format {fmt!r}; expected 'csv' or 'bin'.")
    stream = _finish(
        target,
        channel or target.stem,
        tags,
        duration_ps if duration_ps is not None else header_duration,
        sort,
    )
    logger.debug("Loaded %d tags from %s (T=%d ps)", len(stream), target, stream.duration_ps)
    return stream


def save_timetags(stream: TimeTagStream, path: str | Path, fmt: TagFormat | None = None) -> Path:
    """Write ``stream`` in ``fmt`` (inferred from the suffix when omitted)."""

    target = Path(path)
    fmt = fmt or infer_format(target)
    target.parent.mkdir(parents=True, exist_ok=True)
    if fmt == "csv":
        body = "".join(f"{tag}\n" for tag in stream.timestamps.tolist())
        target.write_text(f"# duration_ps={stream.duration_ps}\n{body}", encoding="utf-8")
    elif fmt == "bin":
        with target.open("wb") as handle:
            handle.write(BINARY_MAGIC)
            handle.write(np.asarray([stream.duration_ps], dtype=_RECORD).tobytes())
            handle.write(stream.timestamps.astype(_RECORD).tobytes())
    else:
        raise ConfigurationError(f"Unknown time-tag format {fmt!r}; expected 'csv' or 'bin'.")
    return target
