"""Cross-correlation histograms of detection-time differences.

``Δt = t₁ − t₂`` for every ordered pair of tags (``t₁`` from the first
stream, ``t₂`` from the second) that falls in the window. All pairs are
counted, not only nearest neighbours. Bins are half-open, ``[lo + kΔ,
lo + (k + 1)Δ)``, so the bins partition the window exactly.
"""

from __future__ import annotations

import logging
import math
from collections.abc import Iterable, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Final, Optional

import numpy as np
from numpy.typing import ArrayLike, NDArray
from typing_extensions import Literal

from .errors import ConfigurationError, DomainError, NormalizationError, ParseError
from .timetag_io import TimeTagStream

logger = logging.getLogger(__name__)

__all__ = [
    "DEFAULT_BIN_WIDTH_PS",
    "DEFAULT_WINDOW_PS",
    "HISTOGRAM_COLUMNS",
    "MIN_SIDEBAND_BINS",
    "Edge",
    "CorrelationHistogram",
    "G2Result",
    "Waveform",
    "cross_correlation",
    "histogram_from_differences",
    "default_sidebands",
    "sideband_mask",
    "normalize_g2",
    "threshold_crossing_time",
    "event_times_from_waveforms",
    "noise_jitter_estimate",
    "save_histogram",
    "load_histogram",
]

DEFAULT_BIN_WIDTH_PS: Final = 2
DEFAULT_WINDOW_PS: Final = (-2000, 2000)
MIN_SIDEBAND_BINS: Final = 10
CONTAMINATION_SIGMAS: Final = 5.0
HISTOGRAM_COLUMNS: Final = ("bin_center_ps", "counts", "g2", "g2_err")
_CHUNK_TAGS: Final = 1 << 15

Edge = Literal["rising", "falling"]
Region = tuple[float, float]


def _as_int_ps(name: str, value: float) -> int:
    if isinstance(value, bool) or not math.isfinite(float(value)) or float(value) != int(value):
        raise ConfigurationError(f"{name} must be a whole number of picoseconds, got {value!r}.")
    return int(value)


def _validate_binning(window: Sequence[float], bin_width: float) -> tuple[int, int, int, int]:
    width = _as_int_ps("bin_width", bin_width)
    if width <= 0:
        raise ConfigurationError(f"bin_width must be positive, got {bin_width!r}.")
    if len(window) != 2:
        raise ConfigurationError("window must be a (low, high) pair.")
    lo, hi = (_as_int_ps("window", edge) for edge in window)
    if hi <= lo:
        raise ConfigurationError(f"window must be non-empty, got ({lo}, {hi}).")
    n_bins, remainder = divmod(hi - lo, width)
    if remainder:
        raise ConfigurationError(
            f"window span {hi - lo} ps is not a whole number of {width} ps bins."
        )
    return lo, hi, width, n_bins


@dataclass(frozen=True, eq=False)
class CorrelationHistogram:
    """Coincidence counts per ``Δt`` bin plus acquisition metadata."""

    bin_width_ps: int
    window_ps: tuple[int, int]
    counts: NDArray[np.int64]
    total_pairs_considered: int
    channels: tuple[str, str] = ("1", "2")
    duration_ps: Optional[int] = None
    rates_hz: Optional[tuple[float, float]] = None

    def __post_init__(self) -> None:
        lo, hi, width, n_bins = _validate_binning(self.window_ps, self.bin_width_ps)
        counts = np.array(self.counts)
        if counts.shape != (n_bins,):
            raise ConfigurationError(f"Expected {n_bins} bins, got counts of shape {counts.shape}.")
        if np.any(counts < 0):
            raise ConfigurationError("Histogram counts must be non-negative.")
        counts.flags.writeable = False
        object.__setattr__(self, "counts", counts)
        object.__setattr__(self, "window_ps", (lo, hi))
        object.__setattr__(self, "bin_width_ps", width)

    @property
    def n_bins(self) -> int:
        return int(self.counts.size)

    @property
    def edges(self) -> NDArray[np.int64]:
        lo, hi = self.window_ps
        return np.arange(lo, hi + 1, self.bin_width_ps, dtype=np.int64)

    @property
    def centers(self) -> NDArray[np.float64]:
        lo, _ = self.window_ps
        return lo + (np.arange(self.n_bins) + 0.5) * self.bin_width_ps

    def bin_index(self, delta_ps: float) -> int:
        """Index of the bin holding ``delta_ps``; ``ValueError`` outside the window."""

        lo, hi = self.window_ps
        if not (lo <= delta_ps < hi):
            raise ValueError(f"Δt={delta_ps} ps is outside the window {self.window_ps}.")
        return int((delta_ps - lo) // self.bin_width_ps)


@dataclass(frozen=True, eq=False)
class G2Result:
    """Histogram normalized to its accidental floor."""

    g2: NDArray[np.float64]
    g2_err: NDArray[np.float64]
    floor: float
    floor_error: float
    sideband_bins: int
    contaminated: bool = False
    sidebands: tuple[Region, ...] = field(default_factory=tuple)


def _count_chunk(
    chunk: NDArray[np.int64], reference: NDArray[np.int64], lo: int, hi: int, width: int, n_bins: int
) -> NDArray[np.int64]:
    # t1 - t2 in [lo, hi)  <=>  t2 in (t1 - hi, t1 - lo]
    start = np.searchsorted(reference, chunk - hi, side="right")
    stop = np.searchsorted(reference, chunk - lo, side="right")
    matches = stop - start
    total = int(matches.sum())
    if total == 0:
        return np.zeros(n_bins, dtype=np.int64)
    owners = np.repeat(np.arange(chunk.size), matches)
    offsets = np.arange(total) - np.repeat(np.cumsum(matches) - matches, matches)
    deltas = chunk[owners] - reference[start[owners] + offsets]
    return np.bincount((deltas - lo) // width, minlength=n_bins).astype(np.int64)


def cross_correlation(
    s1: TimeTagStream,
    s2: TimeTagStream,
    window: Sequence[float] = DEFAULT_WINDOW_PS,
    bin_width: float = DEFAULT_BIN_WIDTH_PS,
    *,
    workers: int = 1,
    chunk_size: int = _CHUNK_TAGS,
) -> CorrelationHistogram:
    """Histogram of ``t₁ − t₂`` over all ordered pairs inside ``window``.

    ``s1`` is split into chunks; each chunk locates its window overlap in
    ``s2`` by binary search, so the cost is linear in the tag and match
    counts. With ``workers > 1`` chunks run on a thread pool and are merged by
    bin-wise integer addition, which gives the same histogram as one worker.
    """

    lo, hi, width, n_bins = _validate_binning(window, bin_width)
    if workers < 1:
        raise ConfigurationError(f"workers must be >= 1, got {workers}.")
    if chunk_size < 1:
        raise ConfigurationError(f"chunk_size must be >= 1, got {chunk_size}.")
    a = s1.timestamps
    b = s2.timestamps
    chunks = [a[i : i + chunk_size] for i in range(0, a.size, chunk_size)]
    counts = np.zeros(n_bins, dtype=np.int64)
    if workers == 1 or len(chunks) < 2:
        for chunk in chunks:
            counts += _count_chunk(chunk, b, lo, hi, width, n_bins)
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            for partial in pool.map(lambda c: _count_chunk(c, b, lo, hi, width, n_bins), chunks):
                counts += partial
    duration = max(s1.duration_ps, s2.duration_ps)
    logger.info(
        "Correlated %d x %d tags over %d bins of %d ps: %d pairs in window",
        a.size,
        b.size,
        n_bins,
        width,
        int(counts.sum()),
    )
    return CorrelationHistogram(
        bin_width_ps=width,
        window_ps=(lo, hi),
        counts=counts,
        total_pairs_considered=int(counts.sum()),
        channels=(s1.channel, s2.channel),
        duration_ps=duration,
        rates_hz=(s1.rate_hz, s2.rate_hz),
    )


def histogram_from_differences(
    deltas_ps: ArrayLike,
    window: Sequence[float] = DEFAULT_WINDOW_PS,
    bin_width: float = DEFAULT_BIN_WIDTH_PS,
    *,
    channels: tuple[str, str] = ("1", "2"),
) -> CorrelationHistogram:
    """Histogram already-formed time differences (oscilloscope acquisitions)."""

    lo, hi, width, n_bins = _validate_binning(window, bin_width)
    deltas = np.asarray(deltas_ps, dtype=float)
    inside = deltas[(deltas >= lo) & (deltas < hi)]
    index = np.floor((inside - lo) / width).astype(np.int64)
    counts = np.bincount(np.minimum(index, n_bins - 1), minlength=n_bins).astype(np.int64)
    return CorrelationHistogram(width, (lo, hi), counts, int(counts.sum()), channels)


def default_sidebands(h: CorrelationHistogram) -> tuple[Region, Region]:
    """Outer quarter of the window on each side."""

    lo, hi = h.window_ps
    quarter = (hi - lo) / 4.0
    return ((float(lo), lo + quarter), (hi - quarter, float(hi)))


def sideband_mask(h: CorrelationHistogram, sidebands: Iterable[Region]) -> NDArray[np.bool_]:
    """Bins whose centre lies in any ``[start, stop)`` region."""

    centers = h.centers
    mask = np.zeros(h.n_bins, dtype=bool)
    for start, stop in sidebands:
        if stop <= start:
            raise ConfigurationError(f"Sideband region ({start}, {stop}) is empty.")
        mask |= (centers >= start) & (centers < stop)
    return mask


def _contamination_reasons(
    h: CorrelationHistogram, regions: Sequence[Region], side_mask: NDArray[np.bool_], floor: float
) -> list[str]:
    """Poisson consistency checks of the sideband floor; empty when the sidebands look clean."""

    reasons: list[str] = []
    # the median of a Poisson variable lies in [λ − ln 2, λ + 1/3]
    median = float(np.median(h.counts))
    excess = floor - (median + math.log(2.0))
    n_side = int(side_mask.sum())
    if excess > CONTAMINATION_SIGMAS * math.sqrt(floor / n_side):
        reasons.append(f"Sideband mean {floor:.3f} exceeds the histogram median {median:.3f}")

    for region in regions:
        mask = sideband_mask(h, [region])
        rest = side_mask & ~mask
        n_region, n_rest = int(mask.sum()), int(rest.sum())
        if n_region == 0 or n_rest == 0:
            continue
        region_mean = float(h.counts[mask].mean())
        rest_mean = float(h.counts[rest].mean())
        spread = math.sqrt(floor * (1.0 / n_region + 1.0 / n_rest))
        if region_mean - rest_mean > CONTAMINATION_SIGMAS * spread:
            reasons.append(
                f"Sideband {region[0]:g}..{region[1]:g} ps averages {region_mean:.3f} "
                f"against {rest_mean:.3f} in the other sidebands"
            )
    return reasons


def normalize_g2(h: CorrelationHistogram, sidebands: Iterable[Region] | None = None) -> G2Result:
    """Divide counts by the sideband mean ``C₀`` to obtain ``g²(Δt)``.

    ``C₀`` carries its standard error. The sidebands are flagged as
    contaminated by the coincidence peak when their mean exceeds the Poisson
    range of the histogram median by more than five standard errors, or when
    one sideband region sits five pooled-Poisson sigmas above the others.

    Raises:
        ConfigurationError: Fewer than ten sideband bins.
        NormalizationError: The sideband mean is zero.
    """

    regions = tuple(default_sidebands(h) if sidebands is None else sidebands)
    mask = sideband_mask(h, regions)
    n_side = int(mask.sum())
    if n_side < MIN_SIDEBAND_BINS:
        raise ConfigurationError(
            f"Sidebands cover {n_side} bins; at least {MIN_SIDEBAND_BINS} are required."
        )
    side = h.counts[mask].astype(float)
    floor = float(side.mean())
    if floor == 0.0:
        raise NormalizationError(
            "Sideband mean is zero: insufficient accidental coincidences to normalize; "
            "acquire longer or widen the window."
        )
    floor_error = float(side.std(ddof=1) / math.sqrt(n_side))

    reasons = _contamination_reasons(h, regions, mask, floor)
    contaminated = bool(reasons)
    for reason in reasons:
        logger.warning("%s; the sidebands probably overlap the coincidence peak.", reason)

    counts = h.counts.astype(float)
    g2 = counts / floor
    g2_err = np.hypot(np.sqrt(np.maximum(counts, 1.0)) / floor, g2 * floor_error / floor)
    return G2Result(
        g2=g2,
        g2_err=g2_err,
        floor=floor,
        floor_error=floor_error,
        sideband_bins=n_side,
        contaminated=contaminated,
        sidebands=tuple((float(a), float(b)) for a, b in regions),
    )


@dataclass(frozen=True, eq=False)
class Waveform:
    """Uniformly sampled detector trace; ``t0_ps`` is the time of sample 0."""

    sample_period_ps: float
    samples_mv: NDArray[np.float64]
    t0_ps: float = 0.0

    def __post_init__(self) -> None:
        if not (math.isfinite(self.sample_period_ps) and self.sample_period_ps > 0):
            raise ConfigurationError("sample_period_ps must be positive.")
        samples = np.array(self.samples_mv, dtype=float)
        if samples.ndim != 1 or samples.size < 2:
            raise ConfigurationError("A waveform needs at least 2 samples.")
        samples.flags.writeable = False
        object.__setattr__(self, "samples_mv", samples)

    @property
    def times_ps(self) -> NDArray[np.float64]:
        return self.t0_ps + self.sample_period_ps * np.arange(self.samples_mv.size)


def threshold_crossing_time(w: Waveform, threshold_mv: float, edge: Edge = "rising") -> float:
    """First time the trace crosses ``threshold_mv`` on ``edge``.

    A rising crossing between samples ``k`` and ``k + 1`` means
    ``v[k] < threshold <= v[k + 1]`` (mirrored for falling); the time is
    linearly interpolated between the two samples.
    """

    v = w.samples_mv
    before, after = v[:-1], v[1:]
    if edge == "rising":
        hits = np.flatnonzero((before < threshold_mv) & (after >= threshold_mv))
    elif edge == "falling":
        hits = np.flatnonzero((before > threshold_mv) & (after <= threshold_mv))
    else:
        raise ConfigurationError(f"edge must be 'rising' or 'falling', got {edge!r}.")
    if hits.size == 0:
        raise DomainError(f"threshold never crossed ({threshold_mv} mV, {edge} edge)")
    k = int(hits[0])
    fraction = (threshold_mv - v[k]) / (v[k + 1] - v[k])
    return float(w.t0_ps + (k + fraction) * w.sample_period_ps)


def event_times_from_waveforms(
    waveforms: Iterable[Waveform], threshold_mv: float, edge: Edge = "rising"
) -> tuple[NDArray[np.float64], int]:
    """Crossing time of each trace plus the number of traces that never crossed."""

    times: list[float] = []
    skipped = 0
    for trace in waveforms:
        try:
            times.append(threshold_crossing_time(trace, threshold_mv, edge))
        except DomainError:
            skipped += 1
    if skipped:
        logger.info("%d waveform(s) never crossed %.3f mV", skipped, threshold_mv)
    return np.asarray(times, dtype=float), skipped


def noise_jitter_estimate(sigma_v_mv: float, slope_mv_per_ps: float) -> float:
    """Timing jitter from electrical noise, ``σ_t = σ_V / |dV/dt|`` in ps."""

    if sigma_v_mv < 0:
        raise ConfigurationError("Noise amplitude must be non-negative.")
    if slope_mv_per_ps == 0:
        raise DomainError("undefined jitter: signal slope at the threshold is zero")
    return sigma_v_mv / abs(slope_mv_per_ps)


def save_histogram(
    h: CorrelationHistogram, path: str | Path, g2: G2Result | None = None
) -> Path:
    """Write ``bin_center_ps,counts,g2,g2_err`` with ``#`` metadata lines.

    ``g2`` is computed with default sidebands when omitted; columns are
    ``nan`` when the histogram cannot be normalized.
    """

    from .tables import SimpleTable

    if g2 is None:
        try:
            g2 = normalize_g2(h)
        except (NormalizationError, ConfigurationError) as exc:
            logger.warning("Writing histogram without g2: %s", exc)
    values = g2.g2 if g2 is not None else np.full(h.n_bins, np.nan)
    errors = g2.g2_err if g2 is not None else np.full(h.n_bins, np.nan)
    rows = [
        {
            "bin_center_ps": f"{center:.1f}",
            "counts": str(int(count)),
            "g2": f"{value:.6f}",
            "g2_err": f"{error:.6f}",
        }
        for center, count, value, error in zip(h.centers, h.counts, values, errors)
    ]
    lo, hi = h.window_ps
    comments = [
        f"bin_width_ps={h.bin_width_ps}",
        f"window_ps={lo},{hi}",
        f"channels={h.channels[0]},{h.channels[1]}",
    ]
    if h.duration_ps is not None:
        comments.append(f"duration_ps={h.duration_ps}")
    if g2 is not None:
        comments.append(f"floor={g2.floor:.6f},{g2.floor_error:.6f}")
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    SimpleTable(rows, HISTOGRAM_COLUMNS).to_csv(target, comments=comments)
    return target


def load_histogram(path: str | Path) -> CorrelationHistogram:
    """Read a histogram written by :func:`save_histogram`.

    Raises:
        ParseError: Undecodable bytes, a malformed row or missing metadata.
    """

    target = Path(path)
    meta: dict[str, str] = {}
    counts: list[int] = []
    offset = 0
    header_seen = False
    for line in target.read_bytes().splitlines(keepends=True):
        try:
            text = line.decode("utf-8").strip()
        except UnicodeDecodeError as exc:
            raise ParseError(target, offset + exc.start, "not valid UTF-8") from exc
        if text.startswith("#"):
            key, _, value = text[1:].strip().partition("=")
            meta[key.strip()] = value.strip()
        elif text and not header_seen:
            if text.split(",")[:2] != list(HISTOGRAM_COLUMNS[:2]):
                raise ParseError(target, offset, f"unexpected header {text!r}")
            header_seen = True
        elif text:
            cells = text.split(",")
            try:
                counts.append(int(cells[1]))
            except (IndexError, ValueError):
                raise ParseError(target, offset, f"malformed row {text!r}") from None
        offset += len(line)
    try:
        bin_width = int(meta["bin_width_ps"])
        lo, hi = (int(part) for part in meta["window_ps"].split(","))
    except (KeyError, ValueError) as exc:
        raise ParseError(target, 0, "missing bin_width_ps/window_ps metadata") from exc
    channels_meta = meta.get("channels", "1,2").split(",")
    channels = (channels_meta[0], channels_meta[1] if len(channels_meta) > 1 else "2")
    duration: Any = meta.get("duration_ps")
    counts_array = np.asarray(counts, dtype=np.int64)
    return CorrelationHistogram(
        bin_width_ps=bin_width,
        window_ps=(lo, hi),
        counts=counts_array,
        total_pairs_considered=int(counts_array.sum()),
        channels=channels,
        duration_ps=int(duration) if duration is not None else None,
    )
