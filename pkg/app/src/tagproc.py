"""
Time-tag processing: file access, start-multistop cross-correlation, g2
normalization and HOM visibility.
"""

import logging
from abc import ABC, abstractmethod
from typing import Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, Field

from src.config import CorrelationSettings, get_default_correlation
from src.data_models import G2Curve, RawHistogram, TagStream
from src.errors import (
    DomainError,
    PreconditionError,
    UndefinedVisibilityError,
)
from src.model import reference_g2_zero
from src.models import TpiConfig
from src.parallel import WorkerPool
from src.repositories import BinaryTagRepository, PathLike

logger = logging.getLogger("tagproc")

PS_PER_S = 1e12


def read_tags(path: PathLike) -> TagStream:
    return BinaryTagRepository().read(path)


def write_tags(stream: TagStream, path: PathLike) -> None:
    BinaryTagRepository().write(stream, path)


def merge_streams(streams: Sequence[TagStream]) -> TagStream:
    """Union of several tag streams, sorted by time then channel."""
    if not streams:
        raise PreconditionError("nothing to merge")
    resolutions = {s.resolution_ps for s in streams}
    if len(resolutions) > 1:
        raise PreconditionError(
            f"cannot merge streams with resolutions {sorted(resolutions)}"
        )

    timestamps = np.concatenate([s.timestamps for s in streams])
    channels = np.concatenate([s.channels for s in streams])
    flags = np.concatenate([s.flags for s in streams])
    order = np.lexsort((channels, timestamps))

    return TagStream(
        timestamps=timestamps[order],
        channels=channels[order],
        channel_count=max(s.channel_count for s in streams),
        resolution_ps=resolutions.pop(),
        flags=flags[order],
        duration_ps=max(s.duration for s in streams),
    )


def _check_binning(bin_width_ps: int, window_ps: int) -> int:
    if bin_width_ps <= 0:
        raise PreconditionError(
            f"bin width must be positive, got {bin_width_ps}"
        )
    if window_ps < bin_width_ps:
        raise PreconditionError(
            f"window ({window_ps} ps) is smaller than the bin width "
            f"({bin_width_ps} ps)"
        )
    return window_ps // bin_width_ps


def _check_channel(stream: TagStream, channel: int) -> None:
    if not 1 <= channel <= stream.channel_count:
        raise PreconditionError(
            f"unknown channel {channel}; stream has channels "
            f"1..{stream.channel_count}"
        )


def bin_index(delays: np.ndarray, bin_width_ps: int) -> np.ndarray:
    """Nearest bin centre, ties rounded away from zero."""
    magnitude = (2 * np.abs(delays) + bin_width_ps) // (2 * bin_width_ps)
    return np.sign(delays) * magnitude


def _accumulate(
    a_times: np.ndarray,
    b_times: np.ndarray,
    a_start: int,
    same_channel: bool,
    bin_width_ps: int,
    half_bins: int,
    chunk_events: int,
) -> np.ndarray:
    counts = np.zeros(2 * half_bins + 1, dtype=np.int64)
    reach = (half_bins + 1) * bin_width_ps

    for start in range(0, a_times.size, chunk_events):
        a = a_times[start : start + chunk_events]
        lo = np.searchsorted(b_times, a - reach, side="left")
        hi = np.searchsorted(b_times, a + reach, side="right")
        matches = hi - lo
        total = int(matches.sum())
        if total == 0:
            continue

        owner = np.repeat(np.arange(a.size), matches)
        first_of_owner = np.repeat(np.cumsum(matches) - matches, matches)
        partner = np.repeat(lo, matches) + (np.arange(total) - first_of_owner)

        delays = b_times[partner] - a[owner]
        keep = np.ones(total, dtype=bool)
        if same_channel:
            keep &= partner != owner + a_start + start
        k = bin_index(delays, bin_width_ps)
        keep &= np.abs(k) <= half_bins
        counts += np.bincount(
            k[keep] + half_bins, minlength=counts.size
        ).astype(np.int64)
    return counts


def cross_correlate(
    stream: TagStream,
    channel_a: int,
    channel_b: int,
    bin_width_ps: int,
    window_ps: int,
    settings: Optional[CorrelationSettings] = None,
) -> RawHistogram:
    """Histogram of tB - tA over every pair of events within the window.

    With channel_a == channel_b each event is paired with every other event
    but never with itself.
    """
    settings = settings or get_default_correlation()
    half_bins = _check_binning(bin_width_ps, window_ps)
    _check_channel(stream, channel_a)
    _check_channel(stream, channel_b)

    a_times = stream.channel_times(channel_a)
    b_times = stream.channel_times(channel_b)
    counts = _accumulate(
        a_times,
        b_times,
        0,
        channel_a == channel_b,
        bin_width_ps,
        half_bins,
        settings.chunk_events,
    )
    return RawHistogram(
        bin_centers_ps=np.arange(-half_bins, half_bins + 1, dtype=np.int64)
        * bin_width_ps,
        counts=counts,
        bin_width_ps=bin_width_ps,
        channel_a=channel_a,
        channel_b=channel_b,
    )


def correlate_sliced(
    stream: TagStream,
    channel_a: int,
    channel_b: int,
    bin_width_ps: int,
    window_ps: int,
    slices: int,
    pool: Optional[WorkerPool] = None,
    settings: Optional[CorrelationSettings] = None,
) -> RawHistogram:
    """cross_correlate split over disjoint ranges of channel A events."""
    settings = settings or get_default_correlation()
    half_bins = _check_binning(bin_width_ps, window_ps)
    _check_channel(stream, channel_a)
    _check_channel(stream, channel_b)
    if slices < 1:
        raise PreconditionError(f"slices must be >= 1, got {slices}")

    a_times = stream.channel_times(channel_a)
    b_times = stream.channel_times(channel_b)
    bounds = np.linspace(0, a_times.size, slices + 1).astype(int)

    def run(k: int) -> np.ndarray:
        start, stop = int(bounds[k]), int(bounds[k + 1])
        return _accumulate(
            a_times[start:stop],
            b_times,
            start,
            channel_a == channel_b,
            bin_width_ps,
            half_bins,
            settings.chunk_events,
        )

    pool = pool or WorkerPool(1)
    parts = pool.map(run, range(slices))
    return RawHistogram(
        bin_centers_ps=np.arange(-half_bins, half_bins + 1, dtype=np.int64)
        * bin_width_ps,
        counts=np.sum(parts, axis=0).astype(np.int64),
        bin_width_ps=bin_width_ps,
        channel_a=channel_a,
        channel_b=channel_b,
    )


def normalize_g2(
    histogram: RawHistogram,
    rate_a: float,
    rate_b: float,
    duration: float,
) -> G2Curve:
    """Divide by the accidental level r_a r_b T dtau (rates in 1/s, T in s).

    Empty bins carry the one-count uncertainty 1/norm.
    """
    if not duration > 0:
        raise DomainError(f"duration must be positive, got {duration}")
    if not (rate_a > 0 and rate_b > 0):
        raise DomainError(
            f"count rates must be positive, got {rate_a} and {rate_b}"
        )

    norm = rate_a * rate_b * duration * histogram.bin_width_ps / PS_PER_S
    counts = histogram.counts
    sigma = np.where(counts > 0, np.sqrt(counts), 1.0) / norm
    return G2Curve(
        tau_ps=histogram.bin_centers_ps.astype(float),
        g2=counts / norm,
        sigma=sigma,
        counts=counts,
        bin_width_ps=float(histogram.bin_width_ps),
    )


def correlate_stream(
    stream: TagStream,
    channel_a: int,
    channel_b: int,
    bin_width_ps: int,
    window_ps: int,
    duration_ps: Optional[int] = None,
    slices: int = 1,
    pool: Optional[WorkerPool] = None,
) -> G2Curve:
    """Histogram and normalize in one step.

    Streams with no events on either channel give an all-zero curve.
    """
    if slices > 1:
        histogram = correlate_sliced(
            stream, channel_a, channel_b, bin_width_ps, window_ps, slices, pool
        )
    else:
        histogram = cross_correlate(
            stream, channel_a, channel_b, bin_width_ps, window_ps
        )

    duration_ps = stream.duration if duration_ps is None else duration_ps
    counts = stream.channel_counts()
    n_a, n_b = counts[channel_a], counts[channel_b]

    if n_a == 0 or n_b == 0 or duration_ps <= 0:
        logger.warning(
            f"No events on channel {channel_a if n_a == 0 else channel_b}; "
            f"writing an all-zero curve"
        )
        zeros = np.zeros(histogram.counts.size)
        return G2Curve(
            tau_ps=histogram.bin_centers_ps.astype(float),
            g2=zeros,
            sigma=zeros,
            counts=histogram.counts,
            bin_width_ps=float(bin_width_ps),
        )

    duration = duration_ps / PS_PER_S
    return normalize_g2(histogram, n_a / duration, n_b / duration, duration)


class VisibilityResult(BaseModel):
    visibility: float
    sigma: float = Field(..., ge=0)
    g2_zero: float = Field(..., description="Measured g2 at tau = 0.")
    reference: float = Field(..., description="Baseline g2_ref(0).")
    baseline: str
    bin_width_ps: float = Field(
        ..., description="Width of the tau = 0 bin the estimate refers to."
    )


class VisibilityBaseline(ABC):
    name: str

    @abstractmethod
    def reference(self, curve: G2Curve) -> Tuple[float, float]:
        """g2_ref(0) and its standard deviation."""


class ModelBaseline(VisibilityBaseline):
    """c1^2 g2_11(0) + c2^2 g2_22(0) + 2 c1 c2 from a source configuration."""

    name = "model"

    def __init__(self, config: TpiConfig):
        self.config = config

    def reference(self, curve: G2Curve) -> Tuple[float, float]:
        return reference_g2_zero(self.config), 0.0


class DistinguishableReference(VisibilityBaseline):
    """Zero bin of a curve measured with distinguishable photons."""

    name = "distinguishable_reference"

    def __init__(self, reference_curve: G2Curve):
        self.curve = reference_curve

    def reference(self, curve: G2Curve) -> Tuple[float, float]:
        if self.curve.bin_width_ps != curve.bin_width_ps:
            logger.warning(
                f"Reference bin width {self.curve.bin_width_ps} ps differs "
                f"from {curve.bin_width_ps} ps"
            )
        index = self.curve.zero_index
        return float(self.curve.g2[index]), float(self.curve.sigma[index])


def hom_visibility(
    curve: G2Curve, baseline: Union[VisibilityBaseline, TpiConfig, G2Curve]
) -> VisibilityResult:
    """V = 1 - g2(0) / g2_ref(0) with first-order error propagation."""
    if isinstance(baseline, TpiConfig):
        baseline = ModelBaseline(baseline)
    elif isinstance(baseline, G2Curve):
        baseline = DistinguishableReference(baseline)

    index = curve.zero_index
    measured = float(curve.g2[index])
    measured_sigma = float(curve.sigma[index])
    reference, reference_sigma = baseline.reference(curve)
    if reference == 0:
        raise UndefinedVisibilityError("g2_ref(0) is zero")

    visibility = 1.0 - measured / reference
    sigma = float(
        np.hypot(
            measured_sigma / reference,
            measured * reference_sigma / reference**2,
        )
    )
    return VisibilityResult(
        visibility=visibility,
        sigma=sigma,
        g2_zero=measured,
        reference=reference,
        baseline=baseline.name,
        bin_width_ps=curve.bin_width_ps,
    )


def dominant_beat_frequency(
    curve: G2Curve,
    baseline: Optional[Union[np.ndarray, float]] = None,
    min_frequency: float = 0.0,
    padding: int = 4,
) -> float:
    """Frequency in Hz of the strongest oscillation in g2 - baseline.

    Without a baseline the curve mean is removed. Frequencies below
    `min_frequency` are ignored.
    """
    if len(curve) < 4:
        raise DomainError("curve too short for a spectrum")
    reference = np.mean(curve.g2) if baseline is None else baseline
    signal = curve.g2 - reference
    signal = signal - signal.mean()

    size = padding * signal.size
    spectrum = np.abs(np.fft.rfft(signal, n=size))
    frequencies = np.fft.rfftfreq(size, d=curve.bin_width_ps / PS_PER_S)
    allowed = frequencies >= max(min_frequency, frequencies[1])
    if not allowed.any():
        raise DomainError(
            f"no frequency above {min_frequency:.3g} Hz below Nyquist"
        )
    peak = np.argmax(np.where(allowed, spectrum, -1.0))
    return float(frequencies[peak])
