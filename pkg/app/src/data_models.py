"""
Array containers for photon streams, time tags, histograms and curves.

These hold numpy arrays and are plain dataclasses; the validated
configuration documents live in `src.models`.
"""

from dataclasses import dataclass, field
from typing import Any, Dict, Optional

import numpy as np


@dataclass
class PhotonStream:
    """Photons of one source, struct-of-arrays, sorted by emission time."""

    source_id: int
    emission_time: np.ndarray  # ps, float64
    frequency_offset: np.ndarray  # Hz
    background: np.ndarray  # bool
    envelope_decay: float  # 1/s

    def __len__(self) -> int:
        return int(self.emission_time.size)

    def is_sorted(self) -> bool:
        return bool(np.all(np.diff(self.emission_time) >= 0))


@dataclass
class TagStream:
    timestamps: np.ndarray  # int64 ps, non-decreasing
    channels: np.ndarray  # uint16, 1..channel_count
    channel_count: int
    resolution_ps: int = 1
    flags: Optional[np.ndarray] = None  # uint16
    duration_ps: Optional[int] = None
    metadata: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        self.timestamps = np.asarray(self.timestamps, dtype=np.int64)
        self.channels = np.asarray(self.channels, dtype=np.uint16)
        if self.flags is None:
            self.flags = np.zeros(self.timestamps.size, dtype=np.uint16)
        else:
            self.flags = np.asarray(self.flags, dtype=np.uint16)

    def __len__(self) -> int:
        return int(self.timestamps.size)

    @property
    def duration(self) -> int:
        """Acquisition length in ps, inferred from the tags when unknown."""
        if self.duration_ps is not None:
            return int(self.duration_ps)
        if self.timestamps.size == 0:
            return 0
        return int(self.timestamps[-1]) + self.resolution_ps

    def channel_times(self, channel: int) -> np.ndarray:
        return self.timestamps[self.channels == channel]

    def channel_counts(self) -> Dict[int, int]:
        return {
            ch: int(np.count_nonzero(self.channels == ch))
            for ch in range(1, self.channel_count + 1)
        }

    def same_records(self, other: "TagStream") -> bool:
        return (
            self.channel_count == other.channel_count
            and self.resolution_ps == other.resolution_ps
            and np.array_equal(self.timestamps, other.timestamps)
            and np.array_equal(self.channels, other.channels)
            and np.array_equal(self.flags, other.flags)
        )


@dataclass
class RawHistogram:
    bin_centers_ps: np.ndarray  # int64
    counts: np.ndarray  # int64
    bin_width_ps: int
    channel_a: int
    channel_b: int


@dataclass
class G2Curve:
    tau_ps: np.ndarray
    g2: np.ndarray
    sigma: np.ndarray
    counts: np.ndarray
    bin_width_ps: float

    def __post_init__(self):
        self.tau_ps = np.asarray(self.tau_ps, dtype=float)
        self.g2 = np.asarray(self.g2, dtype=float)
        self.sigma = np.asarray(self.sigma, dtype=float)
        self.counts = np.asarray(self.counts, dtype=np.int64)

    def __len__(self) -> int:
        return int(self.tau_ps.size)

    @property
    def tau_s(self) -> np.ndarray:
        return self.tau_ps * 1e-12

    @property
    def zero_index(self) -> int:
        index = int(np.argmin(np.abs(self.tau_ps)))
        if abs(self.tau_ps[index]) > 0.5 * self.bin_width_ps:
            raise ValueError("curve has no bin at tau = 0")
        return index


@dataclass
class TuningCurve:
    voltage: np.ndarray  # V
    detuning: np.ndarray  # Hz
    sigma: Optional[np.ndarray] = None  # Hz

    def __post_init__(self):
        self.voltage = np.asarray(self.voltage, dtype=float)
        self.detuning = np.asarray(self.detuning, dtype=float)
        if self.voltage.shape != self.detuning.shape:
            raise ValueError("voltage and detuning must have equal length")
        if np.any(np.diff(self.voltage) <= 0):
            raise ValueError("voltages must be strictly increasing")
        if self.sigma is not None:
            self.sigma = np.asarray(self.sigma, dtype=float)
            if np.any(self.sigma <= 0):
                raise ValueError("per-point sigma must be positive")

    def __len__(self) -> int:
        return int(self.voltage.size)
