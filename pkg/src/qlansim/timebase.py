"""Clock models and relative-delay statistics for node synchronization.

Each network node timestamps events against its local copy of network time.
The local copy differs from true time by a fixed offset, a linear drift, and
a per-reading gaussian jitter.  Comparing two clocks pulse-by-pulse gives the
relative-delay histogram used to characterize a synchronization technology.

Units: event epochs in seconds, offsets and histogram bins in picoseconds.
"""

from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

__all__ = [
    "ClockKind",
    "ClockModel",
    "DelayHistogram",
    "EmptyHistogramError",
    "GPS_PAIR_JITTER_PS",
    "WHITE_RABBIT_PAIR_JITTER_PS",
    "estimate_std",
    "relative_delay_histogram",
    "sample_clock_offset",
    "sample_clock_offsets",
    "read_histogram_csv",
    "write_histogram_csv",
]

# Measured pair jitter (std of the two-clock relative delay) of the two
# synchronization technologies deployed in the modeled network.
GPS_PAIR_JITTER_PS = 1210.0
WHITE_RABBIT_PAIR_JITTER_PS = 12.9


class EmptyHistogramError(ValueError):
    """Raised when a statistic is requested from a histogram with no counts."""


class ClockKind(enum.Enum):
    GPS = "gps"
    WHITE_RABBIT = "white_rabbit"
    IDEAL = "ideal"


@dataclass(frozen=True)
class ClockModel:
    """A node clock: gaussian read jitter plus fixed offset and linear drift."""

    kind: ClockKind
    jitter_sigma_ps: float = 0.0
    fixed_offset_ps: float = 0.0
    drift_ps_per_s: float = 0.0

    def __post_init__(self) -> None:
        if not math.isfinite(self.jitter_sigma_ps) or self.jitter_sigma_ps < 0:
            raise ValueError(f"jitter_sigma_ps must be finite and >= 0, got {self.jitter_sigma_ps}")
        if self.kind is ClockKind.IDEAL and self.jitter_sigma_ps != 0.0:
            raise ValueError("an ideal clock has zero jitter")

    @classmethod
    def from_pair_sigma(cls, kind: ClockKind, pair_sigma_ps: float, **kwargs) -> "ClockModel":
        """Build one clock of an identical pair whose relative delay has the
        given std.  Independent equal clocks add in quadrature, so each clock
        carries pair_sigma / sqrt(2)."""
        return cls(kind=kind, jitter_sigma_ps=pair_sigma_ps / math.sqrt(2.0), **kwargs)


def sample_clock_offsets(
    model: ClockModel, epochs_s: np.ndarray, rng: np.random.Generator
) -> np.ndarray:
    """Offsets (ps) of the clock's readings at the given true epochs."""
    epochs = np.asarray(epochs_s, dtype=np.float64)
    offsets = model.fixed_offset_ps + model.drift_ps_per_s * epochs
    if model.jitter_sigma_ps > 0:
        offsets = offsets + rng.normal(0.0, model.jitter_sigma_ps, size=epochs.shape)
    elif offsets.shape != epochs.shape:
        offsets = np.broadcast_to(offsets, epochs.shape).copy()
    return offsets


def sample_clock_offset(model: ClockModel, epoch_s: float, rng: np.random.Generator) -> float:
    """Single offset sample (ps) at one epoch."""
    return float(sample_clock_offsets(model, np.asarray([epoch_s]), rng)[0])


@dataclass(frozen=True)
class DelayHistogram:
    """Uniform-bin histogram of relative delays.

    Bin i covers [origin_ps + i*bin_width_ps, origin_ps + (i+1)*bin_width_ps).
    """

    bin_width_ps: float
    origin_ps: float
    counts: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        if not (self.bin_width_ps > 0) or not math.isfinite(self.bin_width_ps):
            raise ValueError(f"bin_width_ps must be finite and > 0, got {self.bin_width_ps}")
        counts = np.asarray(self.counts, dtype=np.int64)
        if counts.ndim != 1:
            raise ValueError("counts must be one-dimensional")
        if np.any(counts < 0):
            raise ValueError("counts must be non-negative")
        object.__setattr__(self, "counts", counts)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def bin_centers(self) -> np.ndarray:
        idx = np.arange(self.counts.size, dtype=np.float64)
        return self.origin_ps + (idx + 0.5) * self.bin_width_ps


def histogram_from_samples(samples_ps: np.ndarray, bin_width_ps: float) -> DelayHistogram:
    """Bin raw delay samples (ps) into a DelayHistogram covering their span."""
    samples = np.asarray(samples_ps, dtype=np.float64)
    if samples.size == 0:
        raise EmptyHistogramError("no delay samples to histogram")
    if not (bin_width_ps > 0):
        raise ValueError(f"bin_width_ps must be > 0, got {bin_width_ps}")
    origin = math.floor(samples.min() / bin_width_ps) * bin_width_ps
    idx = np.floor((samples - origin) / bin_width_ps).astype(np.int64)
    # guard the edge where float rounding puts the max sample one bin past the end
    n_bins = int(idx.max()) + 1
    counts = np.bincount(idx, minlength=n_bins)
    return DelayHistogram(bin_width_ps=float(bin_width_ps), origin_ps=float(origin), counts=counts)


def relative_delay_histogram(
    clock_a: ClockModel,
    clock_b: ClockModel,
    duration_s: float,
    rng: np.random.Generator,
    pulse_rate_hz: float = 10.0,
    bin_width_ps: float = 1.0,
) -> DelayHistogram:
    """Histogram of (clock_a - clock_b) arrival-time differences for a common
    pulse train.

    Both clocks timestamp the same pulses, emitted at ``pulse_rate_hz`` over
    ``duration_s``.  For independent gaussian clocks the histogram std
    approaches sqrt(sigma_a^2 + sigma_b^2).
    """
    if duration_s <= 0:
        raise ValueError(f"duration_s must be > 0, got {duration_s}")
    if pulse_rate_hz <= 0:
        raise ValueError(f"pulse_rate_hz must be > 0, got {pulse_rate_hz}")
    n_pulses = int(math.floor(duration_s * pulse_rate_hz))
    if n_pulses == 0:
        raise EmptyHistogramError("duration too short for a single pulse at this rate")
    epochs = np.arange(n_pulses, dtype=np.float64) / pulse_rate_hz
    delta = sample_clock_offsets(clock_a, epochs, rng) - sample_clock_offsets(clock_b, epochs, rng)
    return histogram_from_samples(delta, bin_width_ps)


def estimate_std(hist: DelayHistogram) -> float:
    """Count-weighted std (ps) of the bin centers.

    Binning adds at most bin_width/sqrt(12) of quantization spread on top of
    the underlying sample std.
    """
    total = hist.total
    if total == 0:
        raise EmptyHistogramError("histogram has no counts")
    centers = hist.bin_centers()
    weights = hist.counts / total
    mean = float(np.dot(weights, centers))
    var = float(np.dot(weights, (centers - mean) ** 2))
    return math.sqrt(max(var, 0.0))


def write_histogram_csv(hist: DelayHistogram, path: str | Path) -> Path:
    """Write "bin_center_ps,count" rows, one per bin."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["bin_center_ps", "count"])
        for center, count in zip(hist.bin_centers(), hist.counts):
            writer.writerow([f"{center:.6f}", int(count)])
    return path


def read_histogram_csv(path: str | Path) -> DelayHistogram:
    """Inverse of write_histogram_csv (uniform spacing is re-derived)."""
    centers: list[float] = []
    counts: list[int] = []
    with Path(path).open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["bin_center_ps", "count"]:
            raise ValueError(f"unexpected histogram header: {header}")
        for row in reader:
            centers.append(float(row[0]))
            counts.append(int(row[1]))
    if not centers:
        raise EmptyHistogramError(f"no histogram rows in {path}")
    if len(centers) > 1:
        width = float(np.median(np.diff(centers)))
    else:
        width = 1.0
    origin = centers[0] - 0.5 * width
    return DelayHistogram(bin_width_ps=width, origin_ps=origin, counts=np.asarray(counts))
