"""Emulation of the FPGA time tagger used at each node.

A tag is a triple of counters: a 1 Hz seconds counter, a 200 MHz coarse
counter (5 ns ticks), and a fine interpolator index from a tapped carry-chain
delay line.  Tap delays are not uniform in real hardware, so the fine scale is
calibrated by code density: drive the input with events uncorrelated with the
clock and read each tap's width off its share of the hits.

Times are float seconds at the API boundary; tap widths are picoseconds.
"""

from __future__ import annotations

import csv
import math
import struct
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "COARSE_PERIOD_PS",
    "COARSE_TICKS_PER_SECOND",
    "DEFAULT_N_TAPS",
    "NOMINAL_TAP_PS",
    "CoverageError",
    "InvalidTagError",
    "PllConfig",
    "PllError",
    "TdcCalibration",
    "TimeTag",
    "calibrate_code_density",
    "fine_indices",
    "quantize_event",
    "quantize_times",
    "read_tags_binary",
    "read_tags_csv",
    "reconstruct_time",
    "reconstruct_times",
    "validate_pll",
    "write_tags_binary",
    "write_tags_csv",
]

COARSE_PERIOD_PS = 5000.0
COARSE_TICKS_PER_SECOND = 200_000_000
NOMINAL_TAP_PS = 17.5
# enough taps to cover one coarse period at the nominal tap delay
DEFAULT_N_TAPS = 286

_MAGIC = b"QTT1"
_RECORD = struct.Struct("<BIIH")  # channel u8, seconds u32, coarse u32, fine u16


class InvalidTagError(ValueError):
    """A tag's counters are outside the ranges the calibration can decode."""


class CoverageError(ValueError):
    """Code-density input left taps unobserved; the fine scale is undetermined."""

    def __init__(self, missing: Sequence[int]):
        self.missing = list(missing)
        shown = ", ".join(str(i) for i in self.missing[:10])
        suffix = ", ..." if len(self.missing) > 10 else ""
        super().__init__(
            f"{len(self.missing)} unobserved taps (indices {shown}{suffix}); "
            "collect more calibration events"
        )


class PllError(ValueError):
    """Clock-synthesis configuration cannot serve the tagger."""


@dataclass(frozen=True)
class TimeTag:
    """One detection event as recorded by the tagger."""

    channel: int
    seconds: int
    coarse: int
    fine: int

    def __post_init__(self) -> None:
        if not 0 <= self.channel <= 0xFF:
            raise InvalidTagError(f"channel {self.channel} outside u8 range")
        if not 0 <= self.seconds <= 0xFFFFFFFF:
            raise InvalidTagError(f"seconds {self.seconds} outside u32 range")
        if not 0 <= self.coarse <= 0xFFFFFFFF:
            raise InvalidTagError(f"coarse {self.coarse} outside u32 range")
        if not 0 <= self.fine <= 0xFFFF:
            raise InvalidTagError(f"fine {self.fine} outside u16 range")


@dataclass(frozen=True)
class TdcCalibration:
    """Per-tap widths of the fine delay line within one coarse period."""

    tap_widths_ps: np.ndarray = field(repr=False)
    coarse_period_ps: float = COARSE_PERIOD_PS

    def __post_init__(self) -> None:
        widths = np.asarray(self.tap_widths_ps, dtype=np.float64)
        if widths.ndim != 1 or widths.size == 0:
            raise ValueError("tap_widths_ps must be a non-empty 1-d array")
        if np.any(widths <= 0):
            raise ValueError("every tap width must be positive")
        total = float(widths.sum())
        if abs(total - self.coarse_period_ps) > 1e-6 * self.coarse_period_ps:
            raise ValueError(
                f"tap widths sum to {total} ps, expected {self.coarse_period_ps} ps"
            )
        object.__setattr__(self, "tap_widths_ps", widths)
        # right edges of each tap, used by the quantizer's bin search
        object.__setattr__(self, "_edges", np.cumsum(widths))

    @property
    def n_taps(self) -> int:
        return int(self.tap_widths_ps.size)

    def midpoints_ps(self) -> np.ndarray:
        edges = self._edges
        return edges - 0.5 * self.tap_widths_ps

    @classmethod
    def uniform(
        cls, n_taps: int = DEFAULT_N_TAPS, coarse_period_ps: float = COARSE_PERIOD_PS
    ) -> "TdcCalibration":
        """Equal taps splitting the coarse period exactly."""
        if n_taps <= 0:
            raise ValueError(f"n_taps must be positive, got {n_taps}")
        widths = np.full(n_taps, coarse_period_ps / n_taps)
        return cls(tap_widths_ps=widths, coarse_period_ps=coarse_period_ps)

    @classmethod
    def from_tap_width(
        cls, tap_width_ps: float = NOMINAL_TAP_PS, coarse_period_ps: float = COARSE_PERIOD_PS
    ) -> "TdcCalibration":
        """Nominal equal taps; a short final tap absorbs the remainder of the
        coarse period (5 ns / 17.5 ps is not an integer)."""
        if tap_width_ps <= 0:
            raise ValueError(f"tap_width_ps must be positive, got {tap_width_ps}")
        n_full = int(math.floor(coarse_period_ps / tap_width_ps))
        remainder = coarse_period_ps - n_full * tap_width_ps
        widths = [tap_width_ps] * n_full
        if remainder > 1e-9:
            widths.append(remainder)
        return cls(tap_widths_ps=np.asarray(widths), coarse_period_ps=coarse_period_ps)


def fine_indices(cal: TdcCalibration, residues_ps: np.ndarray) -> np.ndarray:
    """Tap index for each sub-coarse residue (ps in [0, coarse_period)).

    The index counts fully elapsed taps; residues past the last tap edge are
    clamped onto the final tap.
    """
    residues = np.asarray(residues_ps, dtype=np.float64)
    if np.any(residues < 0) or np.any(residues >= cal.coarse_period_ps):
        bad = residues[(residues < 0) | (residues >= cal.coarse_period_ps)][0]
        raise ValueError(f"residue {bad} ps outside [0, {cal.coarse_period_ps}) ps")
    idx = np.searchsorted(cal._edges, residues, side="right")
    return np.minimum(idx, cal.n_taps - 1).astype(np.int64)


def quantize_times(
    times_s: np.ndarray,
    cal: TdcCalibration,
    clock_offsets_ps: np.ndarray | float = 0.0,
    channel: int = 0,
) -> list[TimeTag]:
    """Quantize event times (true seconds) into tags, after applying the
    recording clock's offsets.

    Raises if any adjusted time is negative: the counters only run forward.
    """
    times = np.asarray(times_s, dtype=np.float64)
    adjusted = times + np.asarray(clock_offsets_ps, dtype=np.float64) * 1e-12
    if adjusted.size and adjusted.min() < 0:
        raise ValueError(
            f"adjusted event time {adjusted.min():.3e} s is negative; "
            "counters cannot represent times before the epoch"
        )
    seconds = np.floor(adjusted)
    rem_ps = (adjusted - seconds) * 1e12
    coarse = np.floor(rem_ps / cal.coarse_period_ps)
    residue = rem_ps - coarse * cal.coarse_period_ps
    # float rounding at tick boundaries can push the residue a hair negative
    under = residue < 0
    coarse[under] -= 1
    residue[under] += cal.coarse_period_ps
    fine = fine_indices(cal, residue)
    seconds = seconds.astype(np.int64)
    coarse = coarse.astype(np.int64)
    return [
        TimeTag(channel=channel, seconds=int(s), coarse=int(c), fine=int(f))
        for s, c, f in zip(seconds, coarse, fine)
    ]


def quantize_event(
    time_s: float,
    cal: TdcCalibration,
    clock_offset_ps: float = 0.0,
    channel: int = 0,
) -> TimeTag:
    """Quantize a single event time into a tag."""
    return quantize_times(np.asarray([time_s]), cal, clock_offset_ps, channel)[0]


def _check_decodable(tags: Iterable[TimeTag], cal: TdcCalibration) -> None:
    ticks = int(round(1e12 / cal.coarse_period_ps))
    for tag in tags:
        if tag.fine >= cal.n_taps:
            raise InvalidTagError(
                f"fine index {tag.fine} out of range for a {cal.n_taps}-tap calibration"
            )
        if tag.coarse >= ticks:
            raise InvalidTagError(
                f"coarse count {tag.coarse} exceeds {ticks - 1} ticks per second"
            )


def reconstruct_times(tags: Sequence[TimeTag], cal: TdcCalibration) -> np.ndarray:
    """Decode tags back to float seconds, placing each event at the midpoint
    of its fine tap."""
    _check_decodable(tags, cal)
    if not tags:
        return np.empty(0, dtype=np.float64)
    seconds = np.array([t.seconds for t in tags], dtype=np.float64)
    coarse = np.array([t.coarse for t in tags], dtype=np.float64)
    fine = np.array([t.fine for t in tags], dtype=np.int64)
    mid_ps = cal.midpoints_ps()[fine]
    return seconds + (coarse * cal.coarse_period_ps + mid_ps) * 1e-12


def reconstruct_time(tag: TimeTag, cal: TdcCalibration) -> float:
    """Decode a single tag to float seconds (fine-tap midpoint convention)."""
    return float(reconstruct_times([tag], cal)[0])


def calibrate_code_density(
    observed_fine: np.ndarray,
    n_taps: int,
    coarse_period_ps: float = COARSE_PERIOD_PS,
) -> TdcCalibration:
    """Calibrate tap widths from fine indices of clock-uncorrelated events.

    Events uniform over the coarse period land on each tap in proportion to
    its width, so width_i = coarse_period * count_i / total.  Every tap must
    be hit at least once.
    """
    observed = np.asarray(observed_fine, dtype=np.int64)
    if observed.size == 0:
        raise ValueError("no calibration events")
    if n_taps <= 0:
        raise ValueError(f"n_taps must be positive, got {n_taps}")
    if observed.min() < 0 or observed.max() >= n_taps:
        raise ValueError(
            f"fine index {observed.min() if observed.min() < 0 else observed.max()} "
            f"outside [0, {n_taps})"
        )
    counts = np.bincount(observed, minlength=n_taps)
    missing = np.flatnonzero(counts == 0)
    if missing.size:
        raise CoverageError(missing.tolist())
    widths = coarse_period_ps * counts / counts.sum()
    return TdcCalibration(tap_widths_ps=widths, coarse_period_ps=coarse_period_ps)


@dataclass(frozen=True)
class PllConfig:
    """Clock synthesis: one reference input multiplied onto several outputs.

    Multipliers are rationals, matching integer-N/fractional-N synthesis.
    """

    input_mhz: float | Fraction
    multipliers: tuple[Fraction, ...]

    def output_frequencies_mhz(self) -> tuple[Fraction, ...]:
        base = _as_fraction(self.input_mhz)
        return tuple(base * _as_fraction(m) for m in self.multipliers)


def _as_fraction(value: float | int | Fraction) -> Fraction:
    if isinstance(value, Fraction):
        return value
    return Fraction(value).limit_denominator(1_000_000_000)


_MIN_LOCK_MHZ = 19.0
_REQUIRED_OUTPUTS_MHZ = (Fraction(10), Fraction(200))


def validate_pll(config: PllConfig) -> tuple[float, ...]:
    """Check a synthesis plan against the tagger's needs and return the output
    frequencies (MHz).

    The reference must exceed the 19 MHz lock threshold, and the outputs must
    include the 10 MHz system tone and the 200 MHz coarse clock.
    """
    base = _as_fraction(config.input_mhz)
    if base <= _MIN_LOCK_MHZ:
        raise PllError(
            f"reference {float(base):g} MHz is at or below the {_MIN_LOCK_MHZ:g} MHz lock threshold"
        )
    outputs = config.output_frequencies_mhz()
    for target in _REQUIRED_OUTPUTS_MHZ:
        if target not in outputs:
            raise PllError(
                f"required {float(target):g} MHz output missing from "
                f"{[float(f) for f in outputs]}"
            )
    return tuple(float(f) for f in outputs)


def write_tags_binary(tags: Sequence[TimeTag], path: str | Path) -> Path:
    """Write the native tag container: magic 'QTT1' then 11-byte records."""
    path = Path(path)
    with path.open("wb") as fh:
        fh.write(_MAGIC)
        for tag in tags:
            fh.write(_RECORD.pack(tag.channel, tag.seconds, tag.coarse, tag.fine))
    return path


def read_tags_binary(path: str | Path) -> list[TimeTag]:
    data = Path(path).read_bytes()
    if data[: len(_MAGIC)] != _MAGIC:
        raise InvalidTagError(f"{path}: bad magic {data[:4]!r}, expected {_MAGIC!r}")
    body = data[len(_MAGIC):]
    if len(body) % _RECORD.size != 0:
        raise InvalidTagError(
            f"{path}: {len(body)} payload bytes is not a whole number of "
            f"{_RECORD.size}-byte records"
        )
    return [
        TimeTag(*_RECORD.unpack_from(body, off))
        for off in range(0, len(body), _RECORD.size)
    ]


def write_tags_csv(tags: Sequence[TimeTag], path: str | Path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["channel", "seconds", "coarse", "fine"])
        for tag in tags:
            writer.writerow([tag.channel, tag.seconds, tag.coarse, tag.fine])
    return path


def read_tags_csv(path: str | Path) -> list[TimeTag]:
    tags: list[TimeTag] = []
    with Path(path).open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["channel", "seconds", "coarse", "fine"]:
            raise InvalidTagError(f"{path}: unexpected header {header}")
        for row in reader:
            tags.append(TimeTag(int(row[0]), int(row[1]), int(row[2]), int(row[3])))
    return tags
