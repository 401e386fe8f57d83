"""Two-stream correlation: delay peaks, coincidence counting, accidentals.

Streams are sorted detection times in float seconds (raw or decoded tags).
Delta-t histograms are binned in picoseconds on a grid centered on the search
delay, so a zero-delay peak lands on an exact bin center.  Windows and delays
at the counting API are nanoseconds, matching how they are quoted in lab use.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .timebase import DelayHistogram, EmptyHistogramError

__all__ = [
    "CoincidenceResult",
    "OrderingError",
    "accidental_rate_hz",
    "correlation_histogram",
    "count_coincidences",
    "find_delay_ns",
    "result_report_lines",
    "write_delta_histogram_csv",
    "write_result_json",
]


class OrderingError(ValueError):
    """Input stream is not time-sorted."""


@dataclass(frozen=True)
class CoincidenceResult:
    """Outcome of matching two streams at one window/delay choice."""

    window_ns: float
    relative_delay_ns: float
    coincidences: int
    singles_a: int
    singles_b: int
    accidental_estimate: float

    def __post_init__(self) -> None:
        if self.coincidences > min(self.singles_a, self.singles_b):
            raise ValueError("more coincidences than singles; matching is broken")
        if min(self.coincidences, self.singles_a, self.singles_b) < 0:
            raise ValueError("negative counts")


def _check_sorted(stream: np.ndarray, name: str) -> np.ndarray:
    arr = np.asarray(stream, dtype=np.float64)
    if arr.ndim != 1:
        raise ValueError(f"stream {name} must be one-dimensional")
    if arr.size > 1 and np.any(np.diff(arr) < 0):
        raise OrderingError(f"stream {name} is not time-sorted")
    return arr


def correlation_histogram(
    a: np.ndarray,
    b: np.ndarray,
    delay_range_ns: float,
    bin_width_ps: float,
    center_ns: float = 0.0,
    n_chunks: int = 1,
) -> DelayHistogram:
    """Histogram of all pairwise dt = t_b - t_a within center +- delay_range.

    Every in-range pairing is counted once.  ``n_chunks`` splits the a-stream
    into contiguous slices processed independently (each pair is owned by its
    a-event, so the merged result is identical to a single pass).
    """
    a = _check_sorted(a, "a")
    b = _check_sorted(b, "b")
    if delay_range_ns <= 0:
        raise ValueError(f"delay_range_ns must be > 0, got {delay_range_ns}")
    if bin_width_ps <= 0:
        raise ValueError(f"bin_width_ps must be > 0, got {bin_width_ps}")
    if n_chunks < 1:
        raise ValueError(f"n_chunks must be >= 1, got {n_chunks}")

    center_ps = center_ns * 1e3
    n_half = int(math.ceil(delay_range_ns * 1e3 / bin_width_ps))
    n_bins = 2 * n_half + 1
    origin_ps = center_ps - (n_half + 0.5) * bin_width_ps
    lo_s = (origin_ps) * 1e-12
    hi_s = (origin_ps + n_bins * bin_width_ps) * 1e-12

    counts = np.zeros(n_bins, dtype=np.int64)
    bounds = np.linspace(0, a.size, n_chunks + 1).astype(int)
    for start, stop in zip(bounds[:-1], bounds[1:]):
        chunk = a[start:stop]
        if chunk.size == 0:
            continue
        lo = np.searchsorted(b, chunk + lo_s, side="left")
        hi = np.searchsorted(b, chunk + hi_s, side="right")
        m = hi - lo
        total = int(m.sum())
        if total == 0:
            continue
        a_rep = np.repeat(chunk, m)
        group_start = np.repeat(np.cumsum(m) - m, m)
        b_idx = np.arange(total) - group_start + np.repeat(lo, m)
        delta_ps = (b[b_idx] - a_rep) * 1e12
        idx = np.floor((delta_ps - origin_ps) / bin_width_ps).astype(np.int64)
        valid = (idx >= 0) & (idx < n_bins)
        counts += np.bincount(idx[valid], minlength=n_bins)
    return DelayHistogram(bin_width_ps=float(bin_width_ps), origin_ps=float(origin_ps), counts=counts)


def find_delay_ns(hist: DelayHistogram) -> float:
    """Center of the maximum bin, in ns.

    Ties go to the smallest |delay|; an exact +-x tie resolves negative.
    """
    if hist.total == 0:
        raise EmptyHistogramError("cannot find a delay peak in an empty histogram")
    counts = hist.counts
    centers = hist.bin_centers()
    best = counts.max()
    candidates = centers[counts == best]
    chosen = min(candidates, key=lambda c: (round(abs(c), 6), c))
    return float(chosen) * 1e-3


def count_coincidences(
    a: np.ndarray,
    b: np.ndarray,
    window_ns: float,
    delay_ns: float,
    duration_s: float | None = None,
) -> CoincidenceResult:
    """Greedy earliest-first one-to-one matching with |t_b - t_a - delay| <=
    window/2.

    ``duration_s`` feeds the accidental estimate S_a * S_b * window / T; when
    omitted it is inferred from the combined stream span.
    """
    a = _check_sorted(a, "a")
    b = _check_sorted(b, "b")
    if window_ns <= 0:
        raise ValueError(f"window_ns must be > 0, got {window_ns}")

    half_s = window_ns * 1e-9 / 2.0
    delay_s = delay_ns * 1e-9
    a_list = a.tolist()
    b_list = b.tolist()
    i = j = 0
    count = 0
    na, nb = len(a_list), len(b_list)
    while i < na and j < nb:
        dt = b_list[j] - a_list[i] - delay_s
        if dt < -half_s:
            j += 1
        elif dt > half_s:
            i += 1
        else:
            count += 1
            i += 1
            j += 1

    if duration_s is None:
        if na and nb:
            duration_s = max(a[-1], b[-1]) - min(a[0], b[0])
        else:
            duration_s = 0.0
    if duration_s > 0:
        accidental = na * nb * (window_ns * 1e-9) / duration_s
    else:
        accidental = 0.0
    return CoincidenceResult(
        window_ns=float(window_ns),
        relative_delay_ns=float(delay_ns),
        coincidences=count,
        singles_a=na,
        singles_b=nb,
        accidental_estimate=float(accidental),
    )


def accidental_rate_hz(singles_a_hz: float, singles_b_hz: float, window_ns: float) -> float:
    """Expected accidental-coincidence rate S_a * S_b * tau."""
    if min(singles_a_hz, singles_b_hz, window_ns) < 0:
        raise ValueError("rates and window must be non-negative")
    return singles_a_hz * singles_b_hz * window_ns * 1e-9


def write_delta_histogram_csv(hist: DelayHistogram, path: str | Path) -> Path:
    """Delta-t histogram as ``delta_t_ps,count`` rows."""
    path = Path(path)
    lines = ["delta_t_ps,count"]
    for center, count in zip(hist.bin_centers(), hist.counts):
        lines.append(f"{center:.6f},{int(count)}")
    path.write_text("\n".join(lines) + "\n")
    return path


def result_report_lines(result: CoincidenceResult) -> list[str]:
    """Human-readable key: value report."""
    return [
        f"window_ns: {result.window_ns:g}",
        f"relative_delay_ns: {result.relative_delay_ns:.6f}",
        f"coincidences: {result.coincidences}",
        f"singles_a: {result.singles_a}",
        f"singles_b: {result.singles_b}",
        f"accidental_estimate: {result.accidental_estimate:.4f}",
    ]


def write_result_json(result: CoincidenceResult, path: str | Path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(asdict(result), indent=2, sort_keys=True) + "\n")
    return path
