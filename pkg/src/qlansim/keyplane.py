"""QKD-keyed control plane: key production, pooling, and rotation timing.

Secret bits accrue in one-second samples, chunk into 256-bit keys, and feed
a pool that firewall re-keying draws from (one key per rotation).  Rotation
times avoid loss-intolerant measurement windows: a rotation landing strictly
inside an unreliable window is deferred to that window's end.  Window
boundaries themselves are fair game, which is what lets a 40-minute update
interval coexist with a 37-minute measurement occupying the head of each
cycle.
"""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

__all__ = [
    "KEY_BITS",
    "KeyPool",
    "PoolExhaustedError",
    "PoolTimeline",
    "ProductionRun",
    "Protocol",
    "QkdLinkStats",
    "RotationSchedule",
    "TrafficWindow",
    "chunk_keys",
    "default_link_stats",
    "generate_keys",
    "pool_timeline",
    "read_key_file",
    "schedule_rotations",
    "simulate_key_production",
    "write_key_file",
    "write_pool_csv",
    "write_rotation_csv",
]

KEY_BITS = 256
_SAMPLE_INTERVAL_S = 1.0
_HEX_LINE = re.compile(r"^[0-9a-f]{64}$")


class PoolExhaustedError(RuntimeError):
    """A withdrawal was requested from an empty pool."""

    def __init__(self, time_s: float):
        self.time_s = time_s
        super().__init__(f"key pool exhausted at t={time_s:g} s")


class Protocol(enum.Enum):
    RELIABLE = "reliable"
    UNRELIABLE = "unreliable"


@dataclass(frozen=True)
class TrafficWindow:
    start_s: float
    end_s: float
    protocol: Protocol = Protocol.UNRELIABLE

    def __post_init__(self) -> None:
        if self.end_s <= self.start_s:
            raise ValueError(f"window end {self.end_s} must exceed start {self.start_s}")

    @property
    def duration_s(self) -> float:
        return self.end_s - self.start_s

    def contains_strictly(self, time_s: float) -> bool:
        return self.start_s < time_s < self.end_s


@dataclass(frozen=True)
class QkdLinkStats:
    """Link-level QKD performance, as mean/std of SKR and QBER."""

    skr_mean_bits_per_s: float
    skr_std_bits_per_s: float
    qber_mean: float
    qber_std: float

    def __post_init__(self) -> None:
        if self.skr_mean_bits_per_s <= 0:
            raise ValueError("mean secret key rate must be positive")
        if self.skr_std_bits_per_s < 0 or self.qber_std < 0:
            raise ValueError("standard deviations cannot be negative")
        if not 0 <= self.qber_mean < 0.5:
            raise ValueError(f"QBER mean must be in [0, 0.5), got {self.qber_mean}")


def default_link_stats() -> QkdLinkStats:
    """Measured Alice-Charlie link performance over a day of operation."""
    return QkdLinkStats(
        skr_mean_bits_per_s=1620.0,
        skr_std_bits_per_s=150.0,
        qber_mean=0.0168,
        qber_std=0.0009,
    )


def chunk_keys(bits: int) -> tuple[int, int]:
    """(whole 256-bit keys, leftover bits); the leftover carries forward."""
    if bits < 0:
        raise ValueError(f"bit count cannot be negative, got {bits}")
    return bits // KEY_BITS, bits % KEY_BITS


@dataclass(frozen=True, eq=False)
class ProductionRun:
    """One simulated stretch of key production."""

    key_times_s: np.ndarray
    sample_times_s: np.ndarray
    skr_series_bits_per_s: np.ndarray
    qber_series: np.ndarray
    leftover_bits: float

    @property
    def key_count(self) -> int:
        return int(self.key_times_s.size)

    def mean_key_rate_hz(self) -> float:
        if self.sample_times_s.size == 0:
            return 0.0
        return self.key_count / float(self.sample_times_s[-1])


def simulate_key_production(
    stats: QkdLinkStats, duration_s: float, rng: np.random.Generator
) -> ProductionRun:
    """Accrue secret bits second by second; every 256 bits emits one key.

    Key arrivals are stamped at the end of the sample interval that
    completed them.  The sampled rate is floored at zero.
    """
    if duration_s <= 0:
        raise ValueError(f"duration must be positive, got {duration_s}")
    n_samples = int(round(duration_s / _SAMPLE_INTERVAL_S))
    n_samples = max(n_samples, 1)
    skr = np.maximum(
        rng.normal(stats.skr_mean_bits_per_s, stats.skr_std_bits_per_s, n_samples), 0.0
    )
    qber = np.clip(rng.normal(stats.qber_mean, stats.qber_std, n_samples), 0.0, None)
    sample_times = (np.arange(n_samples) + 1) * _SAMPLE_INTERVAL_S

    cumulative = np.cumsum(skr * _SAMPLE_INTERVAL_S)
    keys_by_sample = np.floor(cumulative / KEY_BITS).astype(np.int64)
    new_keys = np.diff(np.concatenate([[0], keys_by_sample]))
    key_times = np.repeat(sample_times, new_keys)
    leftover = float(cumulative[-1] - keys_by_sample[-1] * KEY_BITS)
    return ProductionRun(
        key_times_s=key_times,
        sample_times_s=sample_times,
        skr_series_bits_per_s=skr,
        qber_series=qber,
        leftover_bits=leftover,
    )


@dataclass(frozen=True, eq=False)
class RotationSchedule:
    """Re-key instants after deferral around unreliable windows."""

    times_s: np.ndarray
    interval_s: float
    warnings: tuple[str, ...] = field(default_factory=tuple)


def schedule_rotations(
    horizon_s: float,
    interval_s: float,
    windows: tuple[TrafficWindow, ...] = (),
) -> RotationSchedule:
    """Nominal rotations at k*interval, deferred out of unreliable windows.

    Deferral moves a blocked rotation to the window's end; coinciding
    deferred rotations collapse to a single event.  An interval shorter than
    the longest unreliable window gets a starvation warning attached.
    """
    if horizon_s <= 0 or interval_s <= 0:
        raise ValueError("horizon and interval must be positive")
    windows = tuple(windows)
    ordered = sorted(windows, key=lambda w: w.start_s)
    for earlier, later in zip(ordered, ordered[1:]):
        if later.start_s < earlier.end_s:
            raise ValueError(
                f"windows overlap: [{earlier.start_s}, {earlier.end_s}] and "
                f"[{later.start_s}, {later.end_s}]"
            )
    unreliable = [w for w in ordered if w.protocol is Protocol.UNRELIABLE]

    warnings: list[str] = []
    if unreliable:
        longest = max(w.duration_s for w in unreliable)
        if interval_s < longest:
            warnings.append(
                f"rotation interval {interval_s:g} s is shorter than the longest "
                f"unreliable window ({longest:g} s); rotations may starve"
            )

    times = []
    nominal = interval_s
    while nominal <= horizon_s:
        time = nominal
        moved = True
        while moved:
            moved = False
            for window in unreliable:
                if window.contains_strictly(time):
                    time = window.end_s
                    moved = True
        if time <= horizon_s and (not times or time > times[-1]):
            times.append(time)
        nominal += interval_s
    return RotationSchedule(
        times_s=np.asarray(times, dtype=np.float64),
        interval_s=float(interval_s),
        warnings=tuple(warnings),
    )


@dataclass(frozen=True, eq=False)
class KeyPool:
    """Serialized ledger of key arrivals and withdrawals.

    Construction fails if any prefix of the merged event stream would drive
    the balance negative.
    """

    production_log: np.ndarray
    consumption_log: np.ndarray
    preload: int = 0

    def __post_init__(self) -> None:
        production = np.asarray(self.production_log, dtype=np.float64)
        consumption = np.asarray(self.consumption_log, dtype=np.float64)
        object.__setattr__(self, "production_log", production)
        object.__setattr__(self, "consumption_log", consumption)
        if self.preload < 0:
            raise ValueError("preload cannot be negative")
        for name, log in (("production", production), ("consumption", consumption)):
            if log.size > 1 and np.any(np.diff(log) < 0):
                raise ValueError(f"{name} log is not time-sorted")
        _, balance, times = _merge_events(production, consumption, self.preload)
        negative = np.nonzero(balance < 0)[0]
        if negative.size:
            raise PoolExhaustedError(float(times[negative[0]]))

    @property
    def available(self) -> int:
        return self.preload + int(self.production_log.size) - int(self.consumption_log.size)


def _merge_events(
    production: np.ndarray, consumption: np.ndarray, preload: int
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Merged event deltas; consumption sorts after production at equal times."""
    times = np.concatenate([production, consumption])
    deltas = np.concatenate([np.ones(production.size), -np.ones(consumption.size)])
    tie = np.concatenate([np.zeros(production.size), np.ones(consumption.size)])
    order = np.lexsort((tie, times))
    balance = preload + np.cumsum(deltas[order])
    return deltas[order], balance, times[order]


@dataclass(frozen=True, eq=False)
class PoolTimeline:
    """Step series of available keys plus a straight-line fit."""

    times_s: np.ndarray
    available: np.ndarray
    slope_keys_per_s: float
    pool: KeyPool


def pool_timeline(
    production_log: np.ndarray,
    rotation_times_s: np.ndarray,
    preload: int = 0,
) -> PoolTimeline:
    """Available-keys step function and its least-squares slope.

    The series starts at (0, preload); each event appends the balance after
    it.  Raises PoolExhaustedError naming the first violation time.
    """
    pool = KeyPool(
        production_log=np.asarray(production_log, dtype=np.float64),
        consumption_log=np.asarray(rotation_times_s, dtype=np.float64),
        preload=preload,
    )
    _, balance, times = _merge_events(
        pool.production_log, pool.consumption_log, pool.preload
    )
    series_times = np.concatenate([[0.0], times])
    series_values = np.concatenate([[float(preload)], balance])
    if series_times.size >= 2:
        slope = float(np.polyfit(series_times, series_values, 1)[0])
    else:
        slope = 0.0
    return PoolTimeline(
        times_s=series_times,
        available=series_values,
        slope_keys_per_s=slope,
        pool=pool,
    )


def generate_keys(count: int, rng: np.random.Generator) -> list[str]:
    """Opaque 256-bit keys as 64-char lowercase hex strings."""
    if count < 0:
        raise ValueError("key count cannot be negative")
    return [bytes(rng.integers(0, 256, 32, dtype=np.uint8)).hex() for _ in range(count)]


def write_key_file(keys: list[str], path: str | Path) -> Path:
    path = Path(path)
    for key in keys:
        if not _HEX_LINE.match(key):
            raise ValueError(f"not a 256-bit hex key: {key!r}")
    path.write_text("".join(key + "\n" for key in keys))
    return path


def read_key_file(path: str | Path) -> list[str]:
    keys = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.strip()
        if not line:
            continue
        if not _HEX_LINE.match(line):
            raise ValueError(f"{path}:{lineno}: not a 256-bit hex key")
        keys.append(line)
    return keys


def write_pool_csv(timeline: PoolTimeline, path: str | Path) -> Path:
    path = Path(path)
    lines = ["time_s,available_keys"]
    for time, value in zip(timeline.times_s, timeline.available):
        lines.append(f"{time:.6f},{int(value)}")
    path.write_text("\n".join(lines) + "\n")
    return path


def write_rotation_csv(schedule: RotationSchedule, path: str | Path) -> Path:
    path = Path(path)
    lines = ["time_s,key_id"]
    for key_id, time in enumerate(schedule.times_s):
        lines.append(f"{time:.6f},{key_id}")
    path.write_text("\n".join(lines) + "\n")
    return path
