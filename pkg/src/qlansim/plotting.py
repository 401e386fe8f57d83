"""Figure rendering for run artifacts.

Every function takes data plus an output path, writes one PNG, and returns
the path.  The Agg backend is forced so runs work headless.
"""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from qlansim.photonics import BASIS_LABELS
from qlansim.timebase import DelayHistogram, estimate_std

__all__ = [
    "plot_coincidence_histograms",
    "plot_delay_histograms",
    "plot_density_matrix",
    "plot_key_pool",
    "plot_tap_widths",
]


def _finish(fig, path: str | Path) -> Path:
    path = Path(path)
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def _scaled_axis(max_abs_ps: float) -> tuple[float, str]:
    if max_abs_ps >= 1e5:
        return 1e-6, "delay (us)"
    if max_abs_ps >= 1e2:
        return 1e-3, "delay (ns)"
    return 1.0, "delay (ps)"


def plot_delay_histograms(
    entries: Sequence[tuple[str, DelayHistogram]], path: str | Path
) -> Path:
    """Stacked relative-delay histograms, one panel per clock technology.

    Panels get their own x scale; the spreads differ by orders of magnitude,
    which is the whole point of the comparison.
    """
    if not entries:
        raise ValueError("nothing to plot")
    fig, axes = plt.subplots(len(entries), 1, figsize=(7.0, 2.6 * len(entries)), squeeze=False)
    for ax, (label, hist) in zip(axes[:, 0], entries):
        centers = hist.bin_centers()
        std_ps = estimate_std(hist)
        scale, xlabel = _scaled_axis(float(np.abs(centers).max()) or 1.0)
        ax.fill_between(centers * scale, hist.counts, step="mid", alpha=0.6)
        ax.set_xlabel(xlabel)
        ax.set_ylabel("counts")
        ax.set_title(f"{label}: std {_pretty_ps(std_ps)}", fontsize=10)
    fig.tight_layout()
    return _finish(fig, path)


def _pretty_ps(value_ps: float) -> str:
    if abs(value_ps) >= 1e3:
        return f"{value_ps / 1e3:.3g} ns"
    return f"{value_ps:.3g} ps"


def plot_coincidence_histograms(
    entries: Sequence[tuple[str, DelayHistogram]], path: str | Path
) -> Path:
    """Coincidence peaks for each timing variant, sharing the x axis so the
    narrower peak is visibly narrower."""
    if not entries:
        raise ValueError("nothing to plot")
    fig, axes = plt.subplots(
        len(entries), 1, figsize=(7.0, 2.6 * len(entries)), sharex=True, squeeze=False
    )
    span = max(
        float(np.abs(hist.bin_centers()).max()) for _, hist in entries
    )
    scale, xlabel = _scaled_axis(span)
    for ax, (label, hist) in zip(axes[:, 0], entries):
        ax.fill_between(hist.bin_centers() * scale, hist.counts, step="mid", alpha=0.6)
        ax.set_ylabel("counts")
        ax.set_title(f"{label} ({hist.bin_width_ps:g} ps bins)", fontsize=10)
    axes[-1, 0].set_xlabel(xlabel)
    fig.tight_layout()
    return _finish(fig, path)


def plot_tap_widths(
    true_widths_ps: np.ndarray,
    recovered_widths_ps: np.ndarray,
    path: str | Path,
    nominal_ps: float | None = None,
) -> Path:
    """Planted vs code-density-recovered tap widths across the delay line."""
    true_widths_ps = np.asarray(true_widths_ps, dtype=np.float64)
    recovered_widths_ps = np.asarray(recovered_widths_ps, dtype=np.float64)
    if true_widths_ps.shape != recovered_widths_ps.shape:
        raise ValueError("width arrays must have matching shapes")
    taps = np.arange(true_widths_ps.size)
    fig, ax = plt.subplots(figsize=(7.0, 3.2))
    ax.step(taps, true_widths_ps, where="mid", label="planted", lw=1.0)
    ax.step(taps, recovered_widths_ps, where="mid", label="recovered", lw=1.0, alpha=0.7)
    if nominal_ps is not None:
        ax.axhline(nominal_ps, color="k", ls=":", lw=0.8, label="nominal")
    ax.set_xlabel("tap index")
    ax.set_ylabel("width (ps)")
    ax.legend(fontsize=8)
    fig.tight_layout()
    return _finish(fig, path)


def plot_density_matrix(matrix: np.ndarray, path: str | Path, title: str = "") -> Path:
    """Real and imaginary parts side by side, fixed color scale so links are
    comparable across figures."""
    m = np.asarray(matrix, dtype=np.complex128)
    if m.shape != (4, 4):
        raise ValueError(f"expected a 4x4 matrix, got shape {m.shape}")
    fig, (ax_re, ax_im) = plt.subplots(1, 2, figsize=(8.0, 3.6))
    for ax, part, label in ((ax_re, m.real, "Re"), (ax_im, m.imag, "Im")):
        image = ax.imshow(part, vmin=-0.55, vmax=0.55, cmap="RdBu_r")
        ax.set_xticks(range(4), BASIS_LABELS)
        ax.set_yticks(range(4), BASIS_LABELS)
        ax.set_title(f"{label}({title})" if title else label, fontsize=10)
        fig.colorbar(image, ax=ax, shrink=0.8)
    fig.tight_layout()
    return _finish(fig, path)


def plot_key_pool(
    times_s: np.ndarray,
    available: np.ndarray,
    qber_times_s: np.ndarray,
    qber_values: np.ndarray,
    path: str | Path,
    rotation_times_s: np.ndarray | None = None,
) -> Path:
    """Pool occupancy and QBER on a shared time axis (hours)."""
    times_s = np.asarray(times_s, dtype=np.float64)
    fig, ax = plt.subplots(figsize=(7.5, 3.6))
    ax.step(times_s / 3600.0, available, where="post", color="tab:blue", lw=0.9)
    ax.set_xlabel("time (h)")
    ax.set_ylabel("available keys", color="tab:blue")
    ax.tick_params(axis="y", labelcolor="tab:blue")
    if rotation_times_s is not None and len(rotation_times_s):
        ax.plot(
            np.asarray(rotation_times_s) / 3600.0,
            np.zeros(len(rotation_times_s)),
            "|",
            color="tab:green",
            markersize=8,
            label="rotations",
        )
    twin = ax.twinx()
    twin.plot(
        np.asarray(qber_times_s) / 3600.0,
        np.asarray(qber_values) * 100.0,
        color="tab:orange",
        lw=0.4,
        alpha=0.7,
    )
    twin.set_ylabel("QBER (%)", color="tab:orange")
    twin.tick_params(axis="y", labelcolor="tab:orange")
    fig.tight_layout()
    return _finish(fig, path)
