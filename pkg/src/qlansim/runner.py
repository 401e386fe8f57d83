"""Stage execution: turn a scenario into a reproducible artifact directory.

Each stage writes delimited data, a summary.json, and a rendered figure into
its own subdirectory; a run-level manifest.json records the seed and every
output path.  Nothing here touches wall-clock time, so re-running with the
same seed reproduces every numeric output byte for byte.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from qlansim import __version__, coincidence, plotting
from qlansim.keyplane import (
    KEY_BITS,
    Protocol,
    generate_keys,
    pool_timeline,
    schedule_rotations,
    simulate_key_production,
    write_key_file,
    write_pool_csv,
    write_rotation_csv,
)
from qlansim.photonics import basis_setting, generate_streams, werner_state
from qlansim.rng import substream
from qlansim.scenario import Scenario, clock_model, scenario_to_mapping, validate_scenario
from qlansim.tdc import (
    COARSE_PERIOD_PS,
    NOMINAL_TAP_PS,
    TdcCalibration,
    calibrate_code_density,
    fine_indices,
    quantize_times,
    reconstruct_times,
)
from qlansim.timebase import (
    GPS_PAIR_JITTER_PS,
    WHITE_RABBIT_PAIR_JITTER_PS,
    estimate_std,
    relative_delay_histogram,
    sample_clock_offsets,
    write_histogram_csv,
)
from qlansim.tomography import (
    ConvergenceError,
    RateModel,
    complete_settings,
    default_settings,
    reconstruct,
    simulate_dataset,
    state_to_json,
    summary_to_json,
)

__all__ = [
    "FULL_STAGES",
    "STAGES",
    "StageError",
    "StageResult",
    "run_coincidence",
    "run_full",
    "run_keyplane",
    "run_stages",
    "run_sync_jitter",
    "run_tdc_calibrate",
    "run_tomography",
]

STAGES = ("sync-jitter", "tdc-calibrate", "coincidence", "tomography", "keyplane")
# the full pipeline: calibration is a bench activity, not part of a data run
FULL_STAGES = ("sync-jitter", "coincidence", "tomography", "keyplane")

_PAIR_JITTER_PS = {
    "gps": GPS_PAIR_JITTER_PS,
    "white_rabbit": WHITE_RABBIT_PAIR_JITTER_PS,
    "ideal": 0.0,
}


class StageError(RuntimeError):
    """A stage failed; carries the stage name for exit reporting."""

    def __init__(self, stage: str, message: str):
        self.stage = stage
        super().__init__(message)


@dataclass(frozen=True)
class StageResult:
    """Outputs of one completed stage, paths relative to the run directory."""

    name: str
    directory: str
    outputs: tuple[str, ...]
    summary: dict


def _write_json(data: dict, path: Path) -> Path:
    path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")
    return path


def _write_columns(columns: dict[str, Sequence], stem: Path, fmt: str) -> Path:
    """Delimited series as CSV rows or a JSON column document."""
    if fmt == "json":
        path = stem.with_suffix(".json")
        document = {name: [_plain(v) for v in values] for name, values in columns.items()}
        return _write_json(document, path)
    path = stem.with_suffix(".csv")
    names = list(columns)
    rows = zip(*columns.values())
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(names)
        for row in rows:
            writer.writerow([_plain(v) for v in row])
    return path


def _plain(value):
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (np.floating,)):
        return float(value)
    return value


def _relative(paths: Sequence[Path], run_dir: Path) -> tuple[str, ...]:
    return tuple(p.relative_to(run_dir).as_posix() for p in paths)


def _stage_dir(run_dir: Path, name: str) -> Path:
    directory = run_dir / name.replace("-", "_")
    directory.mkdir(parents=True, exist_ok=True)
    return directory


# ---------------------------------------------------------------------------
# stages


def run_sync_jitter(scenario: Scenario, run_dir: Path, fmt: str = "csv") -> StageResult:
    """Relative-delay histogram per configured clock technology."""
    cfg = scenario.sync
    stage_dir = _stage_dir(run_dir, "sync-jitter")
    outputs: list[Path] = []
    entries = []
    models_summary: dict[str, dict] = {}
    for model in cfg.models:
        rng = substream(scenario.seed, "sync", model)
        hist = relative_delay_histogram(
            clock_model(model),
            clock_model(model),
            cfg.duration_s,
            rng,
            pulse_rate_hz=cfg.pulse_rate_hz,
            bin_width_ps=cfg.bin_width_ps,
        )
        stem = stage_dir / f"delay_histogram_{model}"
        if fmt == "json":
            outputs.append(
                _write_columns(
                    {"bin_center_ps": hist.bin_centers(), "count": hist.counts},
                    stem, fmt,
                )
            )
        else:
            outputs.append(write_histogram_csv(hist, stem.with_suffix(".csv")))
        entries.append((model, hist))
        models_summary[model] = {
            "std_ps": estimate_std(hist),
            "expected_pair_jitter_ps": _PAIR_JITTER_PS[model],
            "pulses": hist.total,
        }
    outputs.append(plotting.plot_delay_histograms(entries, stage_dir / "delay_histograms.png"))
    summary = {
        "duration_s": cfg.duration_s,
        "bin_width_ps": cfg.bin_width_ps,
        "pulse_rate_hz": cfg.pulse_rate_hz,
        "models": models_summary,
    }
    outputs.append(_write_json(summary, stage_dir / "summary.json"))
    return StageResult("sync-jitter", stage_dir.name, _relative(outputs, run_dir), summary)


def run_tdc_calibrate(scenario: Scenario, run_dir: Path, fmt: str = "csv") -> StageResult:
    """Plant a nonuniform tap profile, recover it by code density, report the
    recovery error."""
    cfg = scenario.tdc
    stage_dir = _stage_dir(run_dir, "tdc-calibrate")
    raw = 1.0 + cfg.width_spread * substream(scenario.seed, "tdc", "truth").uniform(
        -1.0, 1.0, cfg.n_taps
    )
    truth = TdcCalibration(tap_widths_ps=raw * (COARSE_PERIOD_PS / raw.sum()))
    residues = substream(scenario.seed, "tdc", "events").uniform(
        0.0, COARSE_PERIOD_PS, cfg.n_events
    )
    recovered = calibrate_code_density(fine_indices(truth, residues), cfg.n_taps)

    errors = recovered.tap_widths_ps - truth.tap_widths_ps
    outputs = [
        _write_columns(
            {
                "tap": np.arange(cfg.n_taps),
                "true_width_ps": truth.tap_widths_ps,
                "recovered_width_ps": recovered.tap_widths_ps,
            },
            stage_dir / "tap_widths", fmt,
        ),
        plotting.plot_tap_widths(
            truth.tap_widths_ps,
            recovered.tap_widths_ps,
            stage_dir / "tap_widths.png",
            nominal_ps=NOMINAL_TAP_PS,
        ),
    ]
    summary = {
        "n_taps": cfg.n_taps,
        "n_events": cfg.n_events,
        "width_spread": cfg.width_spread,
        "mean_tap_ps": float(recovered.tap_widths_ps.mean()),
        "max_abs_error_ps": float(np.abs(errors).max()),
        "rms_error_ps": float(np.sqrt(np.mean(errors**2))),
    }
    outputs.append(_write_json(summary, stage_dir / "summary.json"))
    return StageResult("tdc-calibrate", stage_dir.name, _relative(outputs, run_dir), summary)


def run_coincidence(scenario: Scenario, run_dir: Path, fmt: str = "csv") -> StageResult:
    """Generate one link's detection streams, tag them through the TDC under
    each timing variant, and histogram the correlations."""
    cfg = scenario.coincidence
    link = scenario.link_settings(cfg.link)
    rho = werner_state(link.werner_p)
    cal = TdcCalibration.from_tap_width()
    stage_dir = _stage_dir(run_dir, "coincidence")
    # fixed H/V analyzers pass about half the pairs of a singlet-class state
    setting_a, setting_b = basis_setting("H"), basis_setting("V")
    expected_delay_ns = link.arm_b.path_delay_ns - link.arm_a.path_delay_ns

    outputs: list[Path] = []
    entries = []
    variants_summary = []
    for i, variant in enumerate(cfg.variants):
        rng = substream(scenario.seed, "coincidence", f"variant{i}-{variant.clock}")
        times_a, times_b = generate_streams(
            rho, link.pair_rate_hz, cfg.duration_s,
            setting_a, setting_b, link.arm_a, link.arm_b, rng,
        )
        clock = clock_model(variant.clock)
        quantized = []
        for times in (times_a, times_b):
            offsets = sample_clock_offsets(clock, times, rng)
            tags = quantize_times(times, cal, offsets)
            quantized.append(np.sort(reconstruct_times(tags, cal)))
        qa, qb = quantized

        hist = coincidence.correlation_histogram(
            qa, qb, cfg.delay_range_ns, variant.bin_width_ps, center_ns=expected_delay_ns
        )
        delay_ns = coincidence.find_delay_ns(hist)
        result = coincidence.count_coincidences(
            qa, qb, cfg.window_ns, delay_ns, duration_s=cfg.duration_s
        )
        # peak width from a fine rebin around the expected delay; the display
        # binning can be far coarser than the peak itself
        pair_jitter_ps = _PAIR_JITTER_PS[variant.clock]
        expected_std_ps = math.sqrt(
            pair_jitter_ps**2
            + link.arm_a.jitter_sigma_ps**2
            + link.arm_b.jitter_sigma_ps**2
            + 2.0 * NOMINAL_TAP_PS**2 / 12.0
        )
        fine_range_ns = min(cfg.delay_range_ns, max(8.0 * expected_std_ps * 1e-3, 0.2))
        fine = coincidence.correlation_histogram(
            qa, qb, fine_range_ns, 1.0, center_ns=expected_delay_ns
        )
        label = f"{variant.clock}"
        stem = stage_dir / f"histogram_{i}_{variant.clock}"
        if fmt == "json":
            outputs.append(
                _write_columns(
                    {"delta_t_ps": hist.bin_centers(), "count": hist.counts}, stem, fmt
                )
            )
        else:
            outputs.append(coincidence.write_delta_histogram_csv(hist, stem.with_suffix(".csv")))
        outputs.append(
            coincidence.write_result_json(result, stage_dir / f"result_{i}_{variant.clock}.json")
        )
        entries.append((label, hist))
        variants_summary.append(
            {
                "clock": variant.clock,
                "bin_width_ps": variant.bin_width_ps,
                "found_delay_ns": delay_ns,
                "expected_delay_ns": expected_delay_ns,
                "peak_std_ps": estimate_std(fine),
                "expected_peak_std_ps": expected_std_ps,
                "coincidences": result.coincidences,
                "accidental_estimate": result.accidental_estimate,
            }
        )
    outputs.append(
        plotting.plot_coincidence_histograms(entries, stage_dir / "coincidence_peaks.png")
    )
    summary = {
        "link": cfg.link,
        "duration_s": cfg.duration_s,
        "window_ns": cfg.window_ns,
        "variants": variants_summary,
    }
    outputs.append(_write_json(summary, stage_dir / "summary.json"))
    return StageResult("coincidence", stage_dir.name, _relative(outputs, run_dir), summary)


def run_tomography(scenario: Scenario, run_dir: Path, fmt: str = "csv") -> StageResult:
    """Simulate count datasets and reconstruct the state of every link."""
    cfg = scenario.tomography
    settings = default_settings() if cfg.basis == "hvda" else complete_settings()
    stage_dir = _stage_dir(run_dir, "tomography")

    outputs: list[Path] = []
    table = {
        "link": [], "fidelity": [], "fidelity_std": [],
        "log_negativity": [], "log_negativity_std": [],
        "pair_rate_hz": [], "entangled_bits_per_s": [],
    }
    links_summary: dict[str, dict] = {}
    for link in scenario.links:
        rho = werner_state(link.werner_p)
        rates = RateModel(
            pair_rate_hz=link.pair_rate_hz,
            singles_a_hz=link.singles_a_hz,
            singles_b_hz=link.singles_b_hz,
            window_ns=scenario.coincidence.window_ns,
        )
        dataset = simulate_dataset(
            rho, settings, rates, cfg.integration_time_s,
            substream(scenario.seed, "tomography", link.name, "data"),
        )
        try:
            posterior = reconstruct(
                dataset,
                substream(scenario.seed, "tomography", link.name, "fit"),
                cfg.chain,
            )
        except ConvergenceError as err:
            raise ConvergenceError(f"link {link.name}: {err}") from None
        rate_hz = dataset.measured_pair_rate_hz()
        document = summary_to_json(posterior, coincidence_rate_hz=rate_hz)
        outputs.append(_write_json(document, stage_dir / f"posterior_{link.name}.json"))
        outputs.append(
            _write_json(state_to_json(posterior.mean_state), stage_dir / f"state_{link.name}.json")
        )
        outputs.append(
            plotting.plot_density_matrix(
                posterior.mean_state.matrix, stage_dir / f"state_{link.name}.png", link.name
            )
        )
        table["link"].append(link.name)
        table["fidelity"].append(posterior.fidelity.mean)
        table["fidelity_std"].append(posterior.fidelity.std)
        table["log_negativity"].append(posterior.log_negativity.mean)
        table["log_negativity_std"].append(posterior.log_negativity.std)
        table["pair_rate_hz"].append(rate_hz)
        table["entangled_bits_per_s"].append(document["entanglement_rate_ebits_per_s"])
        links_summary[link.name] = {
            "fidelity": {"mean": posterior.fidelity.mean, "std": posterior.fidelity.std},
            "log_negativity": {
                "mean": posterior.log_negativity.mean,
                "std": posterior.log_negativity.std,
            },
            "pair_rate_hz": rate_hz,
            "entangled_bits_per_s": document["entanglement_rate_ebits_per_s"],
            "warnings": list(posterior.warnings),
        }
    outputs.append(_write_columns(table, stage_dir / "link_table", fmt))
    summary = {
        "basis": cfg.basis,
        "integration_time_s": cfg.integration_time_s,
        "links": links_summary,
    }
    outputs.append(_write_json(summary, stage_dir / "summary.json"))
    return StageResult("tomography", stage_dir.name, _relative(outputs, run_dir), summary)


def run_keyplane(scenario: Scenario, run_dir: Path, fmt: str = "csv") -> StageResult:
    """Key production, rotation scheduling around traffic windows, and the
    pool balance over the horizon."""
    cfg = scenario.keyplane
    stage_dir = _stage_dir(run_dir, "keyplane")
    production = simulate_key_production(
        cfg.stats, cfg.horizon_s, substream(scenario.seed, "keyplane", "production")
    )
    schedule = schedule_rotations(cfg.horizon_s, cfg.rotation_interval_s, cfg.windows)
    timeline = pool_timeline(production.key_times_s, schedule.times_s, cfg.preload_keys)

    unreliable = [w for w in cfg.windows if w.protocol is Protocol.UNRELIABLE]
    violations = sum(
        1 for t in schedule.times_s if any(w.contains_strictly(float(t)) for w in unreliable)
    )
    if violations:
        raise RuntimeError(
            f"{violations} rotation(s) landed inside unreliable windows; "
            "the deferral logic is broken"
        )

    keys = generate_keys(len(schedule.times_s), substream(scenario.seed, "keyplane", "keys"))
    outputs: list[Path] = []
    if fmt == "json":
        outputs.append(
            _write_columns(
                {"time_s": timeline.times_s, "available_keys": timeline.available},
                stage_dir / "pool", fmt,
            )
        )
        outputs.append(
            _write_columns(
                {"time_s": schedule.times_s, "key_id": np.arange(len(schedule.times_s))},
                stage_dir / "rotations", fmt,
            )
        )
    else:
        outputs.append(write_pool_csv(timeline, stage_dir / "pool.csv"))
        outputs.append(write_rotation_csv(schedule, stage_dir / "rotations.csv"))
    outputs.append(
        _write_columns(
            {"time_s": production.sample_times_s, "qber": production.qber_series},
            stage_dir / "qber", fmt,
        )
    )
    outputs.append(write_key_file(keys, stage_dir / "rotation_keys.txt"))
    outputs.append(
        plotting.plot_key_pool(
            timeline.times_s, timeline.available,
            production.sample_times_s, production.qber_series,
            stage_dir / "pool_qber.png",
            rotation_times_s=schedule.times_s,
        )
    )
    net_keys_per_s = cfg.stats.skr_mean_bits_per_s / KEY_BITS - 1.0 / cfg.rotation_interval_s
    slope = timeline.slope_keys_per_s
    summary = {
        "horizon_s": cfg.horizon_s,
        "keys_produced": production.key_count,
        "rotations": int(len(schedule.times_s)),
        "rotation_window_violations": violations,
        "pool_slope_keys_per_s": slope,
        "configured_net_keys_per_s": net_keys_per_s,
        "slope_relative_error": abs(slope - net_keys_per_s) / net_keys_per_s
        if net_keys_per_s else float("nan"),
        "qber_mean": float(production.qber_series.mean()),
        "qber_std": float(production.qber_series.std()),
        "leftover_bits": production.leftover_bits,
        "schedule_warnings": list(schedule.warnings),
    }
    outputs.append(_write_json(summary, stage_dir / "summary.json"))
    return StageResult("keyplane", stage_dir.name, _relative(outputs, run_dir), summary)


# ---------------------------------------------------------------------------
# orchestration

_STAGE_FUNCS: dict[str, Callable[[Scenario, Path, str], StageResult]] = {
    "sync-jitter": run_sync_jitter,
    "tdc-calibrate": run_tdc_calibrate,
    "coincidence": run_coincidence,
    "tomography": run_tomography,
    "keyplane": run_keyplane,
}


def run_stages(
    scenario: Scenario,
    out_dir: str | Path,
    stages: Sequence[str] = FULL_STAGES,
    fmt: str = "csv",
) -> dict:
    """Run the named stages in order into one artifact directory.

    Writes a config echo first, then each stage's subdirectory, then the
    manifest.  The first failing stage aborts the run with its name attached.
    """
    if fmt not in ("csv", "json"):
        raise ValueError(f"format must be 'csv' or 'json', got {fmt!r}")
    for name in stages:
        if name not in _STAGE_FUNCS:
            raise ValueError(f"unknown stage {name!r}; choose from {STAGES}")
    validate_scenario(scenario)
    run_dir = Path(out_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    _write_json(scenario_to_mapping(scenario), run_dir / "config.json")

    stage_records = []
    for name in stages:
        try:
            result = _STAGE_FUNCS[name](scenario, run_dir, fmt)
        except (ValueError, RuntimeError, OSError) as err:
            raise StageError(name, str(err)) from err
        stage_records.append(
            {
                "name": result.name,
                "directory": result.directory,
                "status": "complete",
                "outputs": sorted(result.outputs),
            }
        )
    manifest = {
        "seed": scenario.seed,
        "format": fmt,
        "package_version": __version__,
        "config": "config.json",
        "stages": stage_records,
    }
    _write_json(manifest, run_dir / "manifest.json")
    return manifest


def run_full(scenario: Scenario, out_dir: str | Path, fmt: str = "csv") -> dict:
    """The whole pipeline: sync-jitter, coincidence, tomography, keyplane."""
    return run_stages(scenario, out_dir, FULL_STAGES, fmt)
