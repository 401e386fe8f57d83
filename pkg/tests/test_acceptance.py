"""Acceptance gate: end-to-end checks that pin the simulator to its design
targets.

Every test prints exactly one ``[PASS]``/``[FAIL]`` summary line (written
past pytest's capture, so it shows up in a plain ``pytest`` run) and then
asserts the same conditions with pinned tolerances.
"""

import math
import time

import numpy as np
import pytest
from scipy import stats as scipy_stats

from qlansim import coincidence, photonics, tdc, timebase, tomography
from qlansim.keyplane import (
    KEY_BITS,
    Protocol,
    default_link_stats,
    pool_timeline,
    schedule_rotations,
    simulate_key_production,
)
from qlansim.network import (
    AllocationConflictError,
    ChannelAllocation,
    default_allocation,
    validate_allocation,
)
from qlansim.rng import substream
from qlansim.runner import run_full
from qlansim.scenario import clock_model, measurement_windows, scenario_from_mapping

SEED = 404


@pytest.fixture
def report(capsys):
    def emit(ok: bool, name: str, detail: str) -> None:
        with capsys.disabled():
            print(f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}")

    return emit


def test_clock_pair_jitter(report):
    """Thirty minutes of 1 ps-binned pair delays reproduce both clock
    jitters within 5%, in under 30 s of wall time."""
    start = time.perf_counter()
    targets = {
        "gps": timebase.GPS_PAIR_JITTER_PS,
        "white_rabbit": timebase.WHITE_RABBIT_PAIR_JITTER_PS,
    }
    measured = {}
    for name in targets:
        model = clock_model(name)
        hist = timebase.relative_delay_histogram(
            model, model, 1800.0, substream(SEED, "accept-sync", name),
            bin_width_ps=1.0,
        )
        measured[name] = timebase.estimate_std(hist)
    elapsed = time.perf_counter() - start

    ok = elapsed < 30.0 and all(
        abs(measured[name] - target) <= 0.05 * target
        for name, target in targets.items()
    )
    report(
        ok, "clock-pair jitter",
        f"gps {measured['gps']:.1f} ps (target 1210 +-5%), "
        f"white_rabbit {measured['white_rabbit']:.2f} ps (target 12.9 +-5%), "
        f"{elapsed:.1f} s",
    )
    for name, target in targets.items():
        assert abs(measured[name] - target) <= 0.05 * target, (
            f"{name} pair jitter {measured[name]:.2f} ps is not within 5% of {target} ps"
        )
    assert elapsed < 30.0, f"took {elapsed:.1f} s, budget is 30 s"


def test_tdc_roundtrip_and_code_density(report):
    """Quantize/reconstruct error stays under one tap, and code-density
    calibration on a million uniform hits recovers a planted nonuniform
    tap profile."""
    start = time.perf_counter()
    n_taps = tdc.DEFAULT_N_TAPS
    raw = 1.0 + 0.3 * substream(SEED, "accept-tdc", "truth").uniform(-1.0, 1.0, n_taps)
    widths = raw * (tdc.COARSE_PERIOD_PS / raw.sum())
    cal = tdc.TdcCalibration(tap_widths_ps=widths)

    times = substream(SEED, "accept-tdc", "times").uniform(0.0, 0.01, 100_000)
    decoded = tdc.reconstruct_times(tdc.quantize_times(times, cal), cal)
    max_err_ps = float(np.abs(decoded - times).max()) * 1e12
    max_tap_ps = float(widths.max())

    residues = substream(SEED, "accept-tdc", "events").uniform(
        0.0, tdc.COARSE_PERIOD_PS, 1_000_000
    )
    fine = tdc.fine_indices(cal, residues)
    recovered = tdc.calibrate_code_density(fine, n_taps)
    counts = np.bincount(fine, minlength=n_taps)
    expected = residues.size * widths / tdc.COARSE_PERIOD_PS
    p_value = float(scipy_stats.chisquare(counts, expected).pvalue)
    mean_tap_ps = float(recovered.tap_widths_ps.mean())
    elapsed = time.perf_counter() - start

    ok = (
        max_err_ps <= max_tap_ps
        and p_value > 0.01
        and abs(mean_tap_ps - 17.5) <= 0.1
        and elapsed < 60.0
    )
    report(
        ok, "tdc calibration",
        f"roundtrip max {max_err_ps:.2f} ps (<= {max_tap_ps:.2f} ps tap), "
        f"chi-square p {p_value:.3f}, mean tap {mean_tap_ps:.4f} ps over "
        f"{n_taps} taps, {elapsed:.1f} s",
    )
    assert max_err_ps <= max_tap_ps, "roundtrip error exceeds the widest tap"
    assert p_value > 0.01, f"recovered profile rejected at p={p_value:.4f}"
    assert abs(mean_tap_ps - 17.5) <= 0.1
    assert elapsed < 60.0, f"took {elapsed:.1f} s, budget is 60 s"


def test_accidental_window_scaling(report):
    """Shrinking the coincidence window 10 ns -> 1 ns cuts accidentals
    tenfold, and both counts match S_a*S_b*tau*T."""
    start = time.perf_counter()
    # 100 kHz singles put ~3000 accidentals in the 10 ns window
    rate_hz, duration_s = 100_000.0, 30.0
    rng = substream(SEED, "accept-accidentals")
    a = np.sort(rng.uniform(0.0, duration_s, rng.poisson(rate_hz * duration_s)))
    b = np.sort(rng.uniform(0.0, duration_s, rng.poisson(rate_hz * duration_s)))

    wide = coincidence.count_coincidences(a, b, 10.0, 0.0, duration_s)
    narrow = coincidence.count_coincidences(a, b, 1.0, 0.0, duration_s)

    # ratio check: wide vs 10x narrow, against the pooled Poisson spread
    ratio_gap = abs(wide.coincidences - 10 * narrow.coincidences)
    ratio_sigma = math.sqrt(wide.coincidences + 100 * narrow.coincidences)
    # absolute check against the singles-rate prediction for each window
    z_scores = {}
    for label, result in (("10ns", wide), ("1ns", narrow)):
        predicted = result.accidental_estimate
        z_scores[label] = abs(result.coincidences - predicted) / math.sqrt(predicted)
    elapsed = time.perf_counter() - start

    ok = (
        ratio_gap <= 3.0 * ratio_sigma
        and all(z <= 3.0 for z in z_scores.values())
        and elapsed < 60.0
    )
    report(
        ok, "accidental scaling",
        f"{wide.coincidences} -> {narrow.coincidences} counts "
        f"(10x gap {ratio_gap:.0f} <= {3 * ratio_sigma:.0f}), "
        f"absolute z {z_scores['10ns']:.2f} / {z_scores['1ns']:.2f}, "
        f"{elapsed:.1f} s",
    )
    assert ratio_gap <= 3.0 * ratio_sigma, "window scaling is not 10x within 3 sigma"
    for label, z in z_scores.items():
        assert z <= 3.0, f"{label} accidentals off the S_a*S_b*tau*T prediction: z={z:.2f}"
    assert elapsed < 60.0, f"took {elapsed:.1f} s, budget is 60 s"


def test_werner_closed_forms(report):
    """Eigensolver fidelity and log-negativity of Werner states match the
    closed forms (1+3p)/4 and log2(1+(3p-1)/2) to 1e-9."""
    worst_f = worst_e = 0.0
    target = photonics.bell_psi_plus()
    for p in (0.0, 0.2, 1.0 / 3.0, 0.5, 0.9173, 1.0):
        rho = photonics.werner_state(p)
        closed_f = (1.0 + 3.0 * p) / 4.0
        closed_e = math.log2(1.0 + (3.0 * p - 1.0) / 2.0) if p > 1.0 / 3.0 else 0.0
        worst_f = max(worst_f, abs(tomography.fidelity(rho, target) - closed_f))
        worst_e = max(worst_e, abs(tomography.log_negativity(rho) - closed_e))

    ok = worst_f <= 1e-9 and worst_e <= 1e-9
    report(
        ok, "werner closed forms",
        f"max fidelity gap {worst_f:.2e}, max log-negativity gap {worst_e:.2e}",
    )
    assert worst_f <= 1e-9
    assert worst_e <= 1e-9


# Reference link table: fidelity, log-negativity, entangled bits per second.
LINK_TABLE = (
    ("A-B", 0.938, 0.94, 47.0),
    ("B-C", 0.91, 0.91, 19.6),
    ("C-A", 0.971, 0.970, 145.0),
)


def test_three_link_reconstruction(report):
    """Werner states at the tabulated fidelities, pushed through 30 s per
    setting of simulated counts and the posterior sampler, land back on the
    table: fidelity and log-negativity within two posterior stds, the
    entangled-bit rate within 10%.  A model-consistency check, not a
    physics replication."""
    start = time.perf_counter()
    config = tomography.ChainConfig(draws=120_000, burn_in=12_000, thin=60)
    settings = tomography.default_settings()
    fragments = []
    failures = []
    for name, f_ref, en_ref, rate_ref in LINK_TABLE:
        rho = photonics.werner_state((4.0 * f_ref - 1.0) / 3.0)
        rates = tomography.RateModel(pair_rate_hz=rate_ref / en_ref)
        data = tomography.simulate_dataset(
            rho, settings, rates, 30.0, substream(SEED, "tomo-row", name)
        )
        summary = tomography.reconstruct(
            data, substream(SEED, "tomo-fit", name), config=config
        )
        z_f = abs(summary.fidelity.mean - f_ref) / summary.fidelity.std
        z_en = abs(summary.log_negativity.mean - en_ref) / summary.log_negativity.std
        rate_model = summary.log_negativity.mean * data.measured_pair_rate_hz()
        rate_err = abs(rate_model - rate_ref) / rate_ref
        fragments.append(f"{name} zF {z_f:.1f} zE {z_en:.1f} dR {100 * rate_err:.1f}%")
        if z_f > 2.0:
            failures.append(f"{name}: fidelity {summary.fidelity.mean:.4f} is {z_f:.1f} stds from {f_ref}")
        if z_en > 2.0:
            failures.append(f"{name}: log-negativity {summary.log_negativity.mean:.4f} is {z_en:.1f} stds from {en_ref}")
        if rate_err > 0.10:
            failures.append(f"{name}: rate {rate_model:.1f} vs {rate_ref} ebits/s ({100 * rate_err:.0f}% off)")
    elapsed = time.perf_counter() - start

    ok = not failures and elapsed < 600.0
    report(ok, "three-link tomography", ", ".join(fragments) + f", {elapsed:.0f} s")
    assert not failures, "; ".join(failures)
    assert elapsed < 600.0, f"took {elapsed:.0f} s, budget is 600 s"


def test_key_rotation_day(report):
    """A 24 h key-plane run: pool slope within 0.5% of the configured net
    production, QBER mean within 3 sigma, no rotation inside an unreliable
    window."""
    start = time.perf_counter()
    stats = default_link_stats()
    horizon_s, interval_s = 86400.0, 2400.0
    windows = measurement_windows(horizon_s)
    run = simulate_key_production(stats, horizon_s, substream(SEED, "accept-keyplane"))
    schedule = schedule_rotations(horizon_s, interval_s, windows)
    timeline = pool_timeline(run.key_times_s, schedule.times_s)

    net_keys_per_s = stats.skr_mean_bits_per_s / KEY_BITS - 1.0 / interval_s
    slope_err = abs(timeline.slope_keys_per_s - net_keys_per_s) / net_keys_per_s
    qber_mean = float(run.qber_series.mean())
    qber_z = abs(qber_mean - stats.qber_mean) / (
        stats.qber_std / math.sqrt(run.qber_series.size)
    )
    unreliable = [w for w in windows if w.protocol is Protocol.UNRELIABLE]
    violations = sum(
        1 for t in schedule.times_s for w in unreliable if w.contains_strictly(t)
    )
    elapsed = time.perf_counter() - start

    ok = slope_err <= 0.005 and qber_z <= 3.0 and violations == 0 and elapsed < 60.0
    report(
        ok, "key rotation day",
        f"slope {timeline.slope_keys_per_s:.4f} vs {net_keys_per_s:.4f} keys/s "
        f"({100 * slope_err:.3f}% err), qber {100 * qber_mean:.3f}% (z {qber_z:.2f}), "
        f"{len(schedule.times_s)} rotations / {violations} in-window, {elapsed:.1f} s",
    )
    assert slope_err <= 0.005, f"pool slope off by {100 * slope_err:.2f}%"
    assert qber_z <= 3.0, f"QBER mean {qber_mean:.5f} is {qber_z:.1f} sigma from {stats.qber_mean}"
    assert violations == 0, f"{violations} rotations fell inside unreliable windows"
    assert elapsed < 60.0, f"took {elapsed:.1f} s, budget is 60 s"


# Small enough to run the full pipeline twice in well under a minute.
REDUCED_RUN = {
    "seed": 5,
    "sync": {"duration_s": 240.0},
    "coincidence": {"duration_s": 5.0},
    "tomography": {"integration_time_s": 5.0, "draws": 8000, "burn_in": 2500, "thin": 16},
    "keyplane": {
        "horizon_s": 7200.0,
        "windows": {"cycle_s": 2400.0, "busy_s": 2220.0},
    },
}


def test_full_run_determinism(report, tmp_path):
    """Two full pipeline runs from the same seed write byte-identical
    numeric outputs."""
    scenario = scenario_from_mapping(REDUCED_RUN)

    def numeric_files(root):
        return {
            str(path.relative_to(root)): path.read_bytes()
            for path in sorted(root.rglob("*"))
            if path.is_file() and path.suffix in (".csv", ".json")
        }

    run_full(scenario, tmp_path / "one")
    run_full(scenario, tmp_path / "two")
    first = numeric_files(tmp_path / "one")
    second = numeric_files(tmp_path / "two")
    same_names = set(first) == set(second)
    mismatched = [name for name in first if same_names and first[name] != second[name]]

    ok = bool(first) and same_names and not mismatched
    report(
        ok, "full-run determinism",
        f"{len(first)} numeric files, "
        + ("all byte-identical" if ok else f"{len(mismatched)} differ"),
    )
    assert first, "full run produced no numeric outputs"
    assert same_names, "runs produced different file sets"
    assert not mismatched, f"outputs differ between identical runs: {mismatched}"


def test_channel_plan_validation(report):
    """The deployed channel plan validates; an overlapping plan is rejected
    with the conflicting channel named."""
    plan = validate_allocation(default_allocation())
    plan_ok = plan.as_mapping() == {
        "alice-bob": {3},
        "bob-charlie": {1, 2},
        "alice-charlie": {8},
    }

    overlap = ChannelAllocation.from_mapping(
        {"alice-bob": {3}, "bob-charlie": {2, 3}}
    )
    try:
        validate_allocation(overlap)
        message = "no error raised"
        conflict_ok = False
    except AllocationConflictError as err:
        message = str(err)
        conflict_ok = (
            "channel 3" in message
            and "alice-bob" in message
            and "bob-charlie" in message
        )

    ok = plan_ok and conflict_ok
    report(
        ok, "channel plan",
        "deployed plan accepted, overlap rejected: " + message,
    )
    assert plan_ok, "deployed channel plan failed validation"
    assert conflict_ok, f"conflict message missing channel or links: {message!r}"
