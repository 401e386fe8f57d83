"""Key production, chunking, rotation scheduling, and pool accounting tests."""

import numpy as np
import pytest

from qlansim import keyplane as kp
from qlansim import rng as qrng


class TestChunking:
    def test_examples(self):
        assert kp.chunk_keys(0) == (0, 0)
        assert kp.chunk_keys(1620) == (6, 84)
        assert kp.chunk_keys(512) == (2, 0)
        assert kp.chunk_keys(255) == (0, 255)

    def test_conservation_is_exact(self):
        r = qrng.substream(60, "chunk")
        for _ in range(200):
            bits = int(r.integers(0, 10_000_000))
            keys, remainder = kp.chunk_keys(bits)
            assert 256 * keys + remainder == bits
            assert 0 <= remainder < 256

    def test_negative_rejected(self):
        with pytest.raises(ValueError):
            kp.chunk_keys(-1)


class TestLinkStats:
    def test_defaults_match_measured_link(self):
        stats = kp.default_link_stats()
        assert stats.skr_mean_bits_per_s == 1620.0
        assert stats.skr_std_bits_per_s == 150.0
        assert stats.qber_mean == pytest.approx(0.0168)
        assert stats.qber_std == pytest.approx(0.0009)

    def test_validation(self):
        with pytest.raises(ValueError):
            kp.QkdLinkStats(0.0, 1.0, 0.01, 0.001)
        with pytest.raises(ValueError):
            kp.QkdLinkStats(100.0, -1.0, 0.01, 0.001)
        with pytest.raises(ValueError):
            kp.QkdLinkStats(100.0, 1.0, 0.6, 0.001)


class TestTrafficWindow:
    def test_strict_containment_excludes_boundaries(self):
        window = kp.TrafficWindow(10.0, 20.0)
        assert not window.contains_strictly(10.0)
        assert not window.contains_strictly(20.0)
        assert window.contains_strictly(15.0)

    def test_degenerate_window_rejected(self):
        with pytest.raises(ValueError):
            kp.TrafficWindow(5.0, 5.0)


class TestProduction:
    def test_deterministic_rate_produces_exact_keys(self):
        stats = kp.QkdLinkStats(256.0, 0.0, 0.01, 0.0)
        run = kp.simulate_key_production(stats, 10.0, qrng.substream(61, "exact"))
        assert run.key_count == 10
        np.testing.assert_allclose(run.key_times_s, np.arange(1, 11, dtype=float))
        assert run.leftover_bits == pytest.approx(0.0, abs=1e-9)

    def test_matches_stepwise_oracle(self):
        stats = kp.default_link_stats()
        run = kp.simulate_key_production(stats, 25.0, qrng.substream(62, "oracle"))
        # replay the same draws and do the carry arithmetic the slow way
        r = qrng.substream(62, "oracle")
        skr = np.maximum(r.normal(1620.0, 150.0, 25), 0.0)
        carry = 0.0
        times = []
        for second, bits in enumerate(skr, start=1):
            carry += bits
            while carry >= 256.0 - 1e-9:
                carry -= 256.0
                times.append(float(second))
        assert run.key_count == len(times)
        np.testing.assert_allclose(run.key_times_s, times)
        assert run.leftover_bits == pytest.approx(carry, abs=1e-6)

    def test_day_long_run_statistics(self):
        stats = kp.default_link_stats()
        run = kp.simulate_key_production(stats, 86400.0, qrng.substream(63, "day"))
        assert run.mean_key_rate_hz() == pytest.approx(1620.0 / 256.0, rel=0.005)
        # qber sample mean should sit within 3 sigma of the configured mean
        tolerance = 3 * stats.qber_std / np.sqrt(run.qber_series.size)
        assert abs(run.qber_series.mean() - stats.qber_mean) <= tolerance

    def test_bit_conservation(self):
        stats = kp.QkdLinkStats(900.0, 300.0, 0.02, 0.001)
        run = kp.simulate_key_production(stats, 500.0, qrng.substream(64, "conserve"))
        total_bits = float(run.skr_series_bits_per_s.sum())
        assert 256 * run.key_count + run.leftover_bits == pytest.approx(total_bits, rel=1e-12)

    def test_key_times_sorted_within_horizon(self):
        run = kp.simulate_key_production(
            kp.default_link_stats(), 100.0, qrng.substream(65, "sorted")
        )
        assert np.all(np.diff(run.key_times_s) >= 0)
        assert run.key_times_s[0] > 0
        assert run.key_times_s[-1] <= 100.0

    def test_bad_duration(self):
        with pytest.raises(ValueError):
            kp.simulate_key_production(kp.default_link_stats(), 0.0, qrng.substream(66))


class TestRotationSchedule:
    def test_no_windows_means_exact_grid(self):
        schedule = kp.schedule_rotations(10000.0, 2400.0)
        np.testing.assert_allclose(schedule.times_s, [2400.0, 4800.0, 7200.0, 9600.0])
        assert schedule.warnings == ()

    def test_deferral_to_window_end(self):
        windows = (kp.TrafficWindow(90.0, 120.0),)
        schedule = kp.schedule_rotations(200.0, 100.0, windows)
        np.testing.assert_allclose(schedule.times_s, [120.0, 200.0])

    def test_reliable_windows_do_not_defer(self):
        windows = (kp.TrafficWindow(90.0, 120.0, kp.Protocol.RELIABLE),)
        schedule = kp.schedule_rotations(200.0, 100.0, windows)
        np.testing.assert_allclose(schedule.times_s, [100.0, 200.0])

    def test_measurement_cycle_leaves_gaps_free(self):
        # 37 min measurements heading every 40 min cycle: rotations land on
        # the cycle boundaries untouched
        interval = 2400.0
        horizon = 86400.0
        windows = tuple(
            kp.TrafficWindow(k * interval, k * interval + 2220.0)
            for k in range(int(horizon / interval))
        )
        schedule = kp.schedule_rotations(horizon, interval, windows)
        expected = interval * np.arange(1, int(horizon / interval) + 1)
        np.testing.assert_allclose(schedule.times_s, expected)
        assert schedule.warnings == ()
        for time in schedule.times_s:
            assert not any(w.contains_strictly(time) for w in windows)

    def test_starvation_warning_and_collapse(self):
        windows = (kp.TrafficWindow(0.5, 100.0),)
        schedule = kp.schedule_rotations(150.0, 10.0, windows)
        assert any("shorter than the longest" in w for w in schedule.warnings)
        # everything in the window collapses onto its end, once
        np.testing.assert_allclose(schedule.times_s, [100.0, 110.0, 120.0, 130.0, 140.0, 150.0])
        assert np.all(np.diff(schedule.times_s) > 0)

    def test_rotations_never_inside_unreliable_windows(self):
        r = qrng.substream(67, "windows")
        for _ in range(30):
            n_windows = int(r.integers(1, 6))
            starts = np.sort(r.uniform(0, 900, n_windows))
            windows = []
            for i, start in enumerate(starts):
                limit = starts[i + 1] if i + 1 < n_windows else 1000.0
                end = start + r.uniform(0.1, max(limit - start, 0.2))
                windows.append(kp.TrafficWindow(start, min(end, limit)))
            interval = float(r.uniform(5, 300))
            schedule = kp.schedule_rotations(1000.0, interval, tuple(windows))
            for time in schedule.times_s:
                assert not any(w.contains_strictly(time) for w in windows)
            assert np.all(np.diff(schedule.times_s) > 0)

    def test_spacing_bound(self):
        windows = (kp.TrafficWindow(950.0, 1400.0),)
        schedule = kp.schedule_rotations(4000.0, 1000.0, windows)
        longest = 450.0
        gaps = np.diff(schedule.times_s)
        assert np.all(gaps >= 1000.0 - longest - 1e-9)

    def test_overlap_rejected(self):
        windows = (kp.TrafficWindow(0.0, 50.0), kp.TrafficWindow(40.0, 80.0))
        with pytest.raises(ValueError, match="overlap"):
            kp.schedule_rotations(100.0, 10.0, windows)

    def test_bad_arguments(self):
        with pytest.raises(ValueError):
            kp.schedule_rotations(0.0, 10.0)
        with pytest.raises(ValueError):
            kp.schedule_rotations(100.0, -1.0)


class TestPool:
    def test_uniform_production_slope(self):
        rate = 6.2781
        horizon = 86400.0
        production = np.arange(1, int(rate * horizon) + 1) / rate
        rotations = 2400.0 * np.arange(1, int(horizon / 2400) + 1)
        timeline = kp.pool_timeline(production, rotations, preload=1)
        net = rate - 1.0 / 2400.0
        assert timeline.slope_keys_per_s == pytest.approx(net, rel=1e-3)

    def test_preloaded_single_rotation(self):
        timeline = kp.pool_timeline(np.array([]), np.array([60.0]), preload=1)
        np.testing.assert_allclose(timeline.times_s, [0.0, 60.0])
        np.testing.assert_allclose(timeline.available, [1.0, 0.0])
        assert timeline.slope_keys_per_s <= 0
        assert timeline.pool.available == 0

    def test_production_only_slope(self):
        production = np.arange(1, 5001) * 0.25
        timeline = kp.pool_timeline(production, np.array([]))
        assert timeline.slope_keys_per_s == pytest.approx(4.0, rel=1e-3)

    def test_exhaustion_names_first_violation(self):
        production = np.array([10.0, 20.0])
        rotations = np.array([5.0])
        with pytest.raises(kp.PoolExhaustedError) as info:
            kp.pool_timeline(production, rotations)
        assert info.value.time_s == 5.0

    def test_same_instant_arrival_covers_withdrawal(self):
        # production sorts ahead of consumption at equal timestamps
        timeline = kp.pool_timeline(np.array([5.0]), np.array([5.0]))
        assert timeline.pool.available == 0
        np.testing.assert_allclose(timeline.available, [0.0, 1.0, 0.0])

    def test_series_never_negative(self):
        r = qrng.substream(68, "pool")
        for _ in range(20):
            production = np.sort(r.uniform(0, 100, 50))
            rotations = np.sort(r.choice(production, 20, replace=False)) + 0.5
            timeline = kp.pool_timeline(production, rotations, preload=2)
            assert timeline.available.min() >= 0

    def test_unsorted_logs_rejected(self):
        with pytest.raises(ValueError, match="not time-sorted"):
            kp.pool_timeline(np.array([2.0, 1.0]), np.array([]))


class TestKeyFiles:
    def test_generate_round_trip(self, tmp_path):
        keys = kp.generate_keys(5, qrng.substream(69, "keys"))
        assert all(len(k) == 64 for k in keys)
        assert len(set(keys)) == 5
        path = kp.write_key_file(keys, tmp_path / "ab.keys")
        assert kp.read_key_file(path) == keys

    def test_write_rejects_malformed(self, tmp_path):
        with pytest.raises(ValueError, match="hex key"):
            kp.write_key_file(["zz" * 32], tmp_path / "bad.keys")
        with pytest.raises(ValueError):
            kp.write_key_file(["abcd"], tmp_path / "short.keys")

    def test_read_reports_line_number(self, tmp_path):
        path = tmp_path / "corrupt.keys"
        path.write_text("ab" * 32 + "\nnot-a-key\n")
        with pytest.raises(ValueError, match="corrupt.keys:2"):
            kp.read_key_file(path)


class TestCsv:
    def test_pool_csv(self, tmp_path):
        timeline = kp.pool_timeline(np.array([1.0, 2.0]), np.array([3.0]), preload=0)
        path = kp.write_pool_csv(timeline, tmp_path / "pool.csv")
        lines = path.read_text().splitlines()
        assert lines[0] == "time_s,available_keys"
        assert lines[1] == "0.000000,0"
        assert lines[-1] == "3.000000,1"

    def test_rotation_csv(self, tmp_path):
        schedule = kp.schedule_rotations(300.0, 100.0)
        path = kp.write_rotation_csv(schedule, tmp_path / "rot.csv")
        lines = path.read_text().splitlines()
        assert lines[0] == "time_s,key_id"
        assert lines[1] == "100.000000,0"
        assert lines[3] == "300.000000,2"
