import json
import math

import pytest

from qlansim import scenario as sc
from qlansim.keyplane import Protocol
from qlansim.timebase import (
    GPS_PAIR_JITTER_PS,
    WHITE_RABBIT_PAIR_JITTER_PS,
    ClockKind,
)


class TestDefaults:
    def test_default_scenario_shape(self):
        d = sc.default_scenario()
        assert d.seed == 7
        assert [l.name for l in d.links] == ["alice-bob", "bob-charlie", "alice-charlie"]
        assert d.link_settings("alice-bob").pair_rate_hz == 50.0
        assert d.link_settings("bob-charlie").pair_rate_hz == pytest.approx(19.6 / 0.91)
        assert d.link_settings("alice-charlie").pair_rate_hz == pytest.approx(145.0 / 0.970)
        assert len(d.keyplane.windows) == 36

    def test_werner_p_from_fidelity(self):
        d = sc.default_scenario()
        for link in d.links:
            assert link.werner_p == pytest.approx((4 * link.fidelity - 1) / 3)

    def test_arm_delays_follow_topology(self):
        d = sc.default_scenario()
        link = d.link_settings("alice-charlie")
        # charlie's fiber is 120x alice's, so is the delay
        assert link.arm_b.path_delay_ns == pytest.approx(120 * link.arm_a.path_delay_ns)

    def test_clock_lookup(self):
        d = sc.default_scenario()
        assert d.clock_name("alice") == "white_rabbit"
        assert d.clock_name("never-configured") == "white_rabbit"

    def test_missing_link_lookup(self):
        with pytest.raises(KeyError):
            sc.default_scenario().link_settings("alice-dave")


class TestClockModels:
    def test_pair_sigma_split(self):
        gps = sc.clock_model("gps")
        assert gps.kind is ClockKind.GPS
        assert gps.jitter_sigma_ps == pytest.approx(GPS_PAIR_JITTER_PS / math.sqrt(2))
        wr = sc.clock_model("white_rabbit")
        assert wr.jitter_sigma_ps == pytest.approx(WHITE_RABBIT_PAIR_JITTER_PS / math.sqrt(2))

    def test_ideal(self):
        ideal = sc.clock_model("ideal")
        assert ideal.kind is ClockKind.IDEAL
        assert ideal.jitter_sigma_ps == 0.0

    def test_unknown(self):
        with pytest.raises(ValueError, match="cesium"):
            sc.clock_model("cesium")


class TestLinkSettings:
    def test_canonical_endpoint_order(self):
        link = sc.LinkSettings("bob", "alice", fidelity=0.9, pair_rate_hz=5.0,
                               singles_a_hz=1.0, singles_b_hz=2.0)
        assert (link.node_a, link.node_b) == ("alice", "bob")
        # arms and singles ride along with their endpoints
        assert (link.singles_a_hz, link.singles_b_hz) == (2.0, 1.0)
        assert link.name == "alice-bob"

    def test_fidelity_range(self):
        for bad in (0.2, 1.01):
            with pytest.raises(ValueError, match="fidelity"):
                sc.LinkSettings("a", "b", fidelity=bad, pair_rate_hz=1.0)

    def test_degenerate_link(self):
        with pytest.raises(ValueError, match="differ"):
            sc.LinkSettings("a", "a", fidelity=0.9, pair_rate_hz=1.0)


class TestMeasurementWindows:
    def test_pattern(self):
        windows = sc.measurement_windows(7200.0, cycle_s=2400.0, busy_s=2220.0)
        assert len(windows) == 3
        assert windows[0].start_s == 0.0
        assert windows[0].end_s == 2220.0
        assert windows[2].start_s == 4800.0

    def test_truncated_final_window(self):
        windows = sc.measurement_windows(2500.0, cycle_s=2400.0, busy_s=2220.0)
        assert windows[-1].end_s == 2500.0

    def test_bad_pattern(self):
        with pytest.raises(ValueError):
            sc.measurement_windows(100.0, cycle_s=10.0, busy_s=20.0)
        with pytest.raises(ValueError):
            sc.measurement_windows(100.0, cycle_s=-1.0)


class TestRoundTrip:
    def test_mapping_round_trip(self):
        d = sc.default_scenario()
        again = sc.scenario_from_mapping(sc.scenario_to_mapping(d))
        assert again == d

    def test_json_round_trip(self):
        d = sc.default_scenario()
        text = json.dumps(sc.scenario_to_mapping(d))
        assert sc.scenario_from_mapping(json.loads(text)) == d

    def test_yaml_file_round_trip(self, tmp_path):
        d = sc.default_scenario(seed=23)
        path = sc.dump_scenario(d, tmp_path / "run.yaml")
        assert sc.load_scenario(path) == d

    def test_json_file_round_trip(self, tmp_path):
        d = sc.default_scenario(seed=23)
        path = sc.dump_scenario(d, tmp_path / "run.json")
        assert sc.load_scenario(path) == d

    def test_load_with_seed_override(self, tmp_path):
        path = sc.dump_scenario(sc.default_scenario(), tmp_path / "run.yaml")
        assert sc.load_scenario(path, seed=99).seed == 99

    def test_unparseable_file(self, tmp_path):
        path = tmp_path / "broken.json"
        path.write_text("{nope")
        with pytest.raises(sc.ConfigError, match="cannot parse"):
            sc.load_scenario(path)


class TestPartialConfigs:
    def test_only_seed(self):
        loaded = sc.scenario_from_mapping({"seed": 11})
        assert loaded.seed == 11
        assert loaded.topology == sc.default_scenario().topology

    def test_section_override_keeps_other_defaults(self):
        loaded = sc.scenario_from_mapping({"seed": 1, "sync": {"duration_s": 5.0}})
        assert loaded.sync.duration_s == 5.0
        assert loaded.sync.models == ("gps", "white_rabbit")
        assert loaded.tdc == sc.default_scenario().tdc

    def test_chain_fields_flow_into_config(self):
        loaded = sc.scenario_from_mapping(
            {"seed": 1, "tomography": {"draws": 5000, "burn_in": 500, "thin": 5}}
        )
        chain = loaded.tomography.chain
        assert (chain.draws, chain.burn_in, chain.thin) == (5000, 500, 5)
        assert chain.chains == 2

    def test_explicit_window_list(self):
        loaded = sc.scenario_from_mapping(
            {
                "seed": 1,
                "keyplane": {
                    "horizon_s": 100.0,
                    "windows": [
                        {"start_s": 1.0, "end_s": 5.0},
                        {"start_s": 10.0, "end_s": 12.0, "protocol": "reliable"},
                    ],
                },
            }
        )
        windows = loaded.keyplane.windows
        assert len(windows) == 2
        assert windows[0].protocol is Protocol.UNRELIABLE
        assert windows[1].protocol is Protocol.RELIABLE

    def test_window_pattern_uses_horizon(self):
        loaded = sc.scenario_from_mapping(
            {
                "seed": 1,
                "keyplane": {"horizon_s": 4800.0, "windows": {"cycle_s": 2400.0, "busy_s": 600.0}},
            }
        )
        assert len(loaded.keyplane.windows) == 2


class TestValidationErrors:
    def error(self, mapping) -> str:
        with pytest.raises(sc.ConfigError) as err:
            sc.scenario_from_mapping(mapping)
        return str(err.value)

    def test_seed_is_mandatory(self):
        assert self.error({}).startswith("seed:")

    def test_unknown_top_level_field(self):
        assert self.error({"seed": 1, "tpyo": {}}).startswith("tpyo:")

    def test_unknown_nested_field(self):
        message = self.error({"seed": 1, "sync": {"duraton_s": 2.0}})
        assert message.startswith("sync.duraton_s:")

    def test_deep_path_in_message(self):
        message = self.error(
            {"seed": 1, "links": [
                {"a": "alice", "b": "bob", "fidelity": 0.9, "pair_rate_hz": 5.0,
                 "arm_a": {"transmission": 1.5}}]}
        )
        assert message.startswith("links[0].arm_a:")
        assert "transmission" in message

    def test_wrong_type(self):
        message = self.error({"seed": 1, "tdc": {"n_taps": "many"}})
        assert message.startswith("tdc.n_taps:")

    def test_unknown_node_in_clocks(self):
        message = self.error({"seed": 1, "clocks": {"dave": "gps"}})
        assert message.startswith("clocks.dave:")

    def test_link_without_allocation(self):
        message = self.error(
            {
                "seed": 1,
                "allocation": {"alice-bob": [3], "bob-charlie": [1, 2]},
                "coincidence": {"link": "alice-bob"},
            }
        )
        # default scenario still declares alice-charlie, now unallocated
        assert "has no channel allocation" in message

    def test_overlapping_allocation_rejected(self):
        with pytest.raises(ValueError, match="channel 3"):
            sc.scenario_from_mapping(
                {"seed": 1, "allocation": {"alice-bob": [3], "bob-charlie": [3, 2], "alice-charlie": [8]}}
            )

    def test_coincidence_link_must_exist(self):
        message = self.error({"seed": 1, "coincidence": {"link": "alice-dave"}})
        assert message.startswith("coincidence.link:")

    def test_negative_seed(self):
        message = self.error({"seed": -4})
        assert "seed" in message


class TestScenarioInvariants:
    def test_duplicate_links_rejected(self):
        d = sc.default_scenario()
        doubled = sc.Scenario(
            seed=1, topology=d.topology, allocation=d.allocation, clocks=d.clocks,
            links=d.links + (d.links[0],),
        )
        with pytest.raises(sc.ConfigError, match="duplicate"):
            sc.validate_scenario(doubled)

    def test_clocks_sorted_canonically(self):
        d = sc.default_scenario()
        a = sc.Scenario(
            seed=1, topology=d.topology, allocation=d.allocation,
            clocks=(("bob", "gps"), ("alice", "ideal")),
            links=d.links,
        )
        assert a.clocks == (("alice", "ideal"), ("bob", "gps"))
