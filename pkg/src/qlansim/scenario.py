"""Scenario configuration: one structured file drives every simulation run.

A scenario bundles the network description (topology, channel allocation,
per-node clocks), per-link source parameters, and per-stage knobs, plus the
mandatory global seed.  Configs are YAML on disk (JSON accepted); parsing
reports problems with full field paths so a typo in a nested block names the
exact key that broke.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import yaml

from qlansim.keyplane import Protocol, QkdLinkStats, TrafficWindow, default_link_stats
from qlansim.network import (
    ChannelAllocation,
    FiberLink,
    Topology,
    default_allocation,
    default_topology,
    link_key,
    propagation_delay_ns,
    validate_allocation,
)
from qlansim.photonics import ArmConfig
from qlansim.tdc import DEFAULT_N_TAPS
from qlansim.timebase import (
    GPS_PAIR_JITTER_PS,
    WHITE_RABBIT_PAIR_JITTER_PS,
    ClockKind,
    ClockModel,
)
from qlansim.tomography import ChainConfig

__all__ = [
    "CLOCK_NAMES",
    "CoincidenceSettings",
    "CoincidenceVariant",
    "ConfigError",
    "KeyplaneSettings",
    "LinkSettings",
    "Scenario",
    "SyncSettings",
    "TdcSettings",
    "TomographySettings",
    "clock_model",
    "default_scenario",
    "dump_scenario",
    "load_scenario",
    "measurement_windows",
    "scenario_from_mapping",
    "scenario_to_mapping",
    "validate_scenario",
]

CLOCK_NAMES = ("gps", "white_rabbit", "ideal")

_BASIS_CHOICES = ("hvda", "hvdr")


class ConfigError(ValueError):
    """A scenario field failed validation; the message carries its path."""

    def __init__(self, path: str, problem: str):
        self.path = path
        super().__init__(f"{path}: {problem}")


def clock_model(name: str) -> ClockModel:
    """Clock model for a named synchronization technology.

    Jitter is stated per clock so that an identical pair reproduces the
    technology's measured relative-delay spread.
    """
    if name == "gps":
        return ClockModel.from_pair_sigma(ClockKind.GPS, GPS_PAIR_JITTER_PS)
    if name == "white_rabbit":
        return ClockModel.from_pair_sigma(ClockKind.WHITE_RABBIT, WHITE_RABBIT_PAIR_JITTER_PS)
    if name == "ideal":
        return ClockModel(ClockKind.IDEAL)
    raise ValueError(f"unknown clock model {name!r}; choose from {CLOCK_NAMES}")


# ---------------------------------------------------------------------------
# per-stage settings


@dataclass(frozen=True)
class SyncSettings:
    """Relative-delay characterization: each listed technology is histogrammed
    as an identical clock pair."""

    duration_s: float = 1800.0
    bin_width_ps: float = 1.0
    pulse_rate_hz: float = 10.0
    models: tuple[str, ...] = ("gps", "white_rabbit")

    def __post_init__(self) -> None:
        if self.duration_s <= 0:
            raise ValueError(f"duration_s must be > 0, got {self.duration_s}")
        if self.bin_width_ps <= 0:
            raise ValueError(f"bin_width_ps must be > 0, got {self.bin_width_ps}")
        if self.pulse_rate_hz <= 0:
            raise ValueError(f"pulse_rate_hz must be > 0, got {self.pulse_rate_hz}")
        if not self.models:
            raise ValueError("at least one clock model is required")
        for name in self.models:
            if name not in CLOCK_NAMES:
                raise ValueError(f"unknown clock model {name!r}; choose from {CLOCK_NAMES}")


@dataclass(frozen=True)
class TdcSettings:
    """Code-density calibration run: planted tap spread and event budget."""

    n_taps: int = DEFAULT_N_TAPS
    n_events: int = 1_000_000
    width_spread: float = 0.3

    def __post_init__(self) -> None:
        if self.n_taps < 2:
            raise ValueError(f"n_taps must be at least 2, got {self.n_taps}")
        if self.n_events < self.n_taps:
            raise ValueError(
                f"n_events ({self.n_events}) cannot cover {self.n_taps} taps"
            )
        if not 0.0 <= self.width_spread <= 0.9:
            raise ValueError(f"width_spread must be in [0, 0.9], got {self.width_spread}")


@dataclass(frozen=True)
class CoincidenceVariant:
    """One timing configuration to correlate under: sync technology plus
    histogram resolution."""

    clock: str
    bin_width_ps: float

    def __post_init__(self) -> None:
        if self.clock not in CLOCK_NAMES:
            raise ValueError(f"unknown clock model {self.clock!r}; choose from {CLOCK_NAMES}")
        if self.bin_width_ps <= 0:
            raise ValueError(f"bin_width_ps must be > 0, got {self.bin_width_ps}")


@dataclass(frozen=True)
class CoincidenceSettings:
    link: str = "alice-bob"
    duration_s: float = 30.0
    window_ns: float = 1.0
    delay_range_ns: float = 50.0
    variants: tuple[CoincidenceVariant, ...] = (
        CoincidenceVariant("gps", 5000.0),
        CoincidenceVariant("white_rabbit", 17.5),
    )

    def __post_init__(self) -> None:
        if self.duration_s <= 0:
            raise ValueError(f"duration_s must be > 0, got {self.duration_s}")
        if self.window_ns <= 0:
            raise ValueError(f"window_ns must be > 0, got {self.window_ns}")
        if self.delay_range_ns <= 0:
            raise ValueError(f"delay_range_ns must be > 0, got {self.delay_range_ns}")
        if not self.variants:
            raise ValueError("at least one variant is required")


@dataclass(frozen=True)
class TomographySettings:
    integration_time_s: float = 30.0
    basis: str = "hvda"
    chain: ChainConfig = field(default_factory=ChainConfig)

    def __post_init__(self) -> None:
        if self.integration_time_s <= 0:
            raise ValueError(f"integration_time_s must be > 0, got {self.integration_time_s}")
        if self.basis not in _BASIS_CHOICES:
            raise ValueError(f"basis must be one of {_BASIS_CHOICES}, got {self.basis!r}")


@dataclass(frozen=True)
class KeyplaneSettings:
    stats: QkdLinkStats = field(default_factory=default_link_stats)
    horizon_s: float = 86400.0
    rotation_interval_s: float = 2400.0
    preload_keys: int = 0
    windows: tuple[TrafficWindow, ...] = ()

    def __post_init__(self) -> None:
        if self.horizon_s <= 0:
            raise ValueError(f"horizon_s must be > 0, got {self.horizon_s}")
        if self.rotation_interval_s <= 0:
            raise ValueError(
                f"rotation_interval_s must be > 0, got {self.rotation_interval_s}"
            )
        if self.preload_keys < 0:
            raise ValueError(f"preload_keys must be >= 0, got {self.preload_keys}")


def measurement_windows(
    horizon_s: float, cycle_s: float = 2400.0, busy_s: float = 2220.0
) -> tuple[TrafficWindow, ...]:
    """Unreliable-traffic windows at the head of each rekey cycle.

    Models the duty cycle where measurements occupy most of each cycle and
    rotations happen in the quiet tail.
    """
    if cycle_s <= 0 or not 0 < busy_s <= cycle_s:
        raise ValueError(
            f"need 0 < busy_s <= cycle_s, got busy_s={busy_s}, cycle_s={cycle_s}"
        )
    windows = []
    start = 0.0
    while start < horizon_s:
        windows.append(TrafficWindow(start, min(start + busy_s, horizon_s)))
        start += cycle_s
    return tuple(windows)


# ---------------------------------------------------------------------------
# per-link source parameters


@dataclass(frozen=True)
class LinkSettings:
    """Source parameters of one user-pair entangled link.

    Endpoints are stored in canonical (sorted) order; arm configs follow the
    endpoints after canonicalization.
    """

    node_a: str
    node_b: str
    fidelity: float
    pair_rate_hz: float
    singles_a_hz: float = 0.0
    singles_b_hz: float = 0.0
    arm_a: ArmConfig = field(default_factory=ArmConfig)
    arm_b: ArmConfig = field(default_factory=ArmConfig)

    def __post_init__(self) -> None:
        if self.node_a == self.node_b:
            raise ValueError(f"link endpoints must differ, got {self.node_a!r} twice")
        if self.node_a > self.node_b:
            node_a, node_b = self.node_b, self.node_a
            object.__setattr__(self, "node_a", node_a)
            object.__setattr__(self, "node_b", node_b)
            arm_a, arm_b = self.arm_b, self.arm_a
            object.__setattr__(self, "arm_a", arm_a)
            object.__setattr__(self, "arm_b", arm_b)
            singles_a, singles_b = self.singles_b_hz, self.singles_a_hz
            object.__setattr__(self, "singles_a_hz", singles_a)
            object.__setattr__(self, "singles_b_hz", singles_b)
        if not 0.25 <= self.fidelity <= 1.0:
            raise ValueError(
                f"fidelity must be in [0.25, 1] for a depolarized-singlet link, "
                f"got {self.fidelity}"
            )
        if self.pair_rate_hz <= 0:
            raise ValueError(f"pair_rate_hz must be > 0, got {self.pair_rate_hz}")
        if self.singles_a_hz < 0 or self.singles_b_hz < 0:
            raise ValueError("singles rates must be >= 0")

    @property
    def name(self) -> str:
        return link_key(self.node_a, self.node_b)

    @property
    def werner_p(self) -> float:
        return (4.0 * self.fidelity - 1.0) / 3.0


# ---------------------------------------------------------------------------
# the scenario itself


@dataclass(frozen=True)
class Scenario:
    seed: int
    topology: Topology
    allocation: ChannelAllocation
    clocks: tuple[tuple[str, str], ...]
    links: tuple[LinkSettings, ...]
    sync: SyncSettings = field(default_factory=SyncSettings)
    tdc: TdcSettings = field(default_factory=TdcSettings)
    coincidence: CoincidenceSettings = field(default_factory=CoincidenceSettings)
    tomography: TomographySettings = field(default_factory=TomographySettings)
    keyplane: KeyplaneSettings = field(default_factory=KeyplaneSettings)

    def __post_init__(self) -> None:
        if int(self.seed) != self.seed or self.seed < 0:
            raise ValueError(f"seed must be a non-negative integer, got {self.seed}")
        object.__setattr__(self, "clocks", tuple(sorted(self.clocks)))
        object.__setattr__(self, "links", tuple(self.links))

    def clock_name(self, node: str) -> str:
        for name, model in self.clocks:
            if name == node:
                return model
        return "white_rabbit"

    def link_settings(self, name: str) -> LinkSettings:
        for link in self.links:
            if link.name == name:
                return link
        raise KeyError(f"no link {name!r} in scenario")


def validate_scenario(scenario: Scenario) -> Scenario:
    """Cross-field checks that individual dataclasses cannot see."""
    validate_allocation(scenario.allocation)
    nodes = scenario.topology.nodes
    for node, model in scenario.clocks:
        if node not in nodes:
            raise ConfigError(f"clocks.{node}", "node is not in the topology")
        if model not in CLOCK_NAMES:
            raise ConfigError(f"clocks.{node}", f"unknown clock model {model!r}")
    allocation = scenario.allocation.as_mapping()
    seen: set[str] = set()
    for i, link in enumerate(scenario.links):
        path = f"links[{i}]"
        for end in (link.node_a, link.node_b):
            if end not in nodes:
                raise ConfigError(path, f"endpoint {end!r} is not in the topology")
        if link.name in seen:
            raise ConfigError(path, f"duplicate link {link.name!r}")
        seen.add(link.name)
        if not allocation.get(link.name):
            raise ConfigError(path, f"link {link.name!r} has no channel allocation")
    if scenario.coincidence.link not in seen:
        raise ConfigError(
            "coincidence.link",
            f"{scenario.coincidence.link!r} is not a configured link",
        )
    return scenario


def default_scenario(seed: int = 7) -> Scenario:
    """The modeled three-user network at its design point."""
    topology = default_topology()

    def arm(user: str) -> ArmConfig:
        length = topology.link("source", user).fiber_length_m
        return ArmConfig(jitter_sigma_ps=30.0, path_delay_ns=propagation_delay_ns(length))

    links = (
        LinkSettings("alice", "bob", fidelity=0.938, pair_rate_hz=50.0,
                     arm_a=arm("alice"), arm_b=arm("bob")),
        LinkSettings("bob", "charlie", fidelity=0.91, pair_rate_hz=19.6 / 0.91,
                     arm_a=arm("bob"), arm_b=arm("charlie")),
        LinkSettings("alice", "charlie", fidelity=0.971, pair_rate_hz=145.0 / 0.970,
                     arm_a=arm("alice"), arm_b=arm("charlie")),
    )
    scenario = Scenario(
        seed=seed,
        topology=topology,
        allocation=default_allocation(),
        clocks=tuple((node, "white_rabbit") for node in sorted(topology.nodes)),
        links=links,
        keyplane=KeyplaneSettings(windows=measurement_windows(86400.0)),
    )
    return validate_scenario(scenario)


# ---------------------------------------------------------------------------
# mapping <-> scenario

_REQUIRED = object()


def _as_map(value, path: str) -> dict:
    if not isinstance(value, dict):
        raise ConfigError(path, f"expected a mapping, got {type(value).__name__}")
    return value


def _reject_unknown(mapping: dict, path: str, known: tuple[str, ...]) -> None:
    for key in mapping:
        if key not in known:
            raise ConfigError(f"{path}.{key}" if path else str(key), "unknown field")


def _number(mapping: dict, key: str, path: str, default=_REQUIRED) -> float:
    if key not in mapping:
        if default is _REQUIRED:
            raise ConfigError(f"{path}.{key}" if path else key, "required field is missing")
        return default
    value = mapping[key]
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{path}.{key}" if path else key, f"expected a number, got {value!r}")
    return float(value)


def _integer(mapping: dict, key: str, path: str, default=_REQUIRED) -> int:
    value = _number(mapping, key, path, default)
    if value != int(value):
        raise ConfigError(f"{path}.{key}" if path else key, f"expected an integer, got {value}")
    return int(value)


def _string(mapping: dict, key: str, path: str, default=_REQUIRED) -> str:
    if key not in mapping:
        if default is _REQUIRED:
            raise ConfigError(f"{path}.{key}" if path else key, "required field is missing")
        return default
    value = mapping[key]
    if not isinstance(value, str):
        raise ConfigError(f"{path}.{key}" if path else key, f"expected a string, got {value!r}")
    return value


def _build(factory, path: str, **kwargs):
    # funnel dataclass validation errors into the config path that caused them
    try:
        return factory(**kwargs)
    except ValueError as err:
        raise ConfigError(path, str(err)) from None


def _parse_topology(data, defaults: Topology) -> Topology:
    if data is None:
        return defaults
    data = _as_map(data, "topology")
    _reject_unknown(data, "topology", ("source", "nodes", "links"))
    source = _string(data, "source", "topology", "source")
    nodes = data.get("nodes")
    if not isinstance(nodes, list) or not all(isinstance(n, str) for n in nodes):
        raise ConfigError("topology.nodes", "expected a list of node names")
    raw_links = data.get("links", [])
    if not isinstance(raw_links, list):
        raise ConfigError("topology.links", "expected a list")
    links = []
    for i, entry in enumerate(raw_links):
        path = f"topology.links[{i}]"
        entry = _as_map(entry, path)
        _reject_unknown(entry, path, ("a", "b", "fiber_length_m"))
        links.append(
            _build(
                FiberLink,
                path,
                node_a=_string(entry, "a", path),
                node_b=_string(entry, "b", path),
                fiber_length_m=_number(entry, "fiber_length_m", path),
            )
        )
    return _build(
        Topology, "topology",
        nodes=frozenset(nodes),
        links=tuple(sorted(links, key=lambda l: l.key)),
        source_node=source,
    )


def _parse_allocation(data, defaults: ChannelAllocation) -> ChannelAllocation:
    if data is None:
        return defaults
    data = _as_map(data, "allocation")
    assignments = {}
    for name, channels in data.items():
        path = f"allocation.{name}"
        if not isinstance(channels, list) or not all(
            isinstance(c, int) and not isinstance(c, bool) for c in channels
        ):
            raise ConfigError(path, "expected a list of channel indices")
        assignments[str(name)] = frozenset(channels)
    return ChannelAllocation.from_mapping(assignments)


def _parse_clocks(data, defaults: tuple[tuple[str, str], ...]) -> tuple[tuple[str, str], ...]:
    if data is None:
        return defaults
    data = _as_map(data, "clocks")
    clocks = []
    for node, model in data.items():
        if not isinstance(model, str) or model not in CLOCK_NAMES:
            raise ConfigError(f"clocks.{node}", f"expected one of {CLOCK_NAMES}, got {model!r}")
        clocks.append((str(node), model))
    return tuple(sorted(clocks))


def _parse_arm(data, path: str, default: ArmConfig) -> ArmConfig:
    if data is None:
        return default
    data = _as_map(data, path)
    known = ("transmission", "dark_rate_hz", "jitter_sigma_ps", "path_delay_ns")
    _reject_unknown(data, path, known)
    return _build(
        ArmConfig, path,
        transmission=_number(data, "transmission", path, default.transmission),
        dark_rate_hz=_number(data, "dark_rate_hz", path, default.dark_rate_hz),
        jitter_sigma_ps=_number(data, "jitter_sigma_ps", path, default.jitter_sigma_ps),
        path_delay_ns=_number(data, "path_delay_ns", path, default.path_delay_ns),
    )


def _default_arm(topology: Topology, user: str) -> ArmConfig:
    try:
        length = topology.link(topology.source_node, user).fiber_length_m
    except (KeyError, ValueError):
        return ArmConfig(jitter_sigma_ps=30.0)
    return ArmConfig(jitter_sigma_ps=30.0, path_delay_ns=propagation_delay_ns(length))


def _parse_links(data, topology: Topology, defaults: tuple[LinkSettings, ...]):
    if data is None:
        return defaults
    if not isinstance(data, list):
        raise ConfigError("links", "expected a list")
    links = []
    for i, entry in enumerate(data):
        path = f"links[{i}]"
        entry = _as_map(entry, path)
        known = ("a", "b", "fidelity", "pair_rate_hz", "singles_a_hz", "singles_b_hz",
                 "arm_a", "arm_b")
        _reject_unknown(entry, path, known)
        node_a = _string(entry, "a", path)
        node_b = _string(entry, "b", path)
        links.append(
            _build(
                LinkSettings, path,
                node_a=node_a,
                node_b=node_b,
                fidelity=_number(entry, "fidelity", path),
                pair_rate_hz=_number(entry, "pair_rate_hz", path),
                singles_a_hz=_number(entry, "singles_a_hz", path, 0.0),
                singles_b_hz=_number(entry, "singles_b_hz", path, 0.0),
                arm_a=_parse_arm(entry.get("arm_a"), f"{path}.arm_a", _default_arm(topology, node_a)),
                arm_b=_parse_arm(entry.get("arm_b"), f"{path}.arm_b", _default_arm(topology, node_b)),
            )
        )
    return tuple(links)


def _parse_sync(data, defaults: SyncSettings) -> SyncSettings:
    if data is None:
        return defaults
    data = _as_map(data, "sync")
    _reject_unknown(data, "sync", ("duration_s", "bin_width_ps", "pulse_rate_hz", "models"))
    models = data.get("models", list(defaults.models))
    if not isinstance(models, list) or not all(isinstance(m, str) for m in models):
        raise ConfigError("sync.models", "expected a list of clock model names")
    return _build(
        SyncSettings, "sync",
        duration_s=_number(data, "duration_s", "sync", defaults.duration_s),
        bin_width_ps=_number(data, "bin_width_ps", "sync", defaults.bin_width_ps),
        pulse_rate_hz=_number(data, "pulse_rate_hz", "sync", defaults.pulse_rate_hz),
        models=tuple(models),
    )


def _parse_tdc(data, defaults: TdcSettings) -> TdcSettings:
    if data is None:
        return defaults
    data = _as_map(data, "tdc")
    _reject_unknown(data, "tdc", ("n_taps", "n_events", "width_spread"))
    return _build(
        TdcSettings, "tdc",
        n_taps=_integer(data, "n_taps", "tdc", defaults.n_taps),
        n_events=_integer(data, "n_events", "tdc", defaults.n_events),
        width_spread=_number(data, "width_spread", "tdc", defaults.width_spread),
    )


def _parse_coincidence(data, defaults: CoincidenceSettings) -> CoincidenceSettings:
    if data is None:
        return defaults
    data = _as_map(data, "coincidence")
    known = ("link", "duration_s", "window_ns", "delay_range_ns", "variants")
    _reject_unknown(data, "coincidence", known)
    variants = defaults.variants
    if "variants" in data:
        raw = data["variants"]
        if not isinstance(raw, list):
            raise ConfigError("coincidence.variants", "expected a list")
        parsed = []
        for i, entry in enumerate(raw):
            path = f"coincidence.variants[{i}]"
            entry = _as_map(entry, path)
            _reject_unknown(entry, path, ("clock", "bin_width_ps"))
            parsed.append(
                _build(
                    CoincidenceVariant, path,
                    clock=_string(entry, "clock", path),
                    bin_width_ps=_number(entry, "bin_width_ps", path),
                )
            )
        variants = tuple(parsed)
    return _build(
        CoincidenceSettings, "coincidence",
        link=_string(data, "link", "coincidence", defaults.link),
        duration_s=_number(data, "duration_s", "coincidence", defaults.duration_s),
        window_ns=_number(data, "window_ns", "coincidence", defaults.window_ns),
        delay_range_ns=_number(data, "delay_range_ns", "coincidence", defaults.delay_range_ns),
        variants=variants,
    )


def _parse_tomography(data, defaults: TomographySettings) -> TomographySettings:
    if data is None:
        return defaults
    data = _as_map(data, "tomography")
    known = ("integration_time_s", "basis", "draws", "burn_in", "step_scale", "chains", "thin")
    _reject_unknown(data, "tomography", known)
    chain = _build(
        ChainConfig, "tomography",
        draws=_integer(data, "draws", "tomography", defaults.chain.draws),
        burn_in=_integer(data, "burn_in", "tomography", defaults.chain.burn_in),
        step_scale=_number(data, "step_scale", "tomography", defaults.chain.step_scale),
        chains=_integer(data, "chains", "tomography", defaults.chain.chains),
        thin=_integer(data, "thin", "tomography", defaults.chain.thin),
    )
    return _build(
        TomographySettings, "tomography",
        integration_time_s=_number(
            data, "integration_time_s", "tomography", defaults.integration_time_s
        ),
        basis=_string(data, "basis", "tomography", defaults.basis),
        chain=chain,
    )


def _parse_windows(data, horizon_s: float, defaults: tuple[TrafficWindow, ...]):
    if data is None:
        return defaults
    path = "keyplane.windows"
    if isinstance(data, dict):
        _reject_unknown(data, path, ("cycle_s", "busy_s"))
        try:
            return measurement_windows(
                horizon_s,
                cycle_s=_number(data, "cycle_s", path, 2400.0),
                busy_s=_number(data, "busy_s", path, 2220.0),
            )
        except ValueError as err:
            raise ConfigError(path, str(err)) from None
    if not isinstance(data, list):
        raise ConfigError(path, "expected a list of windows or a {cycle_s, busy_s} pattern")
    windows = []
    for i, entry in enumerate(data):
        entry_path = f"{path}[{i}]"
        entry = _as_map(entry, entry_path)
        _reject_unknown(entry, entry_path, ("start_s", "end_s", "protocol"))
        protocol_name = _string(entry, "protocol", entry_path, Protocol.UNRELIABLE.value)
        try:
            protocol = Protocol(protocol_name)
        except ValueError:
            raise ConfigError(
                entry_path, f"unknown protocol {protocol_name!r}"
            ) from None
        windows.append(
            _build(
                TrafficWindow, entry_path,
                start_s=_number(entry, "start_s", entry_path),
                end_s=_number(entry, "end_s", entry_path),
                protocol=protocol,
            )
        )
    return tuple(windows)


def _parse_keyplane(data, defaults: KeyplaneSettings) -> KeyplaneSettings:
    if data is None:
        return defaults
    data = _as_map(data, "keyplane")
    known = ("skr_mean_bits_per_s", "skr_std_bits_per_s", "qber_mean", "qber_std",
             "horizon_s", "rotation_interval_s", "preload_keys", "windows")
    _reject_unknown(data, "keyplane", known)
    stats = _build(
        QkdLinkStats, "keyplane",
        skr_mean_bits_per_s=_number(
            data, "skr_mean_bits_per_s", "keyplane", defaults.stats.skr_mean_bits_per_s
        ),
        skr_std_bits_per_s=_number(
            data, "skr_std_bits_per_s", "keyplane", defaults.stats.skr_std_bits_per_s
        ),
        qber_mean=_number(data, "qber_mean", "keyplane", defaults.stats.qber_mean),
        qber_std=_number(data, "qber_std", "keyplane", defaults.stats.qber_std),
    )
    horizon_s = _number(data, "horizon_s", "keyplane", defaults.horizon_s)
    return _build(
        KeyplaneSettings, "keyplane",
        stats=stats,
        horizon_s=horizon_s,
        rotation_interval_s=_number(
            data, "rotation_interval_s", "keyplane", defaults.rotation_interval_s
        ),
        preload_keys=_integer(data, "preload_keys", "keyplane", defaults.preload_keys),
        windows=_parse_windows(data.get("windows"), horizon_s, defaults.windows),
    )


_TOP_LEVEL = ("seed", "topology", "allocation", "clocks", "links", "sync", "tdc",
              "coincidence", "tomography", "keyplane")


def scenario_from_mapping(data: dict) -> Scenario:
    """Build and validate a Scenario from plain nested mappings.

    Absent sections fall back to the default scenario, so a config file only
    needs the fields it changes (plus the mandatory seed).
    """
    data = _as_map(data, "config")
    _reject_unknown(data, "", _TOP_LEVEL)
    if "seed" not in data:
        raise ConfigError("seed", "required field is missing (reproducibility is mandatory)")
    defaults = default_scenario()
    topology = _parse_topology(data.get("topology"), defaults.topology)
    scenario = _build(
        Scenario, "config",
        seed=_integer(data, "seed", ""),
        topology=topology,
        allocation=_parse_allocation(data.get("allocation"), defaults.allocation),
        clocks=_parse_clocks(data.get("clocks"), defaults.clocks),
        links=_parse_links(data.get("links"), topology, defaults.links),
        sync=_parse_sync(data.get("sync"), defaults.sync),
        tdc=_parse_tdc(data.get("tdc"), defaults.tdc),
        coincidence=_parse_coincidence(data.get("coincidence"), defaults.coincidence),
        tomography=_parse_tomography(data.get("tomography"), defaults.tomography),
        keyplane=_parse_keyplane(data.get("keyplane"), defaults.keyplane),
    )
    return validate_scenario(scenario)


def scenario_to_mapping(scenario: Scenario) -> dict:
    """Plain nested mappings, the exact inverse of scenario_from_mapping."""

    def arm_map(arm: ArmConfig) -> dict:
        return {
            "transmission": arm.transmission,
            "dark_rate_hz": arm.dark_rate_hz,
            "jitter_sigma_ps": arm.jitter_sigma_ps,
            "path_delay_ns": arm.path_delay_ns,
        }

    return {
        "seed": scenario.seed,
        "topology": {
            "source": scenario.topology.source_node,
            "nodes": sorted(scenario.topology.nodes),
            "links": [
                {"a": l.node_a, "b": l.node_b, "fiber_length_m": l.fiber_length_m}
                for l in sorted(scenario.topology.links, key=lambda l: l.key)
            ],
        },
        "allocation": {
            name: sorted(channels) for name, channels in scenario.allocation.assignments
        },
        "clocks": dict(scenario.clocks),
        "links": [
            {
                "a": l.node_a,
                "b": l.node_b,
                "fidelity": l.fidelity,
                "pair_rate_hz": l.pair_rate_hz,
                "singles_a_hz": l.singles_a_hz,
                "singles_b_hz": l.singles_b_hz,
                "arm_a": arm_map(l.arm_a),
                "arm_b": arm_map(l.arm_b),
            }
            for l in scenario.links
        ],
        "sync": {
            "duration_s": scenario.sync.duration_s,
            "bin_width_ps": scenario.sync.bin_width_ps,
            "pulse_rate_hz": scenario.sync.pulse_rate_hz,
            "models": list(scenario.sync.models),
        },
        "tdc": {
            "n_taps": scenario.tdc.n_taps,
            "n_events": scenario.tdc.n_events,
            "width_spread": scenario.tdc.width_spread,
        },
        "coincidence": {
            "link": scenario.coincidence.link,
            "duration_s": scenario.coincidence.duration_s,
            "window_ns": scenario.coincidence.window_ns,
            "delay_range_ns": scenario.coincidence.delay_range_ns,
            "variants": [
                {"clock": v.clock, "bin_width_ps": v.bin_width_ps}
                for v in scenario.coincidence.variants
            ],
        },
        "tomography": {
            "integration_time_s": scenario.tomography.integration_time_s,
            "basis": scenario.tomography.basis,
            "draws": scenario.tomography.chain.draws,
            "burn_in": scenario.tomography.chain.burn_in,
            "step_scale": scenario.tomography.chain.step_scale,
            "chains": scenario.tomography.chain.chains,
            "thin": scenario.tomography.chain.thin,
        },
        "keyplane": {
            "skr_mean_bits_per_s": scenario.keyplane.stats.skr_mean_bits_per_s,
            "skr_std_bits_per_s": scenario.keyplane.stats.skr_std_bits_per_s,
            "qber_mean": scenario.keyplane.stats.qber_mean,
            "qber_std": scenario.keyplane.stats.qber_std,
            "horizon_s": scenario.keyplane.horizon_s,
            "rotation_interval_s": scenario.keyplane.rotation_interval_s,
            "preload_keys": scenario.keyplane.preload_keys,
            "windows": [
                {"start_s": w.start_s, "end_s": w.end_s, "protocol": w.protocol.value}
                for w in scenario.keyplane.windows
            ],
        },
    }


def load_scenario(path: str | Path, seed: int | None = None) -> Scenario:
    """Read a scenario file (YAML, or JSON by .json suffix); optionally
    override its seed."""
    path = Path(path)
    text = path.read_text()
    try:
        if path.suffix.lower() == ".json":
            data = json.loads(text)
        else:
            data = yaml.safe_load(text)
    except (json.JSONDecodeError, yaml.YAMLError) as err:
        raise ConfigError(str(path), f"cannot parse: {err}") from None
    scenario = scenario_from_mapping(data)
    if seed is not None:
        scenario = validate_scenario(replace(scenario, seed=seed))
    return scenario


def dump_scenario(scenario: Scenario, path: str | Path) -> Path:
    """Write a scenario file (format chosen by suffix, YAML by default)."""
    path = Path(path)
    mapping = scenario_to_mapping(scenario)
    if path.suffix.lower() == ".json":
        path.write_text(json.dumps(mapping, indent=2, sort_keys=True) + "\n")
    else:
        path.write_text(yaml.safe_dump(mapping, sort_keys=True))
    return path
