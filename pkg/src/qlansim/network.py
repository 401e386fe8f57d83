"""QLAN topology, flex-grid channel allocation, and capacity arithmetic.

Channel-pair indices are opaque labels 1..8 (the source spectrum is carved
into eight entangled channel pairs); links claim disjoint sets of them.
Each user connects over three fiber strands: quantum, timing, and QKD.
"""

from __future__ import annotations

from dataclasses import dataclass, field

__all__ = [
    "AllocationConflictError",
    "CapacityReport",
    "ChannelAllocation",
    "FiberLink",
    "N_CHANNEL_PAIRS",
    "STRANDS_PER_USER",
    "Topology",
    "capacity_report",
    "default_allocation",
    "default_topology",
    "link_key",
    "propagation_delay_ns",
    "validate_allocation",
]

N_CHANNEL_PAIRS = 8
STRANDS_PER_USER = 3
_SPEED_OF_LIGHT_M_PER_S = 299_792_458.0
DEFAULT_GROUP_INDEX = 1.468


class AllocationConflictError(ValueError):
    """Two links claim the same channel pair."""


def link_key(node_a: str, node_b: str) -> str:
    """Canonical order-independent link name."""
    if node_a == node_b:
        raise ValueError(f"link endpoints must differ, got {node_a!r} twice")
    return "-".join(sorted((node_a, node_b)))


@dataclass(frozen=True)
class FiberLink:
    node_a: str
    node_b: str
    fiber_length_m: float
    strands: tuple[str, ...] = ("quantum", "white_rabbit", "qkd")

    def __post_init__(self) -> None:
        if self.node_a == self.node_b:
            raise ValueError(f"link endpoints must differ, got {self.node_a!r} twice")
        if self.fiber_length_m <= 0:
            raise ValueError(f"fiber length must be positive, got {self.fiber_length_m}")

    @property
    def key(self) -> str:
        return link_key(self.node_a, self.node_b)


@dataclass(frozen=True)
class Topology:
    nodes: frozenset[str]
    links: tuple[FiberLink, ...]
    source_node: str = "source"

    def __post_init__(self) -> None:
        object.__setattr__(self, "nodes", frozenset(self.nodes))
        object.__setattr__(self, "links", tuple(self.links))
        if self.source_node not in self.nodes:
            raise ValueError(f"source node {self.source_node!r} is not in the node set")
        for link in self.links:
            for end in (link.node_a, link.node_b):
                if end not in self.nodes:
                    raise ValueError(f"link endpoint {end!r} is not in the node set")

    @property
    def users(self) -> frozenset[str]:
        return self.nodes - {self.source_node}

    def link(self, node_a: str, node_b: str) -> FiberLink:
        wanted = link_key(node_a, node_b)
        for candidate in self.links:
            if candidate.key == wanted:
                return candidate
        raise KeyError(f"no link {wanted!r} in topology")


def default_topology() -> Topology:
    """Source co-located with Alice; Bob and Charlie a campus away."""
    return Topology(
        nodes=frozenset({"source", "alice", "bob", "charlie"}),
        links=(
            FiberLink("source", "alice", 10.0),
            FiberLink("source", "bob", 250.0),
            FiberLink("source", "charlie", 1200.0),
        ),
    )


@dataclass(frozen=True)
class ChannelAllocation:
    """Which channel pairs each user-pair link carries.

    Construction does not validate disjointness; run validate_allocation.
    """

    assignments: tuple[tuple[str, frozenset[int]], ...]

    def __post_init__(self) -> None:
        cleaned = tuple(
            (str(link), frozenset(int(ch) for ch in channels))
            for link, channels in self.assignments
        )
        object.__setattr__(self, "assignments", cleaned)

    @classmethod
    def from_mapping(cls, mapping: dict) -> "ChannelAllocation":
        return cls(tuple(sorted((k, frozenset(v)) for k, v in mapping.items())))

    def as_mapping(self) -> dict[str, frozenset[int]]:
        return dict(self.assignments)


def default_allocation() -> ChannelAllocation:
    return ChannelAllocation.from_mapping(
        {
            "alice-bob": {3},
            "bob-charlie": {1, 2},
            "alice-charlie": {8},
        }
    )


def validate_allocation(alloc: ChannelAllocation) -> ChannelAllocation:
    """Check range and cross-link disjointness; return the allocation.

    Idempotent, and independent of the order links were declared in.
    """
    owners: dict[int, str] = {}
    for link, channels in sorted(alloc.assignments):
        for channel in sorted(channels):
            if not 1 <= channel <= N_CHANNEL_PAIRS:
                raise ValueError(
                    f"channel {channel} on link {link!r} is outside 1..{N_CHANNEL_PAIRS}"
                )
            if channel in owners:
                raise AllocationConflictError(
                    f"channel {channel} is allocated to both {owners[channel]!r} "
                    f"and {link!r}"
                )
            owners[channel] = link
    return alloc


def propagation_delay_ns(length_m: float, group_index: float = DEFAULT_GROUP_INDEX) -> float:
    """One-way fiber delay, length times group index over c."""
    if length_m < 0:
        raise ValueError(f"length cannot be negative, got {length_m}")
    if group_index < 1:
        raise ValueError(f"group index must be at least 1, got {group_index}")
    return length_m * group_index / _SPEED_OF_LIGHT_M_PER_S * 1e9


@dataclass(frozen=True)
class CapacityReport:
    n_users: int
    switch_ports: int
    wss_outputs: int
    strands_per_user: int = STRANDS_PER_USER
    notes: tuple[str, ...] = field(default_factory=tuple)

    @property
    def strands_total(self) -> int:
        return self.n_users * self.strands_per_user

    @property
    def timing_feasible(self) -> bool:
        return self.n_users <= self.switch_ports

    @property
    def spectrum_feasible(self) -> bool:
        return self.n_users <= self.wss_outputs

    @property
    def feasible(self) -> bool:
        return self.timing_feasible and self.spectrum_feasible


def capacity_report(
    topology: Topology, switch_ports: int = 19, wss_outputs: int = 9
) -> CapacityReport:
    """Whether the user count fits the timing switch and the WSS fan-out."""
    if switch_ports <= 0 or wss_outputs <= 0:
        raise ValueError("port counts must be positive")
    n_users = len(topology.users)
    notes = []
    if n_users > switch_ports:
        notes.append(
            f"{n_users} users exceed the {switch_ports}-port timing switch"
        )
    if n_users > wss_outputs:
        notes.append(f"{n_users} users exceed the {wss_outputs}-output WSS")
    return CapacityReport(
        n_users=n_users,
        switch_ports=switch_ports,
        wss_outputs=wss_outputs,
        notes=tuple(notes),
    )
