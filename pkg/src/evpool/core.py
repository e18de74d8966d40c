"""Plain data types shared by the pooling, scheduling and simulation layers."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

from .errors import ValidationError

PICKUP = "pickup"
DROPOFF = "dropoff"


@dataclass(frozen=True)
class Request:
    id: int
    entry_time: float
    origin: int
    destination: int

    def __post_init__(self):
        if self.origin == self.destination:
            raise ValidationError(f"request {self.id}: origin equals destination")
        if self.entry_time < 0:
            raise ValidationError(f"request {self.id}: negative entry time")


@dataclass(frozen=True)
class QosPolicy:
    max_wait: float = 300.0
    max_delay: float = 900.0

    def __post_init__(self):
        if not (self.max_wait > 0 and self.max_delay > 0):
            raise ValidationError("max_wait and max_delay must be positive")


@dataclass(frozen=True)
class Stop:
    kind: str  # PICKUP or DROPOFF
    request: int
    node: int


@dataclass
class ChargeSlot:
    """A planned charge in absolute seconds; ``station`` is unset until the short horizon assigns one."""

    start: float
    duration: float
    station: Optional[int] = None


@dataclass
class Rider:
    """Per-rider bookkeeping a vehicle needs to check QoS on re-routing."""

    request: Request
    direct_time: float
    picked_up: Optional[float] = None

    def pickup_deadline(self, qos: QosPolicy) -> float:
        return self.request.entry_time + qos.max_wait

    def dropoff_deadline(self, qos: QosPolicy) -> float:
        return self.request.entry_time + self.direct_time + qos.max_delay


@dataclass
class VehicleState:
    """Snapshot of one vehicle at a batch boundary.

    ``node`` is the last node reached. When the vehicle is part-way along an
    arc, ``next_node`` is the arc head and ``edge_elapsed`` the seconds already
    spent on it. ``riders`` holds every accepted, not yet delivered request;
    those with a pickup time are onboard.
    """

    id: int
    node: int
    charge: float = 1.0
    capacity: int = 10
    riders: dict[int, Rider] = field(default_factory=dict)
    route: list[Stop] = field(default_factory=list)
    charge_slot: Optional[ChargeSlot] = None
    accepting: bool = True
    next_node: Optional[int] = None
    edge_elapsed: float = 0.0
    charging: bool = False
    odometer: float = 0.0  # meters driven

    @property
    def onboard(self) -> list[int]:
        return sorted(r for r, info in self.riders.items() if info.picked_up is not None)

    @property
    def waiting(self) -> list[int]:
        return sorted(r for r, info in self.riders.items() if info.picked_up is None)

    def anchor(self, net, now: float) -> tuple[int, float]:
        """Node and time at which the vehicle can next change course."""
        if self.next_node is None:
            return self.node, now
        remaining = net.arc(self.node, self.next_node).travel_time - self.edge_elapsed
        return self.next_node, now + max(0.0, remaining)


def route_end(net, start_node: int, start_time: float, stops) -> tuple[int, float]:
    """Node and time of the last stop when driving ``stops`` in order without waiting."""
    node, t = start_node, start_time
    for s in stops:
        t += net.travel_time(node, s.node)
        node = s.node
    return node, t


def route_distance(net, start_node: int, stops) -> float:
    """Meters driven along shortest paths through ``stops`` in order."""
    node, d = start_node, 0.0
    for s in stops:
        if s.node != node:
            d += net.path_distance(net.path(node, s.node))
        node = s.node
    return d
