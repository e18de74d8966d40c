"""Demand-unaware charging baseline.

Vehicles run until their charge drops below a threshold, stop taking new
riders, and once empty go to whichever nearby station lets them start
charging soonest. Nothing here looks at the demand forecast.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

from .battery import BatteryModel, discharge
from .core import ChargeSlot, VehicleState
from .errors import InvalidArgument, NoStationInRange


@dataclass(frozen=True)
class BenchmarkConfig:
    threshold: float = 0.05
    radius: float = 900.0  # seconds of travel

    def __post_init__(self):
        if not 0.0 < self.threshold < 1.0:
            raise InvalidArgument("threshold must lie in (0, 1)")
        if not self.radius > 0:
            raise InvalidArgument("radius must be positive")


class StationQueues:
    """FIFO reservations per station; one free-time per charger."""

    def __init__(self, stations: Iterable):
        self.free: dict[int, list[float]] = {s.id: [float("-inf")] * s.capacity for s in stations}

    def earliest(self, station: int) -> float:
        return min(self.free[station])

    def reserve(self, station: int, start: float, duration: float) -> float:
        """Book the first charger to free up; returns the actual start."""
        chargers = self.free[station]
        k = min(range(len(chargers)), key=lambda i: (chargers[i], i))
        begin = max(start, chargers[k])
        chargers[k] = begin + duration
        return begin


def charge_duration(battery: BatteryModel, q: float) -> float:
    """Seconds to fill from ``q`` to 1 at the linear rate eta per minute."""
    return max(0.0, 1.0 - q) / battery.eta * 60.0


def greedy_station_assignment(
    vehicle: VehicleState,
    network,
    now: float,
    radius: float,
    queues: StationQueues,
    battery: BatteryModel,
) -> tuple[int, float]:
    """Reserve the in-radius station where charging can begin first.

    Ties go to the shorter drive, then the lower station id. Raises
    NoStationInRange when no station is within ``radius`` seconds.
    """
    node, t0 = vehicle.anchor(network, now)
    row = network.row(node)
    best = None
    for st in network.stations:
        tt = row[network.index(st.node)]
        if tt > radius:
            continue
        key = (max(t0 + tt, queues.earliest(st.id)), tt, st.id)
        if best is None or key < best:
            best = key
    if best is None:
        raise NoStationInRange(f"no station within {radius} s of node {node}")
    return _book(vehicle, network, node, t0, row, best[2], queues, battery)


def _book(vehicle, network, node, t0, row, station_id, queues, battery):
    st = network.station(station_id)
    q = vehicle.charge
    if vehicle.next_node is not None:
        arc = network.arc(vehicle.node, vehicle.next_node)
        q = discharge(battery, q, arc.distance * (1.0 - vehicle.edge_elapsed / arc.travel_time))
    if st.node != node:
        q = discharge(battery, q, network.path_distance(network.path(node, st.node)))
    arrival = t0 + row[network.index(st.node)]
    duration = charge_duration(battery, q)
    start = queues.reserve(station_id, arrival, duration)
    vehicle.charge_slot = ChargeSlot(start, duration, station_id)
    return station_id, start


def benchmark_step(
    fleet: Iterable[VehicleState],
    network,
    now: float,
    config: BenchmarkConfig,
    queues: StationQueues,
    battery: BatteryModel,
) -> list[tuple[int, int, float]]:
    """Apply the threshold rule to every vehicle; returns the new (vehicle, station, start) requests."""
    issued = []
    for veh in sorted(fleet, key=lambda v: v.id):
        if veh.charging:
            continue
        if veh.charge >= config.threshold:
            veh.charge_slot = None
            veh.accepting = True
            continue
        veh.accepting = False
        if veh.riders or veh.charge_slot is not None:
            continue
        try:
            s, start = greedy_station_assignment(veh, network, now, config.radius, queues, battery)
        except NoStationInRange:
            node, t0 = veh.anchor(network, now)
            nearest = network.nearest_station(node)
            s, start = _book(veh, network, node, t0, network.row(node), nearest.id, queues, battery)
        issued.append((veh.id, s, start))
    return issued
