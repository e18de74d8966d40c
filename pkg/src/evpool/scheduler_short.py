"""Short-horizon station assignment for charges that start soon.

Each job is one vehicle's upcoming charge, fixed in time by the long horizon.
The solver picks a station per job so that no station ever hosts more jobs
than it has chargers, at minimum total travel time.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Optional, Sequence

from .battery import BatteryModel, discharge
from .core import VehicleState, route_distance, route_end
from .errors import Infeasible, ValidationError
from .scheduler_long import ChargeSchedule


@dataclass(frozen=True)
class ShortJob:
    vehicle: int
    start: int  # period index
    duration: int
    cost: Mapping[int, float]  # station -> seconds; keys are the reachable stations
    pinned: Optional[int] = None

    def __post_init__(self):
        if self.duration < 1:
            raise ValidationError(f"job for vehicle {self.vehicle}: duration must be >= 1")
        if self.pinned is not None and self.pinned not in self.cost:
            raise ValidationError(f"job for vehicle {self.vehicle}: pinned station must be reachable")

    @property
    def end(self) -> int:
        return self.start + self.duration

    @property
    def reachable(self) -> frozenset:
        return frozenset(self.cost)


@dataclass
class ShortInstance:
    jobs: list[ShortJob]
    capacity: dict[int, int]  # station -> chargers
    period_length: float = 300.0

    def __post_init__(self):
        seen = set()
        for j in self.jobs:
            if j.vehicle in seen:
                raise ValidationError(f"vehicle {j.vehicle} has more than one job")
            seen.add(j.vehicle)
            unknown = set(j.cost) - set(self.capacity)
            if unknown:
                raise ValidationError(f"job for vehicle {j.vehicle} names unknown stations {sorted(unknown)}")


def clique_checkpoints(jobs: Sequence) -> list[int]:
    """One period inside each maximal clique of the job intervals [start, end)."""
    events = []
    for j in jobs:
        if j.end <= j.start:
            raise ValidationError("job interval must be non-empty")
        events.append((j.start, 1))
        events.append((j.end, 0))
    # half-open intervals: an end at t happens before a start at t
    events.sort()
    out = []
    last_start = None
    opened = False
    for t, kind in events:
        if kind == 1:
            last_start = t
            opened = True
        elif opened:
            out.append(last_start)
            opened = False
    return out


def station_loads(instance: ShortInstance, assignment: Mapping[int, int]) -> dict[tuple[int, int], int]:
    """(station, period) -> number of assigned jobs charging, over every period."""
    loads: dict[tuple[int, int], int] = {}
    for j in instance.jobs:
        s = assignment.get(j.vehicle)
        if s is None:
            continue
        for t in range(j.start, j.end):
            loads[(s, t)] = loads.get((s, t), 0) + 1
    return loads


def assignment_cost(instance: ShortInstance, assignment: Mapping[int, int]) -> float:
    return sum(j.cost[assignment[j.vehicle]] for j in instance.jobs if j.vehicle in assignment)


def is_feasible(instance: ShortInstance, assignment: Mapping[int, int]) -> bool:
    for j in instance.jobs:
        if assignment.get(j.vehicle) not in j.cost:
            return False
    return all(n <= instance.capacity[s] for (s, _), n in station_loads(instance, assignment).items())


def solve_short_exact(instance: ShortInstance) -> dict[int, int]:
    """Minimum-cost station per job by depth-first branch-and-bound.

    Jobs with fewer options go first (ties by vehicle id); stations are tried
    cheapest first (ties by station id). Capacity is checked at one point per
    maximal clique, which is enough for interval jobs.
    """
    jobs = sorted(instance.jobs, key=lambda j: (len(j.cost), j.vehicle))
    if not jobs:
        return {}
    for j in jobs:
        if not j.cost:
            raise Infeasible(f"vehicle {j.vehicle} cannot reach any station")
    points = clique_checkpoints(jobs)
    covers = [[p for p, t in enumerate(points) if j.start <= t < j.end] for j in jobs]
    options = [sorted(j.cost.items(), key=lambda kv: (kv[1], kv[0])) for j in jobs]
    # cheapest completion of the remaining jobs, ignoring capacity
    tail = [0.0] * (len(jobs) + 1)
    for d in range(len(jobs) - 1, -1, -1):
        tail[d] = tail[d + 1] + options[d][0][1]

    load = {(s, p): 0 for s in instance.capacity for p in range(len(points))}
    chosen: list[Optional[int]] = [None] * len(jobs)
    best = [math.inf, None]

    def dfs(d: int, cost: float) -> None:
        if cost + tail[d] >= best[0] - 1e-9:
            return
        if d == len(jobs):
            best[0], best[1] = cost, list(chosen)
            return
        for s, c in options[d]:
            cap = instance.capacity[s]
            if any(load[(s, p)] >= cap for p in covers[d]):
                continue
            for p in covers[d]:
                load[(s, p)] += 1
            chosen[d] = s
            dfs(d + 1, cost + c)
            for p in covers[d]:
                load[(s, p)] -= 1
        chosen[d] = None

    dfs(0, 0.0)
    if best[1] is None:
        raise Infeasible("no station assignment satisfies every capacity")
    return {j.vehicle: s for j, s in zip(jobs, best[1])}


def _greedy_fill(instance: ShortInstance, jobs, assignment: dict[int, int]) -> set[int]:
    loads = station_loads(instance, assignment)
    deferred = set()
    for j in sorted(jobs, key=lambda j: (j.start, j.vehicle)):
        for s, _ in sorted(j.cost.items(), key=lambda kv: (kv[1], kv[0])):
            if all(loads.get((s, t), 0) < instance.capacity[s] for t in range(j.start, j.end)):
                assignment[j.vehicle] = s
                for t in range(j.start, j.end):
                    loads[(s, t)] = loads.get((s, t), 0) + 1
                break
        else:
            deferred.add(j.vehicle)
    return deferred


def solve_short_fallback(instance: ShortInstance, newest) -> tuple[dict[int, int], set[int]]:
    """Solve without the ``newest`` vehicles, then place them greedily.

    Returns the assignment and the vehicles that could not be placed.
    """
    newest = set(newest)
    older = [j for j in instance.jobs if j.vehicle not in newest]
    fresh = [j for j in instance.jobs if j.vehicle in newest]
    try:
        assignment = solve_short_exact(ShortInstance(older, instance.capacity, instance.period_length))
        deferred: set[int] = set()
    except Infeasible:
        # older jobs alone are stuck too; fall back to greedy for everyone
        assignment = {}
        deferred = _greedy_fill(instance, older, assignment)
    deferred |= _greedy_fill(instance, fresh, assignment)
    return assignment, deferred


# -- instance construction --------------------------------------------------------------


def predicted_drop_off(vehicle: VehicleState, network, battery: BatteryModel, now: float):
    """(node, time, charge) once the vehicle's current route is finished."""
    node, t = vehicle.anchor(network, now)
    q = vehicle.charge
    if vehicle.next_node is not None:
        arc = network.arc(vehicle.node, vehicle.next_node)
        frac = 1.0 - min(1.0, vehicle.edge_elapsed / arc.travel_time) if arc.travel_time > 0 else 0.0
        q = discharge(battery, q, arc.distance * frac)
    q = discharge(battery, q, route_distance(network, node, vehicle.route))
    node, t = route_end(network, node, t, vehicle.route)
    return node, t, q


def build_short_instance(
    schedule: ChargeSchedule,
    fleet: Mapping[int, VehicleState],
    network,
    battery: BatteryModel,
    now: float,
    T_SL: float,
    delta: float,
    period_length: float = 300.0,
    origin: float = 0.0,
    buffer: float = 0.0,
) -> ShortInstance:
    """Jobs for every slot starting in [now, now + T_SL + delta].

    Period k of ``schedule`` begins at ``origin + k * period_length``. A
    station is reachable when the vehicle can be there by the slot start
    (after its remaining route) with charge at or above ``-buffer``. The
    station already assigned to the slot or vehicle is always included.
    Each vehicle contributes its first slot in the window.
    """
    hi = now + T_SL + delta
    capacity = {s.id: s.capacity for s in network.stations}
    jobs = []
    for v, slots in schedule.items():
        if v not in fleet:
            continue
        for slot in slots:
            start_s = origin + slot.start * period_length
            if not (now <= start_s <= hi):
                continue
            veh = fleet[v]
            node, t_c, q = predicted_drop_off(veh, network, battery, now)
            row = network.row(node)
            cost = {}
            for st in network.stations:
                tt = row[network.index(st.node)]
                if t_c + tt > start_s + 1e-9:
                    continue
                dist = network.path_distance(network.path(node, st.node)) if st.node != node else 0.0
                if discharge(battery, q, dist) < -buffer - 1e-12:
                    continue
                cost[st.id] = tt
            pinned = slot.station
            if pinned is None and veh.charge_slot is not None:
                pinned = veh.charge_slot.station
            if pinned is not None and pinned in capacity and pinned not in cost:
                cost[pinned] = row[network.index(network.station(pinned).node)]
            if pinned is not None and pinned not in capacity:
                pinned = None
            jobs.append(ShortJob(v, slot.start, slot.duration, cost, pinned))
            break
    return ShortInstance(jobs, capacity, period_length)
