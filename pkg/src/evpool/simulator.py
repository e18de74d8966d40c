"""Batch-driven day simulation.

Each batch of ``batch`` seconds: release the requests that arrived, run the
charging planners on their cadence (or the benchmark rule), assign requests
to vehicles, send idle vehicles toward unserved demand, then move every
vehicle forward by one batch.
"""

from __future__ import annotations

import bisect
import csv
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .battery import BatteryModel, discharge
from .benchmark import BenchmarkConfig, StationQueues, benchmark_step, charge_duration
from .core import ChargeSlot, QosPolicy, Request, Rider, VehicleState, PICKUP
from .demand import availability_requirement, calibrate_lambda, demand_profile, expand_profile
from .errors import ConfigError, EmptyInput, Infeasible
from .pooling import (
    NEAREST_VEHICLE_CAP,
    REJECT_PENALTY,
    TRIP_CAP,
    assign_trips,
    build_shareability_graph,
    enumerate_trips,
    rebalance,
)
from .scheduler_long import (
    ChargeSchedule,
    LongInstance,
    Slot,
    check_delta_bound,
    release_date,
    solve_long_exact,
    solve_long_heuristic,
)
from .scheduler_short import build_short_instance, predicted_drop_off, solve_short_exact, solve_short_fallback

METHODS = ("ICE", "MILP", "HEURISTIC", "BENCHMARK")
EVENT_KINDS = ("pickup", "dropoff", "reject", "charge_start", "charge_end", "wait_start", "rebalance", "shortfall")
BUCKET = 1800.0
_EPS = 1e-9


@dataclass(frozen=True)
class ScenarioConfig:
    method: str = "HEURISTIC"
    batch: float = 60.0
    short_cadence: float = 60.0
    long_cadence: float = 300.0
    T_SL: float = 2700.0
    delta: float = 600.0
    buffer_D: float = 900.0
    qos: QosPolicy = field(default_factory=QosPolicy)
    battery: BatteryModel = field(default_factory=BatteryModel)
    fleet_size: int = 20
    vehicle_capacity: int = 10
    seed: int = 0
    day_start: float = 5 * 3600.0
    day_end: float = 24 * 3600.0
    initial_charge: str = "FULL"  # or UNIFORM_RANDOM
    lam: Optional[float] = None  # None: calibrate from the day's requests
    benchmark: BenchmarkConfig = field(default_factory=BenchmarkConfig)
    allow_large_delta: bool = False
    long_window: Optional[float] = None  # seconds of long-horizon look-ahead; None runs to day end
    nearest_vehicle_cap: int = NEAREST_VEHICLE_CAP
    trip_cap: int = TRIP_CAP
    max_riders_per_trip: int = 4
    milp_max_vehicles: int = 4
    milp_max_periods: int = 24

    def validate(self) -> None:
        if self.method not in METHODS:
            raise ConfigError(f"unknown method {self.method!r}; expected one of {', '.join(METHODS)}")
        for name in ("batch", "short_cadence", "long_cadence"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        if not _divides(self.batch, self.short_cadence) or not _divides(self.short_cadence, self.long_cadence):
            raise ConfigError("cadences must nest: batch | short_cadence | long_cadence")
        if self.T_SL < 0 or self.delta < 0 or self.buffer_D < 0:
            raise ConfigError("T_SL, delta and buffer_D must be non-negative")
        if not self.allow_large_delta and not check_delta_bound(self.long_cadence, self.delta):
            raise ConfigError(f"delta {self.delta} exceeds twice the long cadence; set allow_large_delta to override")
        if self.fleet_size < 1 or self.vehicle_capacity < 1:
            raise ConfigError("fleet_size and vehicle_capacity must be at least 1")
        if not self.day_end > self.day_start >= 0:
            raise ConfigError("day_end must come after day_start")
        if self.initial_charge not in ("FULL", "UNIFORM_RANDOM"):
            raise ConfigError("initial_charge must be FULL or UNIFORM_RANDOM")
        if self.lam is not None and not 0.0 <= self.lam <= 1.0:
            raise ConfigError("lam must lie in [0, 1]")
        if self.max_riders_per_trip < 1:
            raise ConfigError("max_riders_per_trip must be at least 1")
        if self.method == "MILP":
            window = self.long_window if self.long_window is not None else self.day_end - self.day_start
            if self.fleet_size > self.milp_max_vehicles or window / self.long_cadence > self.milp_max_periods:
                raise ConfigError(
                    f"MILP method is limited to {self.milp_max_vehicles} vehicles and "
                    f"{self.milp_max_periods} long-horizon periods"
                )

    @property
    def scheduled(self) -> bool:
        return self.method in ("MILP", "HEURISTIC")


def _divides(a: float, b: float) -> bool:
    k = b / a
    return abs(k - round(k)) < 1e-9 and round(k) >= 1


# -- event log ----------------------------------------------------------------------------


@dataclass(frozen=True)
class Event:
    time: float
    kind: str
    vehicle: Optional[int] = None
    request: Optional[int] = None
    station: Optional[int] = None
    node: Optional[int] = None
    charge: Optional[float] = None


class EventLog:
    """Append-only, time-ordered event records."""

    HEADER = ["time_s", "kind", "vehicle_id", "request_id", "station_id", "node", "charge"]

    def __init__(self):
        self.records: list[Event] = []

    def extend(self, events: Sequence[Event]) -> None:
        # a batch's events arrive grouped by vehicle; order them by time, stably
        for e in sorted(events, key=lambda e: e.time):
            if self.records and e.time < self.records[-1].time - _EPS:
                raise ValueError("events must be appended in time order")
            self.records.append(e)

    def __iter__(self):
        return iter(self.records)

    def __len__(self):
        return len(self.records)

    def of_kind(self, kind: str) -> list[Event]:
        return [e for e in self.records if e.kind == kind]

    def write_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(self.HEADER)
            for e in self.records:
                w.writerow([_fmt(e.time), e.kind, _opt(e.vehicle), _opt(e.request), _opt(e.station),
                            _opt(e.node), "" if e.charge is None else repr(float(e.charge))])


def _fmt(x: float) -> str:
    return str(int(x)) if float(x).is_integer() else repr(float(x))


def _opt(x) -> str:
    return "" if x is None else str(x)


# -- charger bookings -------------------------------------------------------------------------


class ChargerBook:
    """Booked [start, end) charging intervals per charger; no charger is ever double-booked."""

    def __init__(self, stations):
        self.intervals: dict[int, list[list[tuple[float, float]]]] = {s.id: [[] for _ in range(s.capacity)] for s in stations}

    def book(self, station: int, desired: float, duration: float) -> float:
        chargers = self.intervals[station]
        candidates = sorted({desired} | {e for ch in chargers for _, e in ch if e > desired})
        for c in candidates:
            for ch in chargers:
                if all(c + duration <= s + _EPS or e <= c + _EPS for s, e in ch):
                    ch.append((c, c + duration))
                    ch.sort()
                    return c
        raise AssertionError("unreachable: the last end always leaves a free charger")

    def prune(self, now: float) -> None:
        for chargers in self.intervals.values():
            for ch in chargers:
                ch[:] = [iv for iv in ch if iv[1] > now]


# -- vehicle motion ---------------------------------------------------------------------------


SERVICE, TO_STATION, WAITING, CHARGING = "service", "to_station", "waiting", "charging"


@dataclass
class Motion:
    """Simulator-side plan for one vehicle beyond its rider route."""

    phase: str = SERVICE
    target: Optional[int] = None  # node for rebalancing or the station trip
    station: Optional[int] = None
    slot: Optional[Slot] = None  # schedule slot being executed
    slot_start: float = -math.inf  # earliest time the charge may begin
    slot_length: float = math.inf  # longest the charge may last
    emergency: bool = False
    finished: Optional[Slot] = None  # slot whose charge just ended, for the owner to retire
    charge_start: float = 0.0
    charge_end: float = 0.0
    rate: float = 0.0  # charge per second while charging


def advance_vehicle(
    vehicle: VehicleState,
    dt: float,
    network,
    battery: BatteryModel,
    now: float = 0.0,
    motion: Optional[Motion] = None,
    book: Optional[ChargerBook] = None,
    drains: bool = True,
    on_idle: Optional[Callable[[VehicleState, Motion, float], None]] = None,
) -> list[Event]:
    """Move the vehicle from ``now`` to ``now + dt``.

    Follows rider stops first, then the motion target. Partial arcs carry
    over between calls. Discharge is per meter driven; charging adds
    ``eta`` per minute and stops at full or at the booked end.
    """
    motion = motion if motion is not None else Motion()
    t, end = now, now + dt
    events: list[Event] = []
    idle_checked = False
    while t < end:
        if motion.phase == WAITING:
            if motion.charge_start >= end:
                break
            t = motion.charge_start
            motion.phase = CHARGING
            vehicle.charging = True
            events.append(Event(t, "charge_start", vehicle.id, station=motion.station, node=vehicle.node, charge=vehicle.charge))
            continue
        if motion.phase == CHARGING:
            stop = min(end, motion.charge_end)
            vehicle.charge = min(1.0, vehicle.charge + motion.rate * (stop - t))
            t = stop
            if stop >= motion.charge_end:
                events.append(Event(t, "charge_end", vehicle.id, station=motion.station, node=vehicle.node, charge=vehicle.charge))
                _finish_charge(vehicle, motion)
                idle_checked = False
                continue
            break
        if vehicle.next_node is not None:
            arc = network.arc(vehicle.node, vehicle.next_node)
            remaining = arc.travel_time - vehicle.edge_elapsed
            step = min(remaining, end - t)
            meters = arc.distance * step / arc.travel_time if arc.travel_time > 0 else arc.distance
            if drains:
                vehicle.charge = discharge(battery, vehicle.charge, meters)
            vehicle.odometer += meters
            t += step
            if step >= remaining - _EPS:
                vehicle.node, vehicle.next_node, vehicle.edge_elapsed = vehicle.next_node, None, 0.0
            else:
                vehicle.edge_elapsed += step
                break
        # at a node
        while vehicle.route and vehicle.route[0].node == vehicle.node:
            stop = vehicle.route.pop(0)
            rider = vehicle.riders[stop.request]
            if stop.kind == PICKUP:
                rider.picked_up = t
                events.append(Event(t, "pickup", vehicle.id, stop.request, node=vehicle.node, charge=vehicle.charge))
            else:
                del vehicle.riders[stop.request]
                events.append(Event(t, "dropoff", vehicle.id, stop.request, node=vehicle.node, charge=vehicle.charge))
        if vehicle.route:
            dest = vehicle.route[0].node
        else:
            if on_idle is not None and not idle_checked and motion.phase == SERVICE:
                on_idle(vehicle, motion, t)
                idle_checked = True
            if motion.target is None:
                break
            if motion.target == vehicle.node:
                motion.target = None
                if motion.phase == TO_STATION:
                    events.extend(_arrive(vehicle, motion, t, battery, book))
                    continue
                break
            dest = motion.target
        path = network.path(vehicle.node, dest)
        vehicle.next_node = path[1]
        vehicle.edge_elapsed = 0.0
    return events


def _arrive(vehicle: VehicleState, motion: Motion, t: float, battery: BatteryModel, book: Optional[ChargerBook]):
    duration = charge_duration(battery, vehicle.charge)
    if not motion.emergency:
        duration = min(duration, motion.slot_length)
    desired = t if motion.emergency else max(t, motion.slot_start)
    start = book.book(motion.station, desired, duration) if book is not None else desired
    motion.phase = WAITING
    motion.charge_start, motion.charge_end = start, start + duration
    motion.rate = battery.eta / 60.0
    return [Event(t, "wait_start", vehicle.id, station=motion.station, node=vehicle.node, charge=vehicle.charge)]


def _finish_charge(vehicle: VehicleState, motion: Motion) -> None:
    vehicle.charging = False
    vehicle.charge_slot = None
    vehicle.accepting = True
    motion.finished = motion.slot
    motion.phase, motion.target, motion.station, motion.slot = SERVICE, None, None, None
    motion.emergency = False
    motion.slot_start, motion.slot_length = -math.inf, math.inf


# -- metrics --------------------------------------------------------------------------------


@dataclass
class Metrics:
    service_rate: float
    mean_wait_s: float
    mean_ride_s: float
    mean_delay_s: float
    abs_utilization: float
    rider_share_rate: float
    shared_rate: float
    total_distance_km: float
    mean_pre_charge_wait_s: float
    requests_made: int
    requests_served: int
    timeseries: list = field(default_factory=list)  # (t_s, charging_count, distance_km, rolling_service_rate)

    COLUMNS = ["Rate", "WT", "RT", "delay", "Abs", "rider", "shared", "distance_km", "pre_charge_wait_s", "requests", "served"]

    def row(self) -> list[float]:
        return [self.service_rate, self.mean_wait_s, self.mean_ride_s, self.mean_delay_s, self.abs_utilization,
                self.rider_share_rate, self.shared_rate, self.total_distance_km, self.mean_pre_charge_wait_s,
                self.requests_made, self.requests_served]


def _union_length(intervals) -> float:
    total, cur_s, cur_e = 0.0, None, None
    for s, e in sorted(intervals):
        if cur_e is None or s > cur_e:
            if cur_e is not None:
                total += cur_e - cur_s
            cur_s, cur_e = s, e
        else:
            cur_e = max(cur_e, e)
    if cur_e is not None:
        total += cur_e - cur_s
    return total


def _mean(xs) -> float:
    return float(sum(xs) / len(xs)) if xs else 0.0


def compute_metrics(
    log: EventLog,
    requests: Sequence[Request],
    fleet: Sequence[VehicleState],
    horizon: tuple[float, float],
    network=None,
    trace: Optional[Sequence[tuple]] = None,
) -> Metrics:
    """Day statistics from the event log.

    ``horizon`` is (day start, day end); only requests entering inside it
    count. ``trace`` rows are (time, vehicle, charge, odometer) at batch
    boundaries and feed the per-bucket distance.
    """
    lo, hi = horizon
    made = {r.id: r for r in requests if lo <= r.entry_time < hi}
    pick: dict[int, tuple[float, int]] = {}
    drop: dict[int, float] = {}
    for e in log:
        if e.request in made:
            if e.kind == "pickup":
                pick[e.request] = (e.time, e.vehicle)
            elif e.kind == "dropoff":
                drop[e.request] = e.time
    served = sorted(r for r in made if r in pick and r in drop)
    waits = [pick[r][0] - made[r].entry_time for r in served]
    rides = [drop[r] - pick[r][0] for r in served]
    delays = []
    if network is not None:
        delays = [drop[r] - made[r].entry_time - network.travel_time(made[r].origin, made[r].destination) for r in served]

    # in-vehicle intervals per vehicle, sorted by pickup
    per_vehicle: dict[int, list[tuple[float, float, int]]] = {}
    for r in served:
        per_vehicle.setdefault(pick[r][1], []).append((pick[r][0], drop[r], r))
    shared = set()
    busy = 0.0
    for v, ivs in per_vehicle.items():
        ivs.sort()
        busy += _union_length([(s, e) for s, e, _ in ivs])
        # sorted by pickup, so the scan can stop at the first later pickup past this drop-off
        for i, (s, e, r) in enumerate(ivs):
            for s2, e2, r2 in ivs[i + 1:]:
                if s2 >= e - _EPS:
                    break
                shared.add(r)
                shared.add(r2)
    rider_time = sum(rides)
    day = hi - lo
    charges = [e for e in log if e.kind in ("wait_start", "charge_start", "charge_end")]
    pre_waits = []
    waiting_since: dict[int, float] = {}
    for e in charges:
        if e.kind == "wait_start":
            waiting_since[e.vehicle] = e.time
        elif e.kind == "charge_start" and e.vehicle in waiting_since:
            pre_waits.append(e.time - waiting_since.pop(e.vehicle))
    distance = sum(v.odometer for v in fleet) / 1000.0
    return Metrics(
        service_rate=len(served) / len(made) if made else 1.0,
        mean_wait_s=_mean(waits),
        mean_ride_s=_mean(rides),
        mean_delay_s=_mean(delays),
        abs_utilization=rider_time / (len(fleet) * day) if fleet and day > 0 else 0.0,
        rider_share_rate=rider_time / busy if busy > 0 else 0.0,
        shared_rate=len(shared) / len(served) if served else 0.0,
        total_distance_km=distance,
        mean_pre_charge_wait_s=_mean(pre_waits),
        requests_made=len(made),
        requests_served=len(served),
        timeseries=_timeseries(log, made, set(served), horizon, trace),
    )


def _timeseries(log, made, served, horizon, trace):
    lo, hi = horizon
    n = int(math.ceil((hi - lo) / BUCKET - 1e-9))
    charging = [0.0] * n
    open_at: dict[int, float] = {}
    for e in log:
        if e.kind == "charge_start":
            open_at[e.vehicle] = e.time
        elif e.kind == "charge_end" and e.vehicle in open_at:
            _spread(charging, open_at.pop(e.vehicle), e.time, lo, n)
    for v, s in open_at.items():
        _spread(charging, s, hi, lo, n)
    odo_at: dict[float, float] = {}
    for t, _, _, odo in trace or ():
        odo_at[t] = odo_at.get(t, 0.0) + odo
    dist = [0.0] * n
    if odo_at:
        times = sorted(odo_at)
        for b in range(n):
            a, z = lo + b * BUCKET, min(hi, lo + (b + 1) * BUCKET)
            dist[b] = (_odo_at(times, odo_at, z) - _odo_at(times, odo_at, a)) / 1000.0
    made_b = [0] * n
    served_b = [0] * n
    for r in made.values():
        b = min(n - 1, int((r.entry_time - lo) // BUCKET))
        made_b[b] += 1
        served_b[b] += r.id in served
    return [
        (lo + b * BUCKET, charging[b] / BUCKET, dist[b], served_b[b] / made_b[b] if made_b[b] else 1.0)
        for b in range(n)
    ]


def _spread(buckets, s, e, lo, n):
    for b in range(n):
        a, z = lo + b * BUCKET, lo + (b + 1) * BUCKET
        overlap = min(e, z) - max(s, a)
        if overlap > 0:
            buckets[b] += overlap


def _odo_at(times, odo_at, t):
    # latest trace time at or before t
    k = bisect.bisect_right(times, t + _EPS) - 1
    return odo_at[times[k]] if k >= 0 else 0.0


# -- the simulation ---------------------------------------------------------------------------


@dataclass
class RunResult:
    metrics: Metrics
    log: EventLog
    fleet: list[VehicleState]
    trace: list[tuple]  # (time, vehicle, charge, odometer) at every batch boundary
    initial_charge: dict[int, float]
    lam: Optional[float] = None


class Simulation:
    def __init__(self, config: ScenarioConfig, network, requests: Sequence[Request]):
        config.validate()
        if config.method != "ICE" and not network.stations:
            raise ConfigError("charging methods need at least one station")
        self.cfg = config
        self.net = network
        self.requests = sorted((r for r in requests if config.day_start <= r.entry_time < config.day_end),
                               key=lambda r: (r.entry_time, r.id))
        self.battery = config.battery
        rng = np.random.default_rng(config.seed)
        nodes = list(network.nodes)
        self.fleet: dict[int, VehicleState] = {}
        for v in range(config.fleet_size):
            node = nodes[int(rng.integers(len(nodes)))]
            q = 1.0 if config.initial_charge == "FULL" else float(rng.uniform(0.0, 1.0))
            self.fleet[v] = VehicleState(v, node, charge=q, capacity=config.vehicle_capacity)
        self.initial_charge = {v: veh.charge for v, veh in self.fleet.items()}
        self.motion = {v: Motion() for v in self.fleet}
        self.book = ChargerBook(network.stations)
        self.queues = StationQueues(network.stations)
        self.schedule = ChargeSchedule()
        self.log = EventLog()
        self.trace: list[tuple] = []
        self.L = config.long_cadence
        self.lam = None
        self.requirement: list[float] = []
        if config.scheduled:
            self._setup_requirement()

    # -- availability requirement --

    def _setup_requirement(self) -> None:
        cfg = self.cfg
        n_periods = int(math.ceil((cfg.day_end - cfg.day_start) / self.L - 1e-9))
        n_blocks = int(math.ceil((cfg.day_end - cfg.day_start) / BUCKET - 1e-9))
        try:
            profile = demand_profile(self.requests, self.net.travel_time, BUCKET, cfg.day_start, n_blocks)
        except EmptyInput:
            profile = [0.0] * n_blocks
        lam = cfg.lam
        if lam is None:
            try:
                lam = calibrate_lambda(cfg.fleet_size, profile, self.battery, self.net.total_capacity,
                                       block=BUCKET, period_length=self.L)
            except Infeasible:
                lam = 1.0
        self.lam = lam
        periods = expand_profile(profile, BUCKET, self.L)[:n_periods]
        periods += [0.0] * (n_periods - len(periods))
        self.requirement = list(availability_requirement(cfg.fleet_size, periods, lam, self.L).values)

    # -- planners --

    def _period(self, t: float) -> float:
        return (t - self.cfg.day_start) / self.L

    def _plan_long(self, now: float) -> None:
        cfg = self.cfg
        p0 = int(math.floor(self._period(now) + _EPS))
        H_total = len(self.requirement)
        p_end = H_total if cfg.long_window is None else min(H_total, p0 + int(math.ceil(cfg.long_window / self.L)))
        if p_end - p0 < 1:
            return
        q_step = self.battery.q_est * self.L / 60.0
        eta_step = self.battery.eta * self.L / 60.0
        vehicles, release, charge = [], [], []
        started: dict[int, list[Slot]] = {}
        previous = ChargeSchedule()
        for v in sorted(self.fleet):
            veh, mo = self.fleet[v], self.motion[v]
            slots = self.schedule.slots(v)
            if mo.phase != SERVICE or any(s.start < p0 for s in slots):
                # busy with (or late for) a charge; its next one is planned once it is back in service
                if slots:
                    started[v] = slots
                continue
            for s in slots:
                previous.add(v, Slot(s.start - p0, s.duration, s.station, s.locked))
            e = release_date(veh, self.net, cfg.buffer_D, now)
            _, _, q = predicted_drop_off(veh, self.net, self.battery, now)
            release.append(int(math.ceil(self._period(e) - _EPS)) - p0)
            charge.append(max(0.0, q))
            vehicles.append(v)
        if not vehicles:
            return
        instance = LongInstance(
            period_length=self.L,
            requirement=[float(x) for x in self.requirement[p0:p_end]],
            capacity=self.net.total_capacity,
            vehicles=vehicles,
            release=release,
            initial_charge=charge,
            eta=eta_step,
            q_est=q_step,
            frozen_before=max(0, int(math.ceil(self._period(now + cfg.T_SL) - _EPS)) - p0),
        )
        solver = solve_long_exact if cfg.method == "MILP" else solve_long_heuristic
        planned = solver(instance, previous)
        merged = ChargeSchedule(started)
        for v, slots in planned.items():
            for s in slots:
                merged.add(v, Slot(s.start + p0, s.duration, s.station, s.locked))
        self.schedule = merged
        self._sync_slots()

    def _plan_short(self, now: float) -> None:
        cfg = self.cfg
        fleet = {v: veh for v, veh in self.fleet.items() if self.motion[v].phase in (SERVICE, TO_STATION)
                 and not self.motion[v].emergency}
        inst = build_short_instance(self.schedule, fleet, self.net, self.battery, now, cfg.T_SL, cfg.delta,
                                    period_length=self.L, origin=cfg.day_start)
        if not inst.jobs:
            return
        try:
            assignment = solve_short_exact(inst)
        except Infeasible:
            newest = {j.vehicle for j in inst.jobs if j.pinned is None}
            assignment, _ = solve_short_fallback(inst, newest)
        for job in inst.jobs:
            s = assignment.get(job.vehicle)
            if s is None:
                continue
            old = next(x for x in self.schedule.slots(job.vehicle) if x.start == job.start)
            if old.station == s:
                continue
            new = Slot(old.start, old.duration, s, old.locked)
            self.schedule.replace(job.vehicle, old, new)
            mo = self.motion[job.vehicle]
            if mo.slot == old:
                mo.slot, mo.station = new, s
                mo.target = self.net.station(s).node
        self._sync_slots()

    def _sync_slots(self) -> None:
        for v, veh in self.fleet.items():
            mo = self.motion[v]
            if mo.phase in (WAITING, CHARGING):
                continue
            slots = self.schedule.slots(v)
            if not slots:
                veh.charge_slot = None
                continue
            s = mo.slot if mo.slot is not None and mo.slot in slots else slots[0]
            veh.charge_slot = ChargeSlot(self.cfg.day_start + s.start * self.L, s.duration * self.L, s.station)

    # -- heading to stations --

    def _station_for(self, veh: VehicleState, node: int) -> int:
        slot = veh.charge_slot
        if slot is not None and slot.station is not None:
            return slot.station
        return self.net.nearest_station(node).id

    def _on_idle(self, veh: VehicleState, mo: Motion, t: float, horizon: float) -> list[Event]:
        """Send an idle vehicle to charge when its slot is due or its battery is empty."""
        if self.cfg.method == "ICE" or mo.phase != SERVICE or veh.route or veh.riders:
            return []
        out = []
        if veh.charge <= 0.0:
            out.append(Event(t, "shortfall", veh.id, node=veh.node, charge=veh.charge))
            if self.cfg.method == "BENCHMARK":
                # the same greedy reservation the threshold rule would make at the next batch
                veh.charge_slot = None
                (_, s, start), = benchmark_step([veh], self.net, t, self.cfg.benchmark, self.queues, self.battery)
                self._head(veh, mo, s)
                mo.slot_start, mo.slot_length = start, math.inf
            elif veh.charge_slot is not None and veh.charge_slot.start <= t + self.cfg.T_SL:
                # relabeled zero is a safety margin: go and wait for the planned charge
                self._head(veh, mo, self._station_for(veh, veh.node))
            else:
                self._head(veh, mo, self._station_for(veh, veh.node), emergency=True)
            return out
        if not self.cfg.scheduled or veh.charge_slot is None:
            return out
        s = self._station_for(veh, veh.node)
        lead = self.net.travel_time(veh.node, self.net.station(s).node)
        if veh.charge_slot.start - lead < horizon:
            self._head(veh, mo, s)
        return out

    def _head(self, veh: VehicleState, mo: Motion, station: int, emergency: bool = False) -> None:
        mo.phase = TO_STATION
        mo.station = station
        mo.target = self.net.station(station).node
        mo.emergency = emergency
        veh.accepting = False
        if emergency or veh.charge_slot is None:
            mo.slot = None
            mo.slot_start, mo.slot_length = -math.inf, math.inf
            # an emergency charge replaces the planned one
            for s in self.schedule.slots(veh.id):
                self.schedule.remove(veh.id, s)
            veh.charge_slot = None
            return
        slots = self.schedule.slots(veh.id)
        mo.slot = slots[0] if slots else None
        mo.slot_start = veh.charge_slot.start
        mo.slot_length = veh.charge_slot.duration

    # -- one batch --

    def _assign(self, now: float, pending: list[Request]) -> list[Request]:
        """Give pending requests to vehicles; returns those left without one."""
        cfg = self.cfg
        if not pending:
            return []
        vehicles = [self.fleet[v] for v in sorted(self.fleet)]
        graph = build_shareability_graph(vehicles, pending, cfg.qos, now, self.net, cfg.buffer_D,
                                         cfg.nearest_vehicle_cap)
        trips = enumerate_trips(graph, vehicles, pending, cfg.qos, now, self.net,
                                max_riders=cfg.max_riders_per_trip, buffer_D=cfg.buffer_D, trip_cap=cfg.trip_cap)
        chosen, unassigned = assign_trips(trips, pending, vehicles, REJECT_PENALTY)
        by_id = {r.id: r for r in pending}
        for trip in chosen:
            veh = self.fleet[trip.vehicle]
            for r in sorted(trip.riders):
                req = by_id[r]
                veh.riders[r] = Rider(req, self.net.travel_time(req.origin, req.destination))
            veh.route = list(trip.route)
            self.motion[veh.id].target = None
        return unassigned

    def _snapshot(self, t: float) -> None:
        for v in sorted(self.fleet):
            veh = self.fleet[v]
            self.trace.append((t, v, veh.charge, veh.odometer))

    def run(self) -> RunResult:
        cfg = self.cfg
        B = cfg.batch
        short_every = int(round(cfg.short_cadence / B))
        long_every = int(round(cfg.long_cadence / B))
        queue = list(self.requests)
        qi = 0
        pending: list[Request] = []
        k = 0
        t = cfg.day_start
        self._snapshot(t)
        while True:
            events: list[Event] = []
            open_day = t < cfg.day_end
            # requests from the last batch of the day still get one assignment attempt
            while qi < len(queue) and queue[qi].entry_time <= t:
                pending.append(queue[qi])
                qi += 1
            if not open_day and not pending and all(not v.riders for v in self.fleet.values()):
                break
            self.book.prune(t - B)
            if open_day and cfg.scheduled:
                if k % long_every == 0:
                    self._plan_long(t)
                if k % short_every == 0:
                    self._plan_short(t)
            if cfg.method == "BENCHMARK":
                in_service = [v for v in self.fleet.values() if self.motion[v.id].phase == SERVICE]
                for vid, s, start in benchmark_step(in_service, self.net, t, cfg.benchmark, self.queues, self.battery):
                    veh, mo = self.fleet[vid], self.motion[vid]
                    mo.phase, mo.station, mo.target = TO_STATION, s, self.net.station(s).node
                    mo.slot_start, mo.slot_length = start, math.inf
            unassigned = self._assign(t, pending)
            keep = []
            for r in unassigned:
                # still pickable at the next batch?
                if open_day and t + B <= r.entry_time + cfg.qos.max_wait:
                    keep.append(r)
                else:
                    events.append(Event(t, "reject", request=r.id, node=r.origin))
            pending = keep
            # charging decisions for idle vehicles, then rebalancing of the rest
            for v in sorted(self.fleet):
                events.extend(self._on_idle(self.fleet[v], self.motion[v], t, t + B))
            if open_day and unassigned:
                idle = [veh for v, veh in sorted(self.fleet.items())
                        if self.motion[v].phase == SERVICE and veh.accepting and not veh.riders and not veh.route]
                for vid, node in rebalance(idle, unassigned, self.net, t):
                    if self.fleet[vid].node != node or self.fleet[vid].next_node is not None:
                        self.motion[vid].target = node
                        events.append(Event(t, "rebalance", vid, node=node))
            for v in sorted(self.fleet):
                veh, mo = self.fleet[v], self.motion[v]
                events.extend(advance_vehicle(
                    veh, B, self.net, self.battery, t, mo, self.book,
                    drains=cfg.method != "ICE",
                    on_idle=lambda vv, mm, tt: events.extend(self._on_idle(vv, mm, tt, tt + B)),
                ))
                if mo.finished is not None:
                    if mo.finished in self.schedule.slots(v):
                        self.schedule.remove(v, mo.finished)
                    mo.finished = None
            t += B
            k += 1
            self.log.extend(events)
            self._snapshot(t)
        fleet = [self.fleet[v] for v in sorted(self.fleet)]
        metrics = compute_metrics(self.log, self.requests, fleet, (cfg.day_start, cfg.day_end), self.net, self.trace)
        return RunResult(metrics, self.log, fleet, self.trace, self.initial_charge, self.lam)


def run(config: ScenarioConfig, network, requests: Sequence[Request]) -> RunResult:
    """Simulate one day; returns metrics, the event log and the final fleet."""
    return Simulation(config, network, requests).run()


# -- files ----------------------------------------------------------------------------------


def write_metrics(rows: Sequence[tuple[str, int, Metrics]], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["method", "seed"] + Metrics.COLUMNS)
        for method, seed, m in rows:
            w.writerow([method, seed] + [_num(x) for x in m.row()])


def write_timeseries(metrics: Metrics, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t_s", "charging_count", "distance_km", "rolling_service_rate"])
        for row in metrics.timeseries:
            w.writerow([_num(x) for x in row])


def _num(x) -> str:
    if isinstance(x, int):
        return str(x)
    return _fmt(x)
