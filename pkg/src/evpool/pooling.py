"""Batch ride-pooling assignment.

One batch runs: shareability graph, trip enumeration, an exact trip
assignment, then rebalancing of idle vehicles toward rejected requests.
Every vehicle keeps the riders it has already accepted; a trip only adds new
riders on top of them.
"""

from __future__ import annotations

import heapq
import itertools
import math
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from .core import DROPOFF, PICKUP, QosPolicy, Request, Rider, Stop, VehicleState
from .errors import InvalidArgument

NEAREST_VEHICLE_CAP = 30
TRIP_CAP = 2000
REJECT_PENALTY = 86400.0
EXACT_MATCHING_LIMIT = 200
_EPS = 1e-9


@dataclass(frozen=True)
class Trip:
    vehicle: int
    riders: frozenset
    route: tuple
    cost: float  # extra travel time over the vehicle's committed-only route

    @property
    def key(self):
        return (self.vehicle, tuple(sorted(self.riders)))


@dataclass
class ShareabilityGraph:
    rv_edges: set = field(default_factory=set)  # (vehicle id, request id)
    rr_edges: set = field(default_factory=set)  # (smaller request id, larger request id)

    def shareable(self, a: int, b: int) -> bool:
        return (min(a, b), max(a, b)) in self.rr_edges


@dataclass
class PoolingContext:
    """Everything route checks need besides the vehicle and riders."""

    network: object
    qos: QosPolicy = field(default_factory=QosPolicy)
    buffer_D: float = 900.0


# -- constrained routing ------------------------------------------------------------------


def _charge_ok(network, buffer_D: float, slot, node: int, t: float) -> bool:
    if slot is None:
        return True
    if slot.station is not None:
        arrive = t + network.travel_time(node, network.station(slot.station).node)
    else:
        arrive = t + max(network.travel_time(node, network.nearest_station(node).node), buffer_D)
    return arrive <= slot.start + _EPS


def _search_route(vehicle: VehicleState, riders: Mapping[int, Rider], network, qos: QosPolicy,
                  now: float, buffer_D: float, enforce_charge: bool) -> Optional[tuple[list[Stop], float]]:
    """Shortest feasible stop order serving ``riders`` from the vehicle's anchor."""
    start, t0 = vehicle.anchor(network, now)
    ids = sorted(riders)
    n = len(ids)
    pick_node = [riders[r].request.origin for r in ids]
    drop_node = [riders[r].request.destination for r in ids]
    pick_dl = [riders[r].pickup_deadline(qos) for r in ids]
    drop_dl = [riders[r].dropoff_deadline(qos) for r in ids]
    onboard0 = [riders[r].picked_up is not None for r in ids]
    load0 = sum(onboard0)
    if load0 > vehicle.capacity:
        return None
    slot = vehicle.charge_slot if enforce_charge else None
    tt = network.travel_time

    best_time = [math.inf]
    best_seq: list = [None]
    seq: list[tuple[int, int]] = []
    picked = list(onboard0)
    dropped = [False] * n

    def viable(node: int, t: float) -> bool:
        # every outstanding stop must still be reachable directly before its deadline
        for i in range(n):
            if dropped[i]:
                continue
            if not picked[i] and t + tt(node, pick_node[i]) > pick_dl[i] + _EPS:
                return False
            if t + tt(node, drop_node[i]) > drop_dl[i] + _EPS:
                return False
        return True

    # earliest arrival per (node, picked, dropped); arriving later at the same state cannot do better
    seen: dict[tuple[int, int, int], float] = {}
    mask = [0, 0]

    def dfs(node: int, t: float, load: int, left: int) -> None:
        if t - t0 >= best_time[0] - _EPS:
            return
        key = (node, mask[0], mask[1])
        if seen.get(key, math.inf) <= t + _EPS:
            return
        seen[key] = t
        if left == 0:
            if _charge_ok(network, buffer_D, slot, node, t):
                best_time[0] = t - t0
                best_seq[0] = list(seq)
            return
        if slot is not None and t > slot.start + _EPS:
            return
        if not viable(node, t):
            return
        for i in range(n):
            if dropped[i]:
                continue
            if not picked[i]:
                if load >= vehicle.capacity:
                    continue
                nxt = pick_node[i]
                arrive = t + tt(node, nxt)
                if arrive > pick_dl[i] + _EPS:
                    continue
                picked[i] = True
                mask[0] ^= 1 << i
                seq.append((i, 0))
                dfs(nxt, arrive, load + 1, left - 1)
                seq.pop()
                mask[0] ^= 1 << i
                picked[i] = False
            else:
                nxt = drop_node[i]
                arrive = t + tt(node, nxt)
                if arrive > drop_dl[i] + _EPS:
                    continue
                dropped[i] = True
                mask[1] ^= 1 << i
                seq.append((i, 1))
                dfs(nxt, arrive, load - 1, left - 1)
                seq.pop()
                mask[1] ^= 1 << i
                dropped[i] = False

    stops_left = sum(1 if onboard0[i] else 2 for i in range(n))
    dfs(start, t0, load0, stops_left)
    if best_seq[0] is None:
        return None
    route = [
        Stop(PICKUP, ids[i], pick_node[i]) if k == 0 else Stop(DROPOFF, ids[i], drop_node[i])
        for i, k in best_seq[0]
    ]
    return route, best_time[0]


def committed_route(vehicle: VehicleState, ctx: PoolingContext, now: float) -> tuple[list[Stop], float]:
    """Best route for the vehicle's accepted riders alone; keeps the current route if none is found."""
    found = _search_route(vehicle, vehicle.riders, ctx.network, ctx.qos, now, ctx.buffer_D, True)
    if found is None:
        found = _search_route(vehicle, vehicle.riders, ctx.network, ctx.qos, now, ctx.buffer_D, False)
    if found is None:
        node, t = vehicle.anchor(ctx.network, now)
        total = 0.0
        for s in vehicle.route:
            total += ctx.network.travel_time(node, s.node)
            node = s.node
        return list(vehicle.route), total
    return found


def solve_ctsp(
    vehicle: VehicleState,
    new_riders: Sequence[Request],
    qos: QosPolicy,
    now: float,
    network,
    buffer_D: float = 900.0,
    base: Optional[float] = None,
) -> Optional[tuple[list[Stop], float]]:
    """Cheapest stop order adding ``new_riders`` to the vehicle's accepted riders.

    Returns (route, extra travel time) or None when no order meets every
    pickup deadline, delay budget, capacity prefix and charging release.
    ``base`` is the committed-only route time, computed when omitted.
    """
    riders = dict(vehicle.riders)
    for r in new_riders:
        if r.id in riders:
            raise InvalidArgument(f"request {r.id} is already with vehicle {vehicle.id}")
        riders[r.id] = Rider(r, network.travel_time(r.origin, r.destination))
    found = _search_route(vehicle, riders, network, qos, now, buffer_D, True)
    if found is None:
        return None
    if base is None:
        base = committed_route(vehicle, PoolingContext(network, qos, buffer_D), now)[1] if vehicle.riders else 0.0
    route, total = found
    return route, total - base


# -- shareability ----------------------------------------------------------------------------


def _ideal_pair(a: Request, b: Request, network, qos: QosPolicy, now: float) -> bool:
    # a roomy vehicle waiting at whichever origin is served first
    for first in (a, b):
        v = VehicleState(id=-1, node=first.origin, capacity=2)
        if _search_route(v, {a.id: Rider(a, network.travel_time(a.origin, a.destination)),
                             b.id: Rider(b, network.travel_time(b.origin, b.destination))},
                         network, qos, now, 0.0, False) is not None:
            return True
    return False


def build_shareability_graph(
    vehicles: Sequence[VehicleState],
    requests: Sequence[Request],
    qos: QosPolicy,
    now: float,
    network,
    buffer_D: float = 900.0,
    nearest_vehicle_cap: int = NEAREST_VEHICLE_CAP,
    bases: Optional[Mapping[int, float]] = None,
) -> ShareabilityGraph:
    """rv edges for the nearest accepting vehicles per request; rr edges for pairs an ideal vehicle could share."""
    g = ShareabilityGraph()
    accepting = [v for v in vehicles if v.accepting]
    anchors = {v.id: v.anchor(network, now) for v in accepting}
    bases = dict(bases or {})
    for r in requests:
        order = sorted(accepting, key=lambda v: (anchors[v.id][1] + network.travel_time(anchors[v.id][0], r.origin), v.id))
        for v in order[:nearest_vehicle_cap]:
            if v.id not in bases:
                bases[v.id] = committed_route(v, PoolingContext(network, qos, buffer_D), now)[1] if v.riders else 0.0
            if solve_ctsp(v, [r], qos, now, network, buffer_D, bases[v.id]) is not None:
                g.rv_edges.add((v.id, r.id))
    for a, b in itertools.combinations(sorted(requests, key=lambda r: r.id), 2):
        if _ideal_pair(a, b, network, qos, now):
            g.rr_edges.add((a.id, b.id))
    return g


def enumerate_trips(
    graph: ShareabilityGraph,
    vehicles: Sequence[VehicleState],
    requests: Sequence[Request],
    qos: QosPolicy,
    now: float,
    network,
    max_riders: int = 10,
    buffer_D: float = 900.0,
    trip_cap: int = TRIP_CAP,
) -> list[Trip]:
    """Feasible trips grown one rider at a time from feasible smaller trips."""
    if max_riders < 1:
        raise InvalidArgument("max_riders must be at least 1")
    by_id = {r.id: r for r in requests}
    out: list[Trip] = []
    ctx = PoolingContext(network, qos, buffer_D)
    for v in sorted(vehicles, key=lambda v: v.id):
        cands = sorted(r for (vid, r) in graph.rv_edges if vid == v.id and r in by_id)
        if not cands:
            continue
        base = committed_route(v, ctx, now)[1] if v.riders else 0.0
        room = min(max_riders, v.capacity)
        level: dict[tuple, Trip] = {}
        for r in cands:
            found = solve_ctsp(v, [by_id[r]], qos, now, network, buffer_D, base)
            if found is not None:
                level[(r,)] = Trip(v.id, frozenset((r,)), tuple(found[0]), found[1])
        made = list(level.values())
        size = 1
        while level and size < room and len(made) < trip_cap:
            nxt: dict[tuple, Trip] = {}
            for key in sorted(level):
                for r in cands:
                    if r <= key[-1]:
                        continue
                    if not all(graph.shareable(r, x) for x in key):
                        continue
                    new = key + (r,)
                    # every smaller sub-trip must already be feasible
                    if size >= 2 and any(new[:i] + new[i + 1:] not in level for i in range(len(new) - 1)):
                        continue
                    found = solve_ctsp(v, [by_id[x] for x in new], qos, now, network, buffer_D, base)
                    if found is not None:
                        nxt[new] = Trip(v.id, frozenset(new), tuple(found[0]), found[1])
                        if len(made) + len(nxt) >= trip_cap:
                            break
                if len(made) + len(nxt) >= trip_cap:
                    break
            made.extend(nxt[k] for k in sorted(nxt))
            level = nxt
            size += 1
        out.extend(made[:trip_cap])
    return out


# -- assignment --------------------------------------------------------------------------------


def _components(trips: Sequence[Trip]) -> list[list[Trip]]:
    # vehicles linked through shared candidate requests
    parent: dict = {}

    def find(x):
        while parent.setdefault(x, x) != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for t in trips:
        for r in t.riders:
            parent[find(("v", t.vehicle))] = find(("r", r))
    groups: dict = {}
    for t in trips:
        groups.setdefault(find(("v", t.vehicle)), []).append(t)
    return [groups[k] for k in sorted(groups, key=lambda k: min(t.vehicle for t in groups[k]))]


def _assign_component(trips: Sequence[Trip], penalty: float) -> list[Trip]:
    vehicles = sorted({t.vehicle for t in trips})
    per_vehicle = {v: sorted((t for t in trips if t.vehicle == v), key=lambda t: (t.cost, tuple(sorted(t.riders))))
                   for v in vehicles}
    reqs = sorted({r for t in trips for r in t.riders})
    # cheapest per-rider share of any trip covering r from vehicle level d onward
    share: list[dict[int, float]] = [dict() for _ in range(len(vehicles) + 1)]
    for d in range(len(vehicles) - 1, -1, -1):
        share[d] = dict(share[d + 1])
        for t in per_vehicle[vehicles[d]]:
            c = t.cost / len(t.riders)
            for r in t.riders:
                if c < share[d].get(r, math.inf):
                    share[d][r] = c

    def bound(d: int, cost: float, covered: frozenset) -> float:
        extra = 0.0
        for r in reqs:
            if r not in covered:
                extra += min(penalty, share[d].get(r, math.inf))
        return cost + extra

    counter = itertools.count()
    heap = [(bound(0, 0.0, frozenset()), 0, next(counter), 0.0, frozenset(), ())]
    while heap:
        b, negd, _, cost, covered, chosen = heapq.heappop(heap)
        d = -negd
        if d == len(vehicles):
            return [t for t in chosen if t is not None]
        v = vehicles[d]
        options = [None] + [t for t in per_vehicle[v] if not (t.riders & covered)]
        for t in options:
            c2 = cost + (t.cost if t else 0.0)
            cov2 = covered | t.riders if t else covered
            nb = bound(d + 1, c2, cov2)
            if d + 1 == len(vehicles):
                nb = c2 + penalty * (len(reqs) - len(cov2))
            heapq.heappush(heap, (nb, -(d + 1), next(counter), c2, cov2, chosen + (t,)))
    return []


def assign_trips(
    trips: Sequence[Trip],
    requests: Sequence[Request],
    vehicles: Sequence[VehicleState],
    penalty: float = REJECT_PENALTY,
) -> tuple[list[Trip], list[Request]]:
    """At most one trip per vehicle, each request in at most one trip, rejection costs ``penalty``.

    Exact best-first branch-and-bound, run separately on groups of vehicles
    that share no candidate request.
    """
    known = {v.id for v in vehicles}
    usable = [t for t in trips if t.vehicle in known]
    chosen: list[Trip] = []
    for comp in _components(usable):
        chosen.extend(_assign_component(comp, penalty))
    chosen.sort(key=lambda t: t.vehicle)
    served = {r for t in chosen for r in t.riders}
    rejected = [r for r in requests if r.id not in served]
    return chosen, rejected


def assignment_objective(chosen: Sequence[Trip], requests: Sequence[Request], penalty: float = REJECT_PENALTY) -> float:
    served = {r for t in chosen for r in t.riders}
    return sum(t.cost for t in chosen) + penalty * sum(1 for r in requests if r.id not in served)


# -- rebalancing --------------------------------------------------------------------------------


def rebalance(
    idle_vehicles: Sequence[VehicleState],
    rejected: Sequence[Request],
    network,
    now: float = 0.0,
    exact_limit: int = EXACT_MATCHING_LIMIT,
) -> list[tuple[int, int]]:
    """Minimum total travel time one-to-one matching of idle vehicles to rejected origins."""
    if not idle_vehicles or not rejected:
        return []
    vs = sorted(idle_vehicles, key=lambda v: v.id)
    rs = sorted(rejected, key=lambda r: r.id)
    anchors = [v.anchor(network, now)[0] for v in vs]
    cost = np.array([[network.travel_time(a, r.origin) for r in rs] for a in anchors])
    if len(vs) <= exact_limit and len(rs) <= exact_limit:
        rows, cols = linear_sum_assignment(cost)
        pairs = list(zip(rows.tolist(), cols.tolist()))
    else:
        pairs = []
        used_v, used_r = set(), set()
        for flat in np.argsort(cost, axis=None, kind="stable"):
            i, j = divmod(int(flat), len(rs))
            if i in used_v or j in used_r:
                continue
            pairs.append((i, j))
            used_v.add(i)
            used_r.add(j)
            if len(pairs) == min(len(vs), len(rs)):
                break
    return sorted((vs[i].id, rs[j].origin) for i, j in pairs)
