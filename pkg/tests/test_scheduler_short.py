import itertools
import math
import random

import pytest

from evpool.battery import BatteryModel
from evpool.core import ChargeSlot, Stop, VehicleState, DROPOFF, PICKUP
from evpool.errors import Infeasible, ValidationError
from evpool.network import Station, generate_grid
from evpool.scheduler_long import ChargeSchedule, Slot
from evpool.scheduler_short import (
    ShortInstance,
    ShortJob,
    assignment_cost,
    build_short_instance,
    clique_checkpoints,
    is_feasible,
    solve_short_exact,
    solve_short_fallback,
    station_loads,
)


def brute_force(inst):
    """Cheapest feasible assignment over every station combination, checking every period."""
    best = math.inf
    opts = [sorted(j.cost) for j in inst.jobs]
    for combo in itertools.product(*opts):
        a = {j.vehicle: s for j, s in zip(inst.jobs, combo)}
        if is_feasible(inst, a):
            best = min(best, assignment_cost(inst, a))
    return best


def rand_instance(rng, jobs=6, stations=3, periods=8):
    n = rng.randint(1, jobs)
    S = rng.randint(1, stations)
    cap = {s: rng.randint(1, 2) for s in range(S)}
    out = []
    for v in range(n):
        start = rng.randrange(periods)
        dur = rng.randint(1, periods - start)
        reach = [s for s in range(S) if rng.random() < 0.7] or [rng.randrange(S)]
        out.append(ShortJob(v, start, dur, {s: float(rng.randint(0, 9)) for s in reach}))
    return ShortInstance(out, cap)


def test_one_job_cheaper_station():
    inst = ShortInstance([ShortJob(1, 0, 2, {0: 100.0, 1: 200.0})], {0: 1, 1: 1})
    assert solve_short_exact(inst) == {1: 0}


def test_overlapping_jobs_split():
    # both can use the shared station 2; each also has a private station
    jobs = [ShortJob(1, 0, 3, {0: 50.0, 2: 10.0}), ShortJob(2, 1, 3, {1: 30.0, 2: 20.0})]
    inst = ShortInstance(jobs, {0: 1, 1: 1, 2: 1})
    a = solve_short_exact(inst)
    # options: (2,1)=40, (0,2)=70, (0,1)=80; (2,2) double-books
    assert a == {1: 2, 2: 1}
    assert assignment_cost(inst, a) == brute_force(inst) == 40.0


def test_empty_instance():
    assert solve_short_exact(ShortInstance([], {0: 1})) == {}


def test_infeasible_raises():
    jobs = [ShortJob(1, 0, 2, {0: 1.0}), ShortJob(2, 1, 2, {0: 1.0})]
    with pytest.raises(Infeasible):
        solve_short_exact(ShortInstance(jobs, {0: 1}))
    with pytest.raises(Infeasible):
        solve_short_exact(ShortInstance([ShortJob(1, 0, 1, {})], {0: 1}))


def test_instance_validation():
    with pytest.raises(ValidationError):
        ShortJob(1, 0, 0, {0: 1.0})
    with pytest.raises(ValidationError):
        ShortJob(1, 0, 1, {0: 1.0}, pinned=3)
    with pytest.raises(ValidationError):
        ShortInstance([ShortJob(1, 0, 1, {5: 1.0})], {0: 1})
    with pytest.raises(ValidationError):
        ShortInstance([ShortJob(1, 0, 1, {0: 1.0}), ShortJob(1, 2, 1, {0: 1.0})], {0: 1})


def test_exact_matches_enumeration():
    rng = random.Random(0)
    for _ in range(500):
        inst = rand_instance(rng)
        ref = brute_force(inst)
        if ref == math.inf:
            with pytest.raises(Infeasible):
                solve_short_exact(inst)
            continue
        a = solve_short_exact(inst)
        assert is_feasible(inst, a)
        assert assignment_cost(inst, a) == pytest.approx(ref)


def test_exact_is_deterministic():
    rng = random.Random(7)
    for _ in range(50):
        inst = rand_instance(rng)
        try:
            a = solve_short_exact(inst)
        except Infeasible:
            continue
        assert solve_short_exact(inst) == a
        shuffled = ShortInstance(list(reversed(inst.jobs)), inst.capacity)
        assert solve_short_exact(shuffled) == a


def _iv(a, b):
    return ShortJob(0, a, b - a, {0: 0.0})


def test_checkpoints_disjoint():
    assert clique_checkpoints([_iv(0, 2), _iv(2, 4), _iv(5, 6)]) == [0, 2, 5]


def test_checkpoints_nested():
    pts = clique_checkpoints([_iv(0, 10), _iv(2, 8), _iv(4, 6)])
    assert len(pts) == 1 and 4 <= pts[0] < 6


def test_checkpoints_equivalent_to_all_periods():
    rng = random.Random(2)
    for _ in range(200):
        inst = rand_instance(rng, jobs=6, stations=2, periods=10)
        pts = clique_checkpoints(inst.jobs)
        for combo in itertools.product(*[sorted(j.cost) for j in inst.jobs]):
            a = {j.vehicle: s for j, s in zip(inst.jobs, combo)}
            at_points = all(
                sum(1 for j in inst.jobs if a[j.vehicle] == s and j.start <= t < j.end) <= inst.capacity[s]
                for t in pts for s in inst.capacity
            )
            assert at_points == is_feasible(inst, a)


def test_fallback_defers_stuck_new_vehicle():
    jobs = [ShortJob(1, 0, 3, {0: 5.0}), ShortJob(2, 1, 2, {0: 1.0})]
    inst = ShortInstance(jobs, {0: 1})
    with pytest.raises(Infeasible):
        solve_short_exact(inst)
    a, deferred = solve_short_fallback(inst, {2})
    assert a == {1: 0} and deferred == {2}


def test_fallback_keeps_older_jobs_optimal():
    rng = random.Random(4)
    checked = 0
    for _ in range(300):
        inst = rand_instance(rng)
        newest = {j.vehicle for j in inst.jobs if j.vehicle % 3 == 0}
        older = ShortInstance([j for j in inst.jobs if j.vehicle not in newest], inst.capacity)
        ref = brute_force(older)
        if ref == math.inf:
            continue
        a, deferred = solve_short_fallback(inst, newest)
        assert deferred <= newest
        loads = station_loads(inst, a)
        assert all(n <= inst.capacity[s] for (s, _), n in loads.items())
        old_cost = sum(j.cost[a[j.vehicle]] for j in older.jobs)
        assert old_cost == pytest.approx(ref)
        checked += 1
    assert checked > 100


# -- building instances from the fleet ---------------------------------------------------


@pytest.fixture
def net():
    g = generate_grid(4, 4, edge_time=60, edge_distance=500)
    return g.with_stations([Station(0, 0, 1), Station(1, 15, 2)])


def test_build_empty_window(net):
    sched = ChargeSchedule({1: [Slot(100, 2)]})
    fleet = {1: VehicleState(1, 5)}
    inst = build_short_instance(sched, fleet, net, BatteryModel(), now=0, T_SL=2700, delta=600)
    assert inst.jobs == []


def test_build_pins_previous_station(net):
    # vehicle at node 15 with a slot at t=120: station 0 is 360 s away, so only the pin keeps it
    sched = ChargeSchedule({1: [Slot(2, 2, station=0)]})
    fleet = {1: VehicleState(1, 15)}
    inst = build_short_instance(sched, fleet, net, BatteryModel(), now=0, T_SL=2700, delta=600, period_length=60)
    (job,) = inst.jobs
    assert job.pinned == 0
    assert job.reachable == {0, 1}
    assert job.cost[0] == 360 and job.cost[1] == 0


def test_build_reachability_matches_direct_check(net):
    rng = random.Random(5)
    b = BatteryModel()
    for _ in range(50):
        node = rng.randrange(16)
        stops = []
        if rng.random() < 0.6:
            a, c = rng.sample(range(16), 2)
            stops = [Stop(PICKUP, 1, a), Stop(DROPOFF, 1, c)]
        veh = VehicleState(1, node, charge=1.0, route=stops)
        start = rng.randint(0, 20)
        now = rng.uniform(0, 300)
        sched = ChargeSchedule({1: [Slot(start, 1)]})
        inst = build_short_instance(sched, {1: veh}, net, b, now=now, T_SL=2700, delta=600, period_length=60)
        if start * 60 < now:
            assert inst.jobs == []
            continue
        t_c, n = now, node
        for s in stops:
            t_c += net.travel_time(n, s.node)
            n = s.node
        expected = {st.id for st in net.stations if net.travel_time(n, st.node) <= start * 60 - t_c}
        (job,) = inst.jobs
        assert job.reachable == expected
        for s in expected:
            assert job.cost[s] == net.travel_time(n, net.station(s).node)


def test_build_drops_stations_beyond_charge(net):
    b = BatteryModel(range_km=1.0)  # 1 km of range
    veh = VehicleState(1, 5, charge=0.5)  # 500 m left
    sched = ChargeSchedule({1: [Slot(30, 1)]})
    inst = build_short_instance(sched, {1: veh}, net, b, now=0, T_SL=2700, delta=600, period_length=60)
    # node 5 is 1000 m from node 0 and 2000 m from node 15
    assert inst.jobs[0].reachable == frozenset()
    inst = build_short_instance(sched, {1: veh}, net, b, now=0, T_SL=2700, delta=600, period_length=60, buffer=0.5)
    assert inst.jobs[0].reachable == {0}
