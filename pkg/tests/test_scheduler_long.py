import itertools
import math
import random

import numpy as np
import pytest

from evpool.core import ChargeSlot, Stop, VehicleState, PICKUP, DROPOFF
from evpool.errors import CapacityViolation, InvalidArgument, ScaleError, ValidationError
from evpool.network import Station, generate_grid
from evpool.scheduler_long import (
    AvailabilityFunction,
    ChargeSchedule,
    HeuristicStats,
    LongInstance,
    Slot,
    check_delta_bound,
    load_schedule,
    long_objective,
    long_objective_parts,
    push_back,
    release_date,
    solve_long_exact,
    solve_long_heuristic,
    write_schedule,
)

L = 300


# -- independent reference implementation ----------------------------------------------


def ref_objective(inst, matrix):
    """Objective of a 0/1 matrix (vehicles x periods), straight from the A formula."""
    A = inst.availability
    H = inst.horizon
    shortfall = 0.0
    supply = [0.0] * H
    negative = 0.0
    for i, row in enumerate(matrix):
        for t in range(H):
            if row[t]:
                a = 0.0
            else:
                a = inst.prior[i][t]
                for s in range(H):
                    if row[s]:
                        a = min(a, A((t - s + 0.5) * L))
            supply[t] += a
        e = inst.release[i]
        if e >= H:
            continue
        q = inst.initial_charge[i]
        negative += max(0.0, -q)
        for t in range(e + 1, H):
            q = min(1.0, q + inst.eta if row[t - 1] else q - inst.q_est)
            negative += max(0.0, -q)
    for t in range(H):
        shortfall += max(0.0, inst.requirement[t] - supply[t])
    return shortfall + inst.penalty * negative


def brute_force(inst):
    """Lexicographically first optimal matrix over every feasible 0/1 matrix."""
    V, H = len(inst.vehicles), inst.horizon
    free = [(i, t) for i in range(V) for t in range(inst.release[i], H)]
    best, arg = math.inf, None
    for bits in itertools.product((0, 1), repeat=len(free)):
        m = [[0] * H for _ in range(V)]
        for (i, t), b in zip(free, bits):
            m[i][t] = b
        if any(sum(m[i][t] for i in range(V)) > inst.capacity for t in range(H)):
            continue
        obj = ref_objective(inst, m)
        if obj < best - 1e-9:
            best, arg = obj, m
    return best, arg


def to_matrix(inst, sched):
    return [[int(sched.is_charging(v, t)) for t in range(inst.horizon)] for v in inst.vehicles]


def rand_instance(rng, V=4, H=12, q_est=(0.02, 0.05, 0.1)):
    V = rng.randint(1, V)
    H = rng.randint(4, H)
    return LongInstance(
        period_length=L,
        requirement=[rng.randint(0, V) for _ in range(H)],
        capacity=rng.randint(1, 2),
        vehicles=list(range(V)),
        release=[rng.randint(0, H // 2) for _ in range(V)],
        initial_charge=[rng.uniform(-0.1, 0.5) for _ in range(V)],
        eta=rng.choice([1 / 6, 0.25, 1 / 3]),
        q_est=rng.choice(q_est),
    )


def simple(requirement, q0, release=None, K=1, eta=1.0, q_est=0.1, **kw):
    n = len(q0)
    return LongInstance(
        period_length=L, requirement=list(requirement), capacity=K, vehicles=list(range(n)),
        release=list(release or [0] * n), initial_charge=list(q0), eta=eta, q_est=q_est, **kw,
    )


# -- availability ----------------------------------------------------------------------


def test_availability_shape():
    A = AvailabilityFunction(1 / 900, 300)
    assert A(-900) == 1.0 and A(-450) == pytest.approx(0.5)
    assert A(0) == 0.0 and A(150) == 0.0 and A(300) == 0.0
    assert A(750) == pytest.approx(0.5) and A(1200) == 1.0 and A(-5000) == 1.0
    ts = np.linspace(-2000, 0, 101)
    assert all(A(a) >= A(b) for a, b in zip(ts, ts[1:]))
    ts = np.linspace(300, 2000, 101)
    assert all(A(a) <= A(b) for a, b in zip(ts, ts[1:]))


def test_period_profile_uses_midpoints():
    before, after = AvailabilityFunction(1 / 900, 300).period_profile(300)
    assert before == pytest.approx([1 / 6, 1 / 2, 5 / 6])
    assert after == pytest.approx([1 / 6, 1 / 2, 5 / 6])


@pytest.mark.parametrize("bad", [dict(ramp_slope=0), dict(ramp_slope=-1), dict(charge_duration=-1)])
def test_availability_rejects_bad_parameters(bad):
    with pytest.raises(InvalidArgument):
        AvailabilityFunction(**bad)


def test_availability_accounting_spot_check():
    rng = random.Random(3)
    H = 10
    for _ in range(50):
        inst = simple([2] * H, [1.0, 1.0], K=2, eta=0.5)
        m = [[0] * H for _ in range(2)]
        sched = ChargeSchedule()
        for v in range(2):
            s, d = rng.randrange(H), rng.randint(1, 3)
            sched.add(v, Slot(s, d))
            for t in range(s, min(H, s + d)):
                m[v][t] = 1
        shortfall, _ = long_objective_parts(inst, sched)
        assert shortfall == pytest.approx(ref_objective(inst, m), abs=1e-9)


def test_availability_is_zero_while_charging_and_ramped_around():
    H = 10
    inst = simple([1] * H, [1.0], eta=0.5)
    sched = ChargeSchedule({0: [Slot(4, 2)]})
    shortfall, negative = long_objective_parts(inst, sched)
    # supply: 1,5/6,1/2,1/6,0,0,1/6,1/2,5/6,1
    expected = [0, 1 / 6, 1 / 2, 5 / 6, 1, 1, 5 / 6, 1 / 2, 1 / 6, 0]
    assert shortfall == pytest.approx(sum(expected))
    assert negative == 0.0


# -- objective --------------------------------------------------------------------------


def test_objective_zero_when_no_charging_needed():
    inst = simple([1, 1, 1, 1], [1.0, 1.0], K=2, q_est=0.01)
    assert long_objective(inst, ChargeSchedule()) == 0.0


def test_objective_single_charge_creates_shortfall():
    inst = simple([1] * 6, [1.0], q_est=0.01)
    obj = long_objective(inst, ChargeSchedule({0: [Slot(2, 1)]}))
    assert obj >= 1.0
    assert obj == pytest.approx(1 + 5 / 6 + 1 / 2 + 5 / 6 + 1 / 2 + 1 / 6)


def test_objective_counts_negative_charge_from_release():
    inst = simple([0] * 5, [0.1], release=[1], q_est=0.1)
    # q at periods 1..4: 0.1, 0, -0.1, -0.2
    assert long_objective_parts(inst, ChargeSchedule()) == pytest.approx((0.0, 0.3))
    assert long_objective(inst, ChargeSchedule()) == pytest.approx(300.0)


def test_objective_caps_charge_at_one():
    inst = simple([0] * 6, [0.9], eta=0.5, q_est=0.3)
    # charging twice from 0.9 saturates at 1, then 0.7, 0.4, 0.1
    assert long_objective_parts(inst, ChargeSchedule({0: [Slot(0, 2)]}))[1] == 0.0
    inst2 = simple([0] * 7, [0.9], eta=0.5, q_est=0.3)
    assert long_objective_parts(inst2, ChargeSchedule({0: [Slot(0, 2)]}))[1] == pytest.approx(0.2)


def test_objective_rejects_capacity_violation():
    inst = simple([0] * 4, [0.5, 0.5], K=1)
    with pytest.raises(CapacityViolation):
        long_objective(inst, ChargeSchedule({0: [Slot(1, 2)], 1: [Slot(2, 1)]}))


def test_objective_matches_spreadsheet_on_two_by_eight():
    rng = random.Random(11)
    for _ in range(200):
        inst = LongInstance(
            period_length=L, requirement=[rng.randint(0, 2) for _ in range(8)], capacity=2,
            vehicles=[10, 20], release=[rng.randint(0, 3), rng.randint(0, 3)],
            initial_charge=[rng.uniform(-0.2, 1.0) for _ in range(2)], eta=0.25, q_est=0.1,
            prior=[[rng.choice([1.0, 0.5, 0.0]) for _ in range(8)] for _ in range(2)],
        )
        m = [[rng.randint(0, 1) for _ in range(8)] for _ in range(2)]
        sched = ChargeSchedule()
        for v, row in zip(inst.vehicles, m):
            t = 0
            while t < 8:
                if row[t]:
                    s = t
                    while t < 8 and row[t]:
                        t += 1
                    sched.add(v, Slot(s, t - s))
                else:
                    t += 1
        assert long_objective(inst, sched) == pytest.approx(ref_objective(inst, m), abs=1e-9)


# -- exact solver -----------------------------------------------------------------------


def test_exact_empty_when_nothing_needs_charging():
    inst = simple([1] * 6, [1.0, 1.0], K=2, q_est=0.01)
    sched = solve_long_exact(inst)
    assert sched.vehicles() == []
    assert long_objective(inst, sched) == 0.0


def test_exact_charges_near_empty_vehicle_at_release():
    inst = simple([0] * 8, [0.05], release=[2], eta=0.25, q_est=0.1)
    sched = solve_long_exact(inst)
    assert sched.slots(0)[0].start == 2
    _, arg = brute_force(inst)
    assert to_matrix(inst, sched) == arg


def test_exact_rejects_large_instances():
    with pytest.raises(ScaleError):
        solve_long_exact(simple([0] * 13, [1.0]))
    with pytest.raises(ScaleError):
        solve_long_exact(simple([0] * 4, [1.0] * 5, K=5))


@pytest.mark.parametrize("seed", range(60))
def test_exact_matches_brute_force(seed):
    rng = random.Random(seed)
    V = rng.randint(1, 3)
    H = rng.randint(3, 7 if V < 3 else 5)
    inst = LongInstance(
        period_length=L,
        requirement=[rng.randint(0, V) for _ in range(H)],
        capacity=rng.randint(1, 2),
        vehicles=list(range(V)),
        release=[rng.randint(0, H // 2) for _ in range(V)],
        initial_charge=[rng.uniform(-0.1, 0.4) for _ in range(V)],
        eta=rng.choice([0.25, 0.5]),
        q_est=rng.choice([0.1, 0.2]),
    )
    best, arg = brute_force(inst)
    sched = solve_long_exact(inst)
    assert long_objective(inst, sched) == pytest.approx(best, abs=1e-7)
    assert to_matrix(inst, sched) == arg


def test_exact_never_charges_before_release_and_respects_capacity():
    rng = random.Random(5)
    for _ in range(40):
        inst = rand_instance(rng, V=3, H=8)
        sched = solve_long_exact(inst)
        assert max(sched.charging_counts(inst.horizon), default=0) <= inst.capacity
        for i, v in enumerate(inst.vehicles):
            assert all(s.start >= inst.release[i] for s in sched.slots(v))


def test_exact_keeps_frozen_prefix():
    inst = simple([1, 1, 0, 0, 0, 0], [0.05, 0.4], K=1, eta=0.5, frozen_before=2)
    previous = ChargeSchedule({1: [Slot(1, 2, station=7)], 0: [Slot(4, 2, station=3)]})
    sched = solve_long_exact(inst, previous)
    assert Slot(1, 2, station=7) in sched.slots(1)
    assert max(sched.charging_counts(6)) <= 1
    # re-planned slots inherit the vehicle's station
    assert all(s.station == 3 for s in sched.slots(0))


def test_exact_dominates_heuristic():
    rng = random.Random(2)
    for _ in range(40):
        inst = rand_instance(rng, V=3, H=10)
        assert long_objective(inst, solve_long_exact(inst)) <= long_objective(inst, solve_long_heuristic(inst)) + 1e-9


# -- heuristic --------------------------------------------------------------------------


def test_heuristic_single_vehicle_starts_at_deadline():
    inst = simple([0] * 12, [0.5], q_est=0.1, eta=0.5)
    assert inst.deadline(0) == 5
    sched = solve_long_heuristic(inst)
    assert sched.slots(0) == [Slot(5, 2)]
    assert long_objective_parts(inst, sched)[1] == 0.0


def test_heuristic_two_vehicles_same_deadline():
    inst = simple([0] * 12, [0.9, 0.9], K=1, eta=1.0, q_est=0.1)
    assert inst.deadline(0) == inst.deadline(1) == 9
    sched = solve_long_heuristic(inst)
    assert sched.slots(0) == [Slot(9, 1)]
    assert sched.slots(1) == [Slot(8, 1)]
    assert long_objective(inst, sched) == pytest.approx(long_objective(inst, solve_long_exact(inst)))


def test_heuristic_later_deadline_starts_later():
    rng = random.Random(4)
    for _ in range(50):
        n = rng.randint(2, 6)
        q0 = rng.sample([round(0.1 * k, 1) for k in range(1, 10)], n)
        inst = simple([0] * 40, q0, K=n, eta=0.25, q_est=0.05)
        sched = solve_long_heuristic(inst)
        starts = {i: sched.slots(i)[0].start for i in range(n)}
        for a in range(n):
            for b in range(n):
                if inst.deadline(a) > inst.deadline(b):
                    assert starts[a] >= starts[b]


def test_heuristic_duration_fills_the_battery():
    inst = simple([0] * 20, [0.35], eta=0.2, q_est=0.1)
    sched = solve_long_heuristic(inst)
    (slot,) = sched.slots(0)
    assert slot.start == 3
    assert slot.duration == math.ceil((1 - 0.05) / 0.2)


def test_heuristic_skips_vehicles_lasting_past_horizon():
    inst = simple([0] * 5, [1.0, 0.2], K=2, q_est=0.1)
    sched = solve_long_heuristic(inst)
    assert sched.slots(0) == []
    assert sched.slots(1) == [Slot(2, 1)]


def test_heuristic_respects_requirement_by_moving_charge():
    # charging at the deadline would drop supply below R; the scan finds an earlier start
    inst = simple([0, 0, 0, 0, 0, 0, 2, 2], [0.5, 1.0], K=2, q_est=0.1, eta=1.0)
    sched = solve_long_heuristic(inst)
    shortfall, _ = long_objective_parts(inst, sched)
    assert shortfall == 0.0
    assert sched.slots(0)[0].start <= 2


def test_heuristic_pushes_back_when_blocked():
    inst = simple([0] * 10, [0.0, 0.0], K=1, eta=0.5, q_est=0.1)
    stats = HeuristicStats()
    sched = solve_long_heuristic(inst, stats=stats)
    assert stats.pushed_back == 1
    # vehicle 0 wins the tie so it outranks vehicle 1 and is the one displaced
    assert sched.slots(1) == [Slot(0, 2)]
    assert sched.slots(0) == [Slot(2, 2)]
    assert stats.late == [0]


@pytest.mark.parametrize("seed", range(500))
def test_heuristic_invariants(seed):
    rng = random.Random(seed)
    inst = rand_instance(rng, q_est=(0.02, 0.05, 0.1, 0.2))
    H = inst.horizon
    inst.frozen_before = rng.randint(0, H // 2)
    previous = ChargeSchedule()
    for v in inst.vehicles:
        if rng.random() < 0.5:
            s = rng.randint(0, H - 1)
            previous.add(v, Slot(s, rng.randint(1, 3), station=rng.randint(0, 2)))
    if max(previous.charging_counts(H + 5), default=0) > inst.capacity:
        previous = ChargeSchedule()
    sched = solve_long_heuristic(inst, previous)
    counts = sched.charging_counts(H + 100)
    assert max(counts, default=0) <= inst.capacity
    for v, slots in previous.items():
        for s in slots:
            if s.start < inst.frozen_before:
                assert s in sched.slots(v)


def test_heuristic_horizon_extends_past_day_end():
    inst = simple([1, 1, 1, 1], [0.0, 0.0, 0.0], K=1, eta=0.5, q_est=0.1)
    sched = solve_long_heuristic(inst)
    ends = [s.end for v in inst.vehicles for s in sched.slots(v)]
    assert len(ends) == 3 and max(ends) > inst.horizon
    assert max(sched.charging_counts(max(ends))) <= 1


# -- push_back --------------------------------------------------------------------------


def test_push_back_free_slot():
    inst = simple([0] * 6, [0.3, 0.5], K=1)
    out, ops = push_back(inst, ChargeSchedule(), [(0, 2)])
    assert out.slots(0) == [Slot(2, 1)]
    assert ops > 0


def test_push_back_evicts_higher_priority_occupant():
    # vehicle 1 has the later deadline (higher priority) and holds period 0
    inst = simple([0, 0, 0], [0.0, 0.1], K=1, eta=1.0, q_est=0.05)
    out, _ = push_back(inst, ChargeSchedule({1: [Slot(0, 1)]}), [(0, 0)])
    assert out.slots(0) == [Slot(0, 1)]
    assert out.slots(1) == [Slot(1, 1)]
    # both placed; R=0 so the objective only sees negative charge, which stays at zero
    assert long_objective(inst, out) == 0.0
    assert long_objective(inst, solve_long_exact(inst)) == 0.0


def test_push_back_never_evicts_lower_priority():
    inst = simple([0, 0, 0], [0.2, 0.0], K=1, eta=1.0, q_est=0.05)
    out, _ = push_back(inst, ChargeSchedule({1: [Slot(0, 1)]}), [(0, 0)])
    assert out.slots(1) == [Slot(0, 1)]
    assert out.slots(0) == [Slot(1, 1)]


def test_push_back_requires_items():
    with pytest.raises(InvalidArgument):
        push_back(simple([0], [1.0]), ChargeSchedule(), [])


def _chain(T):
    # vehicle j holds period j and outranks every vehicle before it; the new item starts a full cascade
    q_est = 1.0 / (4 * T)
    inst = LongInstance(
        period_length=L, requirement=[0] * T, capacity=1, vehicles=list(range(T + 1)),
        release=[0] * (T + 1), initial_charge=[(j + 1) * q_est for j in range(T)] + [0.0],
        eta=1.0, q_est=q_est,
    )
    sched = ChargeSchedule({j: [Slot(j, 1)] for j in range(T)})
    return inst, push_back(inst, sched, [(T, 0)])


def test_push_back_operation_count_is_linear():
    Ts = [100, 200, 400, 800, 1600, 3200]
    ops = []
    for T in Ts:
        inst, (out, n) = _chain(T)
        assert len(out.vehicles()) == T + 1
        assert max(out.charging_counts(T + 10)) <= 1
        ops.append(n)
    slope = np.polyfit(np.log(Ts), np.log(ops), 1)[0]
    assert slope <= 1.1


# -- delta bound, release dates, CSV -----------------------------------------------------


def test_check_delta_bound():
    assert check_delta_bound(300, 600)
    assert not check_delta_bound(300, 900)
    assert check_delta_bound(300, 0)


@pytest.fixture
def grid():
    net = generate_grid(3, 3, edge_time=100)
    return net.with_stations([Station(0, 0, 2), Station(1, 8, 2)])


def test_release_idle_at_station(grid):
    v = VehicleState(id=1, node=0)
    assert release_date(v, grid, 0, now=500) == 500


def test_release_with_assigned_station(grid):
    v = VehicleState(id=1, node=4, route=[Stop(DROPOFF, 3, 5)], charge_slot=ChargeSlot(2000, 600, station=1))
    # drop-off at node 5 at t_c = 1000 + 100, then 5 -> 8 takes 100
    assert release_date(v, grid, 900, now=1000) == 1200


def test_release_without_station_pads_to_buffer(grid):
    v = VehicleState(id=1, node=3, route=[Stop(PICKUP, 3, 4), Stop(DROPOFF, 3, 5)])
    # t_c = 1000 + 100 + 100; nearest station from 5 is 8 at 100 s, padded to D
    assert release_date(v, grid, 600, now=1000) == 1200 + 600
    assert release_date(v, grid, 0, now=1000) == 1200 + 100


def test_release_mid_arc(grid):
    v = VehicleState(id=1, node=0, next_node=1, edge_elapsed=40)
    assert release_date(v, grid, 0, now=0) == 60 + 100


def test_schedule_csv_round_trip(tmp_path):
    sched = ChargeSchedule({3: [Slot(2, 3, station=1), Slot(8, 1)], 5: [Slot(0, 2)]})
    p = tmp_path / "s.csv"
    write_schedule(sched, p, L, origin_s=18000)
    text = p.read_text().splitlines()
    assert text[0] == "vehicle_id,start_s,duration_s,station_id"
    assert text[1] == "3,18600,900,1"
    assert load_schedule(p, L, origin_s=18000) == sched


def test_schedule_rejects_overlap():
    s = ChargeSchedule({0: [Slot(0, 3)]})
    with pytest.raises(ValidationError):
        s.add(0, Slot(2, 1))
    with pytest.raises(ValidationError):
        s.add(0, Slot(5, 0))
