"""Long-horizon charge-time planning.

Time is discretized into periods of ``period_length`` seconds, indexed from the
start of the planning instance. A vehicle's schedule is a list of slots, each a
run of consecutive charging periods.
"""

from __future__ import annotations

import csv
import heapq
import math
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from .core import VehicleState, route_end
from .errors import CapacityViolation, InvalidArgument, ParseError, ScaleError, ValidationError

_EPS = 1e-9


# -- availability -----------------------------------------------------------------


@dataclass(frozen=True)
class AvailabilityFunction:
    """Availability of a vehicle around one charging period starting at t = 0.

    Linear ramp of slope ``ramp_slope`` (per second) down to zero before the
    charge and back up after ``charge_duration`` seconds.
    """

    ramp_slope: float = 1.0 / 900.0
    charge_duration: float = 300.0

    def __post_init__(self):
        if not self.ramp_slope > 0 or self.charge_duration < 0:
            raise InvalidArgument("ramp_slope must be positive and charge_duration non-negative")

    def __call__(self, t: float) -> float:
        if t <= 0:
            return min(1.0, -self.ramp_slope * t)
        if t <= self.charge_duration:
            return 0.0
        return min(1.0, self.ramp_slope * (t - self.charge_duration))

    def period_profile(self, period_length: float) -> tuple[list[float], list[float]]:
        """Availability k = 1, 2, ... periods before and after a charging period.

        Each period is represented by its midpoint. Lists stop at the first
        offset whose value is 1.
        """
        before, after = [], []
        k = 1
        while True:
            v = self((-k + 0.5) * period_length)
            if v >= 1.0 - 1e-12:
                break
            before.append(v)
            k += 1
        k = 1
        while True:
            v = self((k + 0.5) * period_length)
            if v >= 1.0 - 1e-12:
                break
            after.append(v)
            k += 1
        return before, after


# -- schedules ----------------------------------------------------------------------


@dataclass(frozen=True)
class Slot:
    start: int
    duration: int
    station: Optional[int] = None
    locked: bool = False

    @property
    def end(self) -> int:
        return self.start + self.duration


class ChargeSchedule:
    """Per-vehicle sorted, disjoint charging slots."""

    def __init__(self, slots: Optional[dict[int, Iterable[Slot]]] = None):
        self._slots: dict[int, list[Slot]] = {}
        for v, lst in (slots or {}).items():
            for s in lst:
                self.add(v, s)

    def add(self, vehicle: int, slot: Slot) -> None:
        if slot.duration < 1:
            raise ValidationError("slot duration must be at least one period")
        lst = self._slots.setdefault(vehicle, [])
        for other in lst:
            if slot.start < other.end and other.start < slot.end:
                raise ValidationError(f"vehicle {vehicle}: overlapping slots")
        lst.append(slot)
        lst.sort(key=lambda s: s.start)

    def remove(self, vehicle: int, slot: Slot) -> None:
        self._slots[vehicle].remove(slot)
        if not self._slots[vehicle]:
            del self._slots[vehicle]

    def replace(self, vehicle: int, old: Slot, new: Slot) -> None:
        self.remove(vehicle, old)
        self.add(vehicle, new)

    def slots(self, vehicle: int) -> list[Slot]:
        return list(self._slots.get(vehicle, ()))

    def vehicles(self) -> list[int]:
        return sorted(self._slots)

    def items(self):
        for v in self.vehicles():
            yield v, list(self._slots[v])

    def copy(self) -> "ChargeSchedule":
        return ChargeSchedule({v: list(s) for v, s in self._slots.items()})

    def charging_counts(self, horizon: int) -> list[int]:
        counts = [0] * horizon
        for lst in self._slots.values():
            for s in lst:
                for t in range(max(0, s.start), min(horizon, s.end)):
                    counts[t] += 1
        return counts

    def is_charging(self, vehicle: int, period: int) -> bool:
        return any(s.start <= period < s.end for s in self._slots.get(vehicle, ()))

    def __eq__(self, other):
        return isinstance(other, ChargeSchedule) and self._slots == other._slots

    def __repr__(self):
        return f"ChargeSchedule({self._slots!r})"


def write_schedule(schedule: ChargeSchedule, path, period_length: float, origin_s: float = 0.0) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["vehicle_id", "start_s", "duration_s", "station_id"])
        for v, slots in schedule.items():
            for s in slots:
                start = origin_s + s.start * period_length
                w.writerow([v, _fmt(start), _fmt(s.duration * period_length), "" if s.station is None else s.station])


def load_schedule(path, period_length: float, origin_s: float = 0.0) -> ChargeSchedule:
    sched = ChargeSchedule()
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["vehicle_id", "start_s", "duration_s", "station_id"]:
            raise ParseError(f"{path}: bad schedule header")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                v = int(row[0])
                start = (float(row[1]) - origin_s) / period_length
                dur = float(row[2]) / period_length
                station = int(row[3]) if len(row) > 3 and row[3].strip() else None
            except (ValueError, IndexError):
                raise ParseError(f"{path}:{lineno}: malformed schedule row") from None
            sched.add(v, Slot(int(round(start)), int(round(dur)), station))
    return sched


def _fmt(x: float) -> str:
    return str(int(x)) if float(x).is_integer() else repr(float(x))


# -- instances ---------------------------------------------------------------------------


@dataclass
class LongInstance:
    """Frozen input to one long-horizon planning run.

    ``eta`` and ``q_est`` are charge gained / lost per period. ``frozen_before``
    is the first period whose slots may be re-planned.
    """

    period_length: float
    requirement: list[float]
    capacity: int
    vehicles: list[int]
    release: list[int]
    initial_charge: list[float]
    eta: float
    q_est: float
    prior: Optional[list[list[float]]] = None
    penalty: float = 1000.0
    frozen_before: int = 0
    availability: AvailabilityFunction = field(default_factory=AvailabilityFunction)

    def __post_init__(self):
        n = len(self.vehicles)
        if len(self.release) != n or len(self.initial_charge) != n:
            raise ValidationError("per-vehicle arrays must match the vehicle list")
        if len(set(self.vehicles)) != n:
            raise ValidationError("duplicate vehicle id")
        if self.capacity < 0:
            raise ValidationError("capacity must be non-negative")
        if not (self.eta > 0 and self.q_est > 0):
            raise ValidationError("eta and q_est must be positive")
        H = self.horizon
        if self.prior is None:
            self.prior = [[1.0] * H for _ in range(n)]
        elif len(self.prior) != n or any(len(p) != H for p in self.prior):
            raise ValidationError("prior availability must be |V| x horizon")
        self.release = [max(0, int(e)) for e in self.release]

    @property
    def horizon(self) -> int:
        return len(self.requirement)

    def deadline(self, i: int) -> int:
        """Last period vehicle ``i`` can start charging without predicted negative charge."""
        q0 = self.initial_charge[i]
        if q0 <= 0:
            return self.release[i]
        return self.release[i] + int(math.floor(q0 / self.q_est + _EPS))

    def needed_duration(self, i: int, start: int) -> int:
        """Periods needed to fill up when starting at ``start`` (predicted charge floored at 0)."""
        pred = self.initial_charge[i] - (start - self.release[i]) * self.q_est
        return max(1, math.ceil((1.0 - max(pred, 0.0)) / self.eta - _EPS))


def frozen_slots(instance: LongInstance, previous: Optional[ChargeSchedule]) -> dict[int, list[Slot]]:
    """Slots that re-planning must keep: those starting before ``frozen_before`` or locked."""
    out: dict[int, list[Slot]] = {}
    if previous is None:
        return out
    for v, slots in previous.items():
        keep = [s for s in slots if s.start < instance.frozen_before or s.locked]
        if keep:
            out[v] = keep
    return out


def check_delta_bound(T_long: float, delta: float) -> bool:
    """Station assignments stay feasible for every input iff the overlap is at most twice the long cadence."""
    return delta <= 2 * T_long


def release_date(vehicle: VehicleState, network, buffer_D: float, now: float) -> float:
    """Earliest time the vehicle can begin charging, in seconds.

    With an assigned station this is the final drop-off time plus travel to
    it; otherwise travel to the nearest station, padded to at least ``buffer_D``.
    """
    node, t = vehicle.anchor(network, now)
    node, t = route_end(network, node, t, vehicle.route)
    slot = vehicle.charge_slot
    if slot is not None and slot.station is not None:
        return t + network.travel_time(node, network.station(slot.station).node)
    nearest = network.nearest_station(node)
    return t + max(network.travel_time(node, nearest.node), buffer_D)


# -- objective -------------------------------------------------------------------------


def _availability_row(slots: Iterable[Slot], prior: Sequence[float], length: int, before, after) -> list[float]:
    row = [prior[t] if t < len(prior) else 1.0 for t in range(length)]
    for s in slots:
        _apply_slot(row, s.start, s.end, before, after)
    return row


def _apply_slot(row: list[float], start: int, end: int, before, after) -> None:
    n = len(row)
    for t in range(max(0, start), min(n, end)):
        row[t] = 0.0
    for k, v in enumerate(before, start=1):
        t = start - k
        if 0 <= t < n and v < row[t]:
            row[t] = v
    for k, v in enumerate(after, start=1):
        t = end - 1 + k
        if 0 <= t < n and v < row[t]:
            row[t] = v


def long_objective_parts(instance: LongInstance, schedule: ChargeSchedule) -> tuple[float, float]:
    """(availability shortfall, total negative charge) of a schedule."""
    H = instance.horizon
    counts = schedule.charging_counts(H)
    for t, c in enumerate(counts):
        if c > instance.capacity:
            raise CapacityViolation(f"{c} vehicles charging in period {t} exceeds capacity {instance.capacity}")
    before, after = instance.availability.period_profile(instance.period_length)
    supply = [0.0] * H
    negative = 0.0
    for i, v in enumerate(instance.vehicles):
        slots = schedule.slots(v)
        row = _availability_row(slots, instance.prior[i], H, before, after)
        for t in range(H):
            supply[t] += row[t]
        e = instance.release[i]
        if e >= H:
            continue
        q = instance.initial_charge[i]
        negative += max(0.0, -q)
        for t in range(e + 1, H):
            if schedule.is_charging(v, t - 1):
                q = min(1.0, q + instance.eta)
            else:
                q = min(1.0, q - instance.q_est)
            negative += max(0.0, -q)
    shortfall = sum(max(0.0, r - s) for r, s in zip(instance.requirement, supply))
    return shortfall, negative


def long_objective(instance: LongInstance, schedule: ChargeSchedule) -> float:
    shortfall, negative = long_objective_parts(instance, schedule)
    return shortfall + instance.penalty * negative


# -- exact solver ------------------------------------------------------------------------

MAX_EXACT_VEHICLES = 4
MAX_EXACT_PERIODS = 12


def _pattern_tables(instance, i, fixed_bits, free, before, after):
    """All charging patterns of vehicle ``i``: bits, availability rows and negative charge."""
    H = instance.horizon
    F = len(free)
    n = 1 << F
    bits = np.zeros((n, H), dtype=bool)
    bits[:, fixed_bits] = True
    idx = np.arange(n)
    for j, t in enumerate(free):
        bits[:, t] |= ((idx >> j) & 1).astype(bool)

    avail = np.tile(np.asarray(instance.prior[i], dtype=float), (n, 1))
    avail[bits] = 0.0
    for k, v in enumerate(before, start=1):
        # period t is k before a charging period t + k
        shifted = np.zeros_like(bits)
        shifted[:, : H - k] = bits[:, k:]
        avail = np.where(shifted & (avail > v), v, avail)
    for k, v in enumerate(after, start=1):
        shifted = np.zeros_like(bits)
        shifted[:, k:] = bits[:, : H - k]
        avail = np.where(shifted & (avail > v), v, avail)

    neg = np.zeros(n)
    e = instance.release[i]
    if e < H:
        q = np.full(n, float(instance.initial_charge[i]))
        neg += np.maximum(0.0, -q)
        for t in range(e + 1, H):
            c = bits[:, t - 1]
            q = np.minimum(1.0, np.where(c, q + instance.eta, q - instance.q_est))
            neg += np.maximum(0.0, -q)

    # removing a charging period never lowers availability or raises station use,
    # so a pattern survives only if every free bit strictly reduces negative charge
    keep = np.ones(n, dtype=bool)
    for j in range(F):
        has = ((idx >> j) & 1).astype(bool)
        without = idx & ~(1 << j)
        keep &= ~has | (neg[without] > neg + 1e-12)
    sel = np.flatnonzero(keep)
    return bits[sel], avail[sel], neg[sel]


def solve_long_exact(instance: LongInstance, previous: Optional[ChargeSchedule] = None) -> ChargeSchedule:
    """Globally optimal (preemptive) charging matrix by branch-and-bound over per-vehicle patterns.

    Among optimal matrices the lexicographically smallest flattened matrix
    (vehicle order as given) is returned.
    """
    V, H = len(instance.vehicles), instance.horizon
    if V > MAX_EXACT_VEHICLES or H > MAX_EXACT_PERIODS:
        raise ScaleError(f"exact long-horizon solver is limited to {MAX_EXACT_VEHICLES} vehicles x {MAX_EXACT_PERIODS} periods")
    before, after = instance.availability.period_profile(instance.period_length)
    frozen = frozen_slots(instance, previous)
    M = instance.penalty
    R = np.asarray(instance.requirement, dtype=float)
    K = instance.capacity

    tables = []
    fixed_count = np.zeros(H, dtype=int)
    for i, v in enumerate(instance.vehicles):
        fixed = sorted({t for s in frozen.get(v, ()) for t in range(max(0, s.start), min(H, s.end))})
        fixed_count[fixed] += 1
        first = max(instance.release[i], instance.frozen_before)
        free = [t for t in range(first, H) if t not in fixed]
        bits, avail, neg = _pattern_tables(instance, i, fixed, free, before, after)
        # capacity for free periods only; frozen charging is taken as given
        free_mask = np.zeros(H, dtype=bool)
        free_mask[free] = True
        tables.append((bits, avail, neg, bits & free_mask))
    room = K - fixed_count

    def search(perm, ranks, incumbent, stop_at_first):
        """Depth-first search over vehicles in ``perm``; ``ranks`` orders each vehicle's patterns."""
        tabs = [tables[i] for i in perm]
        rks = [ranks[i] for i in perm]
        orders = [np.argsort(r, kind="stable") for r in rks]
        best = [incumbent, None]
        chosen = [0] * V
        weights = 1 << np.arange(H)
        masks = [(t[3].astype(np.int64) * weights).sum(axis=1) for t in tabs]
        per_full: dict = {}
        per_window: dict = {}

        def single(d, fullmask):
            # cheapest negative charge and best availability of vehicle d given full periods
            key = (d, fullmask)
            hit = per_full.get(key)
            if hit is None:
                ok = (masks[d] & fullmask) == 0
                if ok.any():
                    hit = (ok, tabs[d][2][ok].min(), tabs[d][1][ok].max(axis=0))
                else:
                    hit = (ok, math.inf, None)
                per_full[key] = hit
            return hit

        def windowed(d, fullmask, wmask, W):
            key = (d, fullmask, wmask)
            hit = per_window.get(key)
            if hit is None:
                ok = single(d, fullmask)[0]
                _, av, ng, _ = tabs[d]
                hit = (M * ng[ok] - av[ok][:, W].sum(axis=1)).min()
                per_window[key] = hit
            return hit

        def bound(depth, supply, used, negsum):
            # each remaining vehicle alone, restricted to periods with spare capacity
            fullmask = int(weights[used >= room].sum())
            gap = R - supply
            W = gap > 0
            wmask = int(weights[W].sum())
            b1_neg = 0.0
            b1_avail = np.zeros(H)
            b2 = M * negsum + gap[W].sum()
            for d in range(depth, V):
                _, lo, hi = single(d, fullmask)
                if hi is None:
                    return math.inf
                b1_neg += lo
                b1_avail += hi
                b2 += windowed(d, fullmask, wmask, W)
            b1 = M * (negsum + b1_neg) + np.maximum(0.0, gap - b1_avail).sum()
            return max(b1, b2)

        def dfs(depth, supply, used, negsum):
            if bound(depth, supply, used, negsum) >= best[0] - _EPS:
                return False
            bits, av, ng, capbits = tabs[depth]
            ok = ~(capbits & (used >= room)).any(axis=1)
            if depth == V - 1:
                # last vehicle: score every pattern at once
                objs = M * (negsum + ng) + np.maximum(0.0, R - supply - av).sum(axis=1)
                good = np.flatnonzero(ok & (objs < best[0] - _EPS))
                if len(good) == 0:
                    return False
                if stop_at_first:
                    p = good[np.argmin(rks[depth][good])]
                else:
                    p = good[np.lexsort((rks[depth][good], objs[good]))[0]]
                chosen[depth] = p
                best[0] = objs[p]
                best[1] = list(chosen)
                return stop_at_first
            for p in orders[depth]:
                if not ok[p]:
                    continue
                chosen[depth] = p
                if dfs(depth + 1, supply + av[p], used + capbits[p], negsum + ng[p]):
                    return True
            return False

        dfs(0, np.zeros(H), np.zeros(H, dtype=int), 0.0)
        if best[1] is None:
            return best[0], None
        choice = [0] * V
        for d, i in enumerate(perm):
            choice[i] = best[1][d]
        return best[0], choice

    if V == 0:
        return ChargeSchedule({v: list(s) for v, s in frozen.items()})
    # a quick heuristic answer seeds the first pass; every pattern it uses is dominated by a kept one
    seed = solve_long_heuristic(instance, previous)
    try:
        incumbent = long_objective(instance, seed) + 1e-6
    except CapacityViolation:
        incumbent = math.inf
    by_cost = [np.lexsort((np.arange(len(t[2])), -t[1].sum(axis=1), M * t[2])).argsort() for t in tables]
    big_last = sorted(range(V), key=lambda i: (len(tables[i][2]), i))
    optimum, first_choice = search(big_last, by_cost, incumbent, False)
    if first_choice is None:
        raise CapacityViolation("frozen slots already exceed station capacity")
    # second pass walks patterns in lexicographic order and stops at the first optimal leaf
    by_lex = [np.lexsort(t[0].T[::-1]).argsort() for t in tables]
    _, choice = search(list(range(V)), by_lex, optimum + 2 * _EPS, True)
    if choice is None:
        choice = first_choice

    out = ChargeSchedule()
    for i, v in enumerate(instance.vehicles):
        row = tables[i][0][choice[i]]
        station = None
        if previous is not None:
            movable = [s for s in previous.slots(v) if s not in frozen.get(v, ())]
            station = next((s.station for s in movable if s.station is not None), None)
        for s in frozen.get(v, ()):
            out.add(v, s)
        covered = {t for s in frozen.get(v, ()) for t in range(s.start, s.end)}
        t = 0
        while t < H:
            if row[t] and t not in covered:
                start = t
                while t < H and row[t] and t not in covered:
                    t += 1
                out.add(v, Slot(start, t - start, station))
            else:
                t += 1
    return out


# -- heuristic -----------------------------------------------------------------------------


class _Planner:
    """Mutable slack state (capacity and availability) for the priority heuristic."""

    def __init__(self, instance: LongInstance, frozen: dict[int, list[Slot]]):
        self.inst = instance
        self.K = instance.capacity
        self.before, self.after = instance.availability.period_profile(instance.period_length)
        self.H = instance.horizon
        self.R = list(instance.requirement)
        self.used = [0] * self.H
        self.occupants: list[list[int]] = [[] for _ in range(self.H)]
        self.affecting: list[set[int]] = [set() for _ in range(self.H)]
        self.frozen = frozen
        self.base: list[list[float]] = []
        self.row: list[list[float]] = []
        self.supply = [0.0] * self.H
        for i, v in enumerate(instance.vehicles):
            base = _availability_row(frozen.get(v, ()), instance.prior[i], self.H, self.before, self.after)
            self.base.append(base)
            self.row.append(list(base))
            for t in range(self.H):
                self.supply[t] += base[t]
        for v, slots in frozen.items():
            for s in slots:
                for t in range(max(0, s.start), min(self.H, s.end)):
                    self.used[t] += 1
        self.placed: dict[int, tuple[int, int]] = {}  # vehicle index -> (start, duration)
        self.rank: list[int] = [0] * len(instance.vehicles)
        self.ops = 0

    # storage grows on demand past the end of the day with zero requirement
    def ensure(self, length: int) -> None:
        if length <= self.H:
            return
        extra = length - self.H
        n = len(self.inst.vehicles)
        self.R.extend([0.0] * extra)
        self.used.extend([0] * extra)
        self.occupants.extend([] for _ in range(extra))
        self.affecting.extend(set() for _ in range(extra))
        self.supply.extend([0.0] * extra)
        for i in range(n):
            v = self.inst.vehicles[i]
            tail = [1.0] * extra
            for s in self.frozen.get(v, ()):
                for t in range(max(self.H, s.start), s.end):
                    if t < length:
                        tail[t - self.H] = 0.0
                for k, val in enumerate(self.after, start=1):
                    t = s.end - 1 + k
                    if self.H <= t < length:
                        tail[t - self.H] = min(tail[t - self.H], val)
            self.base[i].extend(tail)
            self.row[i].extend(tail)
            for j, val in enumerate(tail):
                self.supply[self.H + j] += val
        self.H = length

    def window(self, start: int, dur: int):
        """(period, availability) pairs a slot imposes, in time order."""
        out = []
        for k in range(len(self.before), 0, -1):
            t = start - k
            if t >= 0:
                out.append((t, self.before[k - 1]))
        for t in range(start, start + dur):
            out.append((t, 0.0))
        for k, val in enumerate(self.after, start=1):
            out.append((start + dur - 1 + k, val))
        return out

    def place(self, i: int, start: int, dur: int) -> None:
        self.ensure(start + dur + len(self.after) + 1)
        row, base = self.row[i], self.base[i]
        for t, val in self.window(start, dur):
            new = min(base[t], val)
            self.supply[t] += new - row[t]
            row[t] = new
            self.affecting[t].add(i)
        for t in range(start, start + dur):
            self.used[t] += 1
            self.occupants[t].append(i)
        self.placed[i] = (start, dur)

    def unplace(self, i: int) -> None:
        start, dur = self.placed.pop(i)
        row, base = self.row[i], self.base[i]
        for t, _ in self.window(start, dur):
            self.supply[t] += base[t] - row[t]
            row[t] = base[t]
            self.affecting[t].discard(i)
        for t in range(start, start + dur):
            self.used[t] -= 1
            self.occupants[t].remove(i)

    def deficits(self, i: int, start: int, dur: int) -> list[tuple[int, float]]:
        """Periods where adding the slot would push supply below the requirement."""
        out = []
        row = self.row[i]
        for t, val in self.window(start, dur):
            self.ops += 1
            drop = row[t] - min(row[t], val)
            if drop > 1e-12 and self.supply[t] - drop < self.R[t] - _EPS:
                out.append((t, self.R[t] - (self.supply[t] - drop)))
        return out

    def can_schedule(self, i: int, start: int, dur: int) -> bool:
        self.ensure(start + dur + len(self.after) + 1)
        for t in range(start, start + dur):
            self.ops += 1
            if self.used[t] >= self.K:
                return False
        return not self.deficits(i, start, dur)

    def clear_capacity(self, i: int, t: int) -> Optional[int]:
        """Highest-priority occupant of period ``t`` that outranks ``i`` and may move."""
        best = None
        for u in self.occupants[t]:
            self.ops += 1
            if u in self.placed and self.rank[u] < self.rank[i]:
                if best is None or self.rank[u] < self.rank[best]:
                    best = u
        return best

    def clear_availability(self, i: int, t: int, need: float) -> Optional[list[int]]:
        """Outranking vehicles whose removal restores ``need`` units of supply at ``t``."""
        cands = []
        for u in self.affecting[t]:
            self.ops += 1
            if u in self.placed and self.rank[u] < self.rank[i]:
                gain = self.base[u][t] - self.row[u][t]
                if gain > 1e-12:
                    cands.append((self.rank[u], u, gain))
        cands.sort()
        for _, u, gain in cands:
            if gain >= need - _EPS:
                return [u]
        picked, total = [], 0.0
        for _, u, gain in cands:
            picked.append(u)
            total += gain
            if total >= need - _EPS:
                return picked
        return None

    def earliest(self, i: int) -> int:
        return max(self.inst.release[i], self.inst.frozen_before)

    def push_back(self, items: list[tuple[int, int]]) -> None:
        heap = [(-self.rank[i], i, t) for i, t in items]
        heapq.heapify(heap)
        while heap:
            _, i, s = heapq.heappop(heap)
            s = max(s, self.earliest(i))
            while True:
                self.ops += 1
                dur = self.inst.needed_duration(i, s)
                self.ensure(s + dur + len(self.after) + 1)
                bumped: list[tuple[int, int, tuple[int, int]]] = []
                ok = True
                for t, _ in self.deficits(i, s, dur):
                    # earlier evictions may already have covered this period
                    drop = self.row[i][t] - min(self.row[i][t], dict(self.window(s, dur))[t])
                    need = self.R[t] - (self.supply[t] - drop)
                    if need <= _EPS:
                        continue
                    evict = self.clear_availability(i, t, need)
                    if evict is None:
                        ok = False
                        break
                    for u in evict:
                        bumped.append((u, t, self.placed[u]))
                        self.unplace(u)
                if ok:
                    for t in range(s, s + dur):
                        self.ops += 1
                        if self.used[t] >= self.K:
                            u = self.clear_capacity(i, t)
                            if u is None:
                                ok = False
                                break
                            bumped.append((u, t, self.placed[u]))
                            self.unplace(u)
                if ok:
                    self.place(i, s, dur)
                    for u, t, (old_start, _) in bumped:
                        heapq.heappush(heap, (-self.rank[u], u, max(self.earliest(u), old_start, t)))
                    break
                for u, _, (old_start, old_dur) in reversed(bumped):
                    self.place(u, old_start, old_dur)
                s += 1


def _priorities(instance: LongInstance, members: Sequence[int]) -> list[int]:
    """Vehicle indices by deadline, latest first; ties go to the lower index."""
    return sorted(members, key=lambda i: (-instance.deadline(i), i))


def _schedule_from(planner: _Planner, instance: LongInstance, frozen, previous) -> ChargeSchedule:
    out = ChargeSchedule()
    for v, slots in frozen.items():
        for s in slots:
            out.add(v, s)
    for i, (start, dur) in sorted(planner.placed.items()):
        v = instance.vehicles[i]
        station = None
        if previous is not None:
            station = next((s.station for s in previous.slots(v) if s not in frozen.get(v, ()) and s.station is not None), None)
        out.add(v, Slot(start, dur, station))
    return out


@dataclass
class HeuristicStats:
    ops: int = 0
    pushed_back: int = 0
    late: list[int] = field(default_factory=list)


def solve_long_heuristic(
    instance: LongInstance,
    previous: Optional[ChargeSchedule] = None,
    stats: Optional[HeuristicStats] = None,
) -> ChargeSchedule:
    """Deadline-priority heuristic: latest-deadline vehicles charge as late as possible.

    Only each vehicle's next charge is planned. Vehicles whose kept slots
    still lie ahead of their release, or whose predicted charge lasts past the
    horizon, are left alone.
    """
    frozen = frozen_slots(instance, previous)
    planner = _Planner(instance, frozen)
    H = instance.horizon
    members = []
    for i, v in enumerate(instance.vehicles):
        e = instance.release[i]
        if e >= H or instance.deadline(i) >= H:
            continue
        if any(s.end > e for s in frozen.get(v, ())):
            continue
        members.append(i)
    order = _priorities(instance, members)
    for r, i in enumerate(order):
        planner.rank[i] = r
    pushed = 0
    for i in order:
        first = planner.earliest(i)
        placed = False
        for s in range(min(instance.deadline(i), planner.H - 1), first - 1, -1):
            dur = instance.needed_duration(i, s)
            if planner.can_schedule(i, s, dur):
                planner.place(i, s, dur)
                placed = True
                break
        if not placed:
            pushed += 1
            planner.push_back([(i, first)])
    result = _schedule_from(planner, instance, frozen, previous)
    if stats is not None:
        stats.ops = planner.ops
        stats.pushed_back = pushed
        stats.late = sorted(
            instance.vehicles[i] for i, (s, _) in planner.placed.items() if s > instance.deadline(i)
        )
    return result


def push_back(
    instance: LongInstance,
    schedule: ChargeSchedule,
    items: Sequence[tuple[int, int]],
) -> tuple[ChargeSchedule, int]:
    """Insert ``items`` (vehicle id, earliest period) by displacing outranking slots forward.

    Every slot in ``schedule`` is treated as movable. Returns the new schedule
    and the count of elementary operations performed.
    """
    if not items:
        raise InvalidArgument("push_back needs at least one item")
    planner = _Planner(instance, {})
    index = {v: i for i, v in enumerate(instance.vehicles)}
    order = _priorities(instance, range(len(instance.vehicles)))
    for r, i in enumerate(order):
        planner.rank[i] = r
    for v, slots in schedule.items():
        for s in slots:
            planner.place(index[v], s.start, s.duration)
    planner.ops = 0
    planner.push_back([(index[v], t) for v, t in items])
    out = ChargeSchedule()
    for i, (start, dur) in sorted(planner.placed.items()):
        out.add(instance.vehicles[i], Slot(start, dur))
    return out, planner.ops
