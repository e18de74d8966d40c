"""Request ingestion, synthetic demand, the demand profile d(t) and the availability requirement R(t)."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from .battery import BatteryModel
from .core import QosPolicy, Request
from .errors import EmptyInput, Infeasible, InvalidArgument, ParseError, ValidationError
from .scheduler_long import ChargeSchedule, LongInstance, Slot, long_objective_parts, solve_long_heuristic

__all__ = [
    "Request",
    "QosPolicy",
    "AvailabilityRequirement",
    "load_requests",
    "write_requests",
    "synth_requests",
    "demand_profile",
    "availability_requirement",
    "calibrate_lambda",
    "expand_profile",
]

REQUEST_HEADER = ["request_id", "entry_time_s", "origin_node", "destination_node"]


@dataclass(frozen=True)
class AvailabilityRequirement:
    period_length: float
    values: tuple
    lam: float
    profile: tuple


# -- files ------------------------------------------------------------------------------


def load_requests(path, network=None) -> list[Request]:
    """Requests sorted by entry time (stable on id). With ``network``, unknown nodes are rejected."""
    path = Path(path)
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            return []
        if [h.strip() for h in header] != REQUEST_HEADER:
            raise ParseError(f"{path}: expected header {','.join(REQUEST_HEADER)}")
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 4:
                raise ParseError(f"{path}:{lineno}: expected 4 fields")
            try:
                rid, origin, dest = int(row[0]), int(row[2]), int(row[3])
                entry = float(row[1])
            except ValueError:
                raise ParseError(f"{path}:{lineno}: malformed request row") from None
            if network is not None:
                for n in (origin, dest):
                    if n not in network:
                        raise ValidationError(f"{path}:{lineno}: unknown node {n}")
            out.append(Request(rid, entry, origin, dest))
    out.sort(key=lambda r: (r.entry_time, r.id))
    return out


def write_requests(requests: Sequence[Request], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(REQUEST_HEADER)
        for r in requests:
            w.writerow([r.id, repr(float(r.entry_time)), r.origin, r.destination])


def synth_requests(
    network,
    profile: Sequence[float],
    seed: int,
    period_length: float = 60.0,
    start: float = 0.0,
) -> list[Request]:
    """Poisson arrivals: ``profile[k]`` requests per minute during period k.

    Entry times are uniform inside each period; origin and destination are
    distinct nodes drawn uniformly.
    """
    if any(r < 0 for r in profile):
        raise InvalidArgument("arrival rates must be non-negative")
    rng = np.random.default_rng(seed)
    nodes = list(network.nodes)
    if len(nodes) < 2 and any(r > 0 for r in profile):
        raise InvalidArgument("need at least two nodes to draw trips")
    times = []
    for k, rate in enumerate(profile):
        n = rng.poisson(rate * period_length / 60.0)
        lo = start + k * period_length
        times.extend(np.sort(rng.uniform(lo, lo + period_length, n)).tolist())
    out = []
    for rid, t in enumerate(times):
        o = int(rng.integers(len(nodes)))
        d = int(rng.integers(len(nodes) - 1))
        if d >= o:
            d += 1
        out.append(Request(rid, float(t), nodes[o], nodes[d]))
    return out


# -- demand profile --------------------------------------------------------------------


def demand_profile(
    requests: Sequence[Request],
    travel_time: Callable[[int, int], float],
    block: float = 1800.0,
    origin: float = 0.0,
    n_blocks: Optional[int] = None,
) -> list[float]:
    """Per-block count of trip intervals [entry, entry + direct time] touching the block, max-normalized.

    Block b covers [origin + b*block, origin + (b+1)*block).
    """
    if not block > 0:
        raise InvalidArgument("block must be positive")
    if not requests:
        raise EmptyInput("no requests to build a demand profile from")
    spans = []
    for r in requests:
        s = r.entry_time - origin
        e = s + travel_time(r.origin, r.destination)
        spans.append((math.floor(s / block), math.floor(e / block)))
    last = max(b for _, b in spans)
    n = (last + 1) if n_blocks is None else n_blocks
    diff = np.zeros(n + 1)
    for a, b in spans:
        a, b = max(a, 0), min(b, n - 1)
        if a <= b:
            diff[a] += 1
            diff[b + 1] -= 1
    counts = np.cumsum(diff)[:n]
    top = counts.max() if n else 0.0
    if top <= 0:
        return [0.0] * n
    return (counts / top).tolist()


def expand_profile(profile: Sequence[float], block: float, period_length: float) -> list[float]:
    """Repeat each block value over the periods it covers (period starts decide the block)."""
    n = int(math.ceil(len(profile) * block / period_length - 1e-9))
    return [profile[min(len(profile) - 1, int(k * period_length // block))] for k in range(n)]


# -- availability requirement ----------------------------------------------------------


def availability_requirement(
    fleet_size: int,
    profile: Sequence[float],
    lam: float,
    period_length: float = 1800.0,
) -> AvailabilityRequirement:
    """R(t) = floor(|V| (lam d(t) + 1 - lam))."""
    if not 0.0 <= lam <= 1.0:
        raise InvalidArgument("lambda must lie in [0, 1]")
    # the epsilon keeps exact products like 100 * 0.8 from flooring to 79
    values = tuple(int(math.floor(fleet_size * (lam * d + 1.0 - lam) + 1e-9)) for d in profile)
    return AvailabilityRequirement(period_length, values, lam, tuple(profile))


def _full_day_schedule(instance: LongInstance, max_rounds: int) -> ChargeSchedule:
    # the heuristic plans one charge per vehicle; repeat from each charge's end until nobody needs another
    H = instance.horizon
    sched = ChargeSchedule()
    release = list(instance.release)
    charge = list(instance.initial_charge)
    for _ in range(max_rounds):
        locked = ChargeSchedule({v: [Slot(s.start, s.duration, s.station, True) for s in slots]
                                 for v, slots in sched.items()})
        inst = LongInstance(
            period_length=instance.period_length, requirement=instance.requirement,
            capacity=instance.capacity, vehicles=instance.vehicles, release=release,
            initial_charge=charge, eta=instance.eta, q_est=instance.q_est, prior=instance.prior,
            penalty=instance.penalty, availability=instance.availability,
        )
        out = solve_long_heuristic(inst, locked)
        added = False
        for i, v in enumerate(instance.vehicles):
            new = [s for s in out.slots(v) if not s.locked]
            for s in new:
                sched.add(v, Slot(s.start, s.duration))
                release[i] = s.end
                charge[i] = 1.0
                added = True
        if not added or all(e >= H for e in release):
            break
    return sched


def probe_lambda(
    lam: float,
    fleet_size: int,
    profile: Sequence[float],
    battery: BatteryModel,
    total_capacity: int,
    block: float = 1800.0,
    period_length: float = 300.0,
) -> bool:
    """True when the heuristic finds a full-day plan with no shortfall and no negative charge."""
    periods = expand_profile(profile, block, period_length)
    req = availability_requirement(fleet_size, periods, lam, period_length)
    minutes = period_length / 60.0
    instance = LongInstance(
        period_length=period_length,
        requirement=list(req.values),
        capacity=total_capacity,
        vehicles=list(range(fleet_size)),
        release=[0] * fleet_size,
        initial_charge=[1.0] * fleet_size,
        eta=battery.eta * minutes,
        q_est=battery.q_est * minutes,
    )
    sched = _full_day_schedule(instance, max_rounds=instance.horizon)
    shortfall, negative = long_objective_parts(instance, sched)
    return shortfall <= 1e-9 and negative <= 1e-12


def calibrate_lambda(
    fleet_size: int,
    profile: Sequence[float],
    battery: BatteryModel,
    total_capacity: int,
    step: float = 0.01,
    block: float = 1800.0,
    period_length: float = 300.0,
) -> float:
    """Smallest lam on the grid {0, step, ..., 1} whose requirement the heuristic can meet.

    The probe is a full-day instance from ``profile`` (one value per
    ``block``) with every vehicle full at the start of the day.
    """
    if not step > 0:
        raise InvalidArgument("step must be positive")
    n = int(math.floor(1.0 / step + 1e-9))
    grid = [round(k * step, 12) for k in range(n + 1)]
    if grid[-1] < 1.0:
        grid.append(1.0)
    for lam in grid:
        if probe_lambda(lam, fleet_size, profile, battery, total_capacity, block, period_length):
            return lam
    raise Infeasible("no lambda in [0, 1] gives a feasible charging plan")
