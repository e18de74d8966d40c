"""Rolling-horizon harness for the overlap bound between long and short planning.

Time advances in steps of one long-horizon cadence T^l, and charge slots
last one step. At step k (now = k) the harness runs, in order:

1. long horizon: a policy may move or add slots starting strictly more than
   ``T_SL`` steps ahead, keeping at most K slots per step; a vehicle that
   already holds a station may only move later and stays inside the short
   window;
2. short horizon: stations are assigned to every slot starting within
   ``T_SL + delta`` steps, with each vehicle's previous station pinned;
3. passenger assignment: every vehicle holding a station is given riders that
   leave it able to reach only that station (the adversarial case).

Vehicles without a station can reach any station, which is what the
release-date buffer D guarantees. A step is infeasible when the short horizon
finds no assignment.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass, field
from typing import Callable, Optional

from .errors import Infeasible, InvalidArgument
from .scheduler_short import ShortInstance, ShortJob, solve_short_exact


@dataclass
class RollingState:
    now: int
    T_SL: int
    delta: int
    capacity: dict[int, int]  # station -> chargers
    slots: dict[int, int] = field(default_factory=dict)  # vehicle -> start step
    station: dict[int, int] = field(default_factory=dict)  # vehicle -> assigned station
    tied: set = field(default_factory=set)  # vehicles that can only reach their station
    cost: dict[int, dict[int, float]] = field(default_factory=dict)

    @property
    def K(self) -> int:
        return sum(self.capacity.values())

    def movable(self, v: int) -> bool:
        return self.slots[v] > self.now + self.T_SL

    def count(self, t: int) -> int:
        return sum(1 for s in self.slots.values() if s == t)

    def move(self, v: int, t: int) -> None:
        """Long-horizon re-time; enforces the freeze line, aggregate capacity and release dates."""
        if t <= self.now + self.T_SL:
            raise InvalidArgument("slot would start inside the frozen window")
        if v in self.slots and not self.movable(v):
            raise InvalidArgument(f"vehicle {v} is frozen")
        if v in self.tied and t < self.slots[v]:
            raise InvalidArgument("a tied vehicle cannot charge before its release date")
        if v in self.tied and t > self.now + self.T_SL + self.delta:
            raise InvalidArgument("a vehicle with a station stays inside the short window")
        if self.count(t) - (1 if self.slots.get(v) == t else 0) >= self.K:
            raise InvalidArgument(f"step {t} is at capacity")
        self.slots[v] = t


@dataclass
class RollingResult:
    steps: int = 0
    infeasible_steps: list[int] = field(default_factory=list)
    assignments: int = 0


LongPolicy = Callable[[RollingState, random.Random], None]


def _short_step(state: RollingState) -> bool:
    hi = state.now + state.T_SL + state.delta
    jobs = []
    for v in sorted(state.slots):
        t = state.slots[v]
        if not (state.now <= t <= hi):
            continue
        if v in state.tied:
            cost = {state.station[v]: state.cost[v][state.station[v]]}
        else:
            cost = dict(state.cost[v])
        jobs.append(ShortJob(v, t, 1, cost, state.station.get(v)))
    try:
        result = solve_short_exact(ShortInstance(jobs, state.capacity))
    except Infeasible:
        return False
    state.station.update(result)
    return True


def run_rolling(
    state: RollingState,
    steps: int,
    policy: LongPolicy,
    rng: Optional[random.Random] = None,
) -> RollingResult:
    rng = rng or random.Random(0)
    out = RollingResult()
    for _ in range(steps):
        # charges that have started leave the system
        for v in [v for v, t in state.slots.items() if t < state.now]:
            del state.slots[v]
            state.station.pop(v, None)
            state.tied.discard(v)
        policy(state, rng)
        if not _short_step(state):
            out.infeasible_steps.append(state.now)
        out.assignments += len(state.station)
        state.tied |= set(state.station)
        out.steps += 1
        state.now += 1
    return out


def random_policy(new_rate: float = 1.5, move_prob: float = 0.5, spread: int = 6) -> LongPolicy:
    """Adds vehicles and re-times movable slots at random, favouring collisions of tied vehicles."""
    counter = [10_000]

    def policy(state: RollingState, rng: random.Random) -> None:
        lo = state.now + state.T_SL + 1
        # re-time movable vehicles, often onto a step already used by a vehicle tied to the same station
        for v in sorted(state.slots):
            if not state.movable(v) or rng.random() > move_prob:
                continue
            targets = list(range(max(lo, state.slots[v] if v in state.tied else lo), lo + spread))
            mates = [state.slots[u] for u in state.tied
                     if u != v and state.station.get(u) == state.station.get(v) and state.slots[u] >= lo]
            if mates and rng.random() < 0.7:
                targets = [t for t in mates if t in targets] or targets
            rng.shuffle(targets)
            for t in targets:
                try:
                    state.move(v, t)
                    break
                except InvalidArgument:
                    continue
        for _ in range(_poisson(rng, new_rate)):
            v = counter[0]
            counter[0] += 1
            state.cost[v] = {s: float(rng.randint(0, 600)) for s in state.capacity}
            for t in rng.sample(range(lo, lo + spread), spread):
                try:
                    state.move(v, t)
                    break
                except InvalidArgument:
                    continue
            else:
                del state.cost[v]

    return policy


def _poisson(rng: random.Random, lam: float) -> int:
    # Knuth's method; lam is small
    L, k, p = math.exp(-lam), 0, 1.0
    while True:
        p *= rng.random()
        if p <= L:
            return k
        k += 1


def random_trial(delta_steps: int, seed: int, steps: int = 30, T_SL: int = 9) -> RollingResult:
    """One randomized run with 2-4 stations of capacity 1-2."""
    rng = random.Random(seed)
    n = rng.randint(2, 4)
    capacity = {s: rng.randint(1, 2) for s in range(n)}
    state = RollingState(now=0, T_SL=T_SL, delta=delta_steps, capacity=capacity)
    policy = random_policy(new_rate=rng.uniform(0.5, 2.5), move_prob=rng.uniform(0.2, 0.9))
    return run_rolling(state, steps, policy, rng)


def case_two_instance(delta_steps: int = 3, T_SL: int = 9) -> RollingResult:
    """Two far-apart single-charger stations; two vehicles end up tied to the first one.

    Step 0 puts vehicle A at T_SL + delta - 1 and vehicle B at T_SL + delta,
    both preferring station 0. At step 1 the long horizon moves A onto B's step.
    """
    state = RollingState(now=0, T_SL=T_SL, delta=delta_steps, capacity={0: 1, 1: 1})
    A, B = 1, 2
    state.cost = {A: {0: 0.0, 1: 5000.0}, B: {0: 0.0, 1: 5000.0}}
    a_start, b_start = T_SL + delta_steps - 1, T_SL + delta_steps

    def policy(st: RollingState, rng) -> None:
        if st.now == 0:
            st.move(A, a_start)
            st.move(B, b_start)
        elif st.now == 1 and st.movable(A):
            # aggregate K = 2 allows A alongside B
            st.move(A, b_start)

    return run_rolling(state, 2, policy)
