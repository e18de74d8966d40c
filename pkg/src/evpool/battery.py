"""Battery charge and discharge model.

Charge levels are on the operator scale: 1.0 is the charge-up-to level and
0.0 is the ``q_min`` buffer above true empty. Times are in minutes unless a
name says otherwise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .errors import DomainError

_BETA_TOL = 1e-10
_GOLDEN = (math.sqrt(5) - 1) / 2


def _continuity_gap(beta: float, Q: float, R: float, T: float) -> float:
    # positive while beta is too small; strictly decreasing in beta
    return (Q / (R * beta)) * (1.0 - math.exp(-beta * (T - R))) - (1.0 - Q)


def _check_curve(Q: float, R: float, T: float) -> None:
    if not 0 < Q < 1:
        raise DomainError(f"Q must lie in (0, 1), got {Q}")
    if not 0 < R < T:
        raise DomainError(f"need 0 < R < T, got R={R}, T={T}")
    if not Q / R > 1 / T:
        raise DomainError(f"need Q/R > 1/T for a concave tail, got Q/R={Q / R:.6g}, 1/T={1 / T:.6g}")


def solve_beta(Q: float, R: float, T: float) -> float:
    """Exponential-tail rate making the charge curve continuous and full at T.

    Bisection on ``(Q/(R b))(1 - exp(-b (T - R))) = 1 - Q``.
    """
    _check_curve(Q, R, T)
    lo, hi = 0.0, 1.0 / (T - R)
    while _continuity_gap(hi, Q, R, T) > 0:
        lo, hi = hi, 2 * hi
    lo = max(lo, 1e-300)
    for _ in range(400):
        mid = 0.5 * (lo + hi)
        if _continuity_gap(mid, Q, R, T) > 0:
            lo = mid
        else:
            hi = mid
        if hi - lo <= _BETA_TOL * max(1.0, hi) * 1e-3:
            break
    return 0.5 * (lo + hi)


@dataclass(frozen=True)
class BatteryModel:
    Q: float = 0.7
    R: float = 15.0
    T: float = 30.0
    eta: float = 1.0 / 30.0
    q_est: float = 1.0 / 600.0
    q_min: float = 0.0
    range_km: float = 180.0
    beta: float = field(init=False)

    def __post_init__(self):
        _check_curve(self.Q, self.R, self.T)
        if not 0 <= self.q_min < self.Q:
            raise DomainError("q_min must lie in [0, Q)")
        if not self.q_est > 0 or not self.eta > 0:
            raise DomainError("q_est and eta must be positive")
        if not self.range_km > 0:
            raise DomainError("range_km must be positive")
        object.__setattr__(self, "beta", solve_beta(self.Q, self.R, self.T))


def charge_curve(model: BatteryModel, t: float) -> float:
    """Charge reached after ``t`` minutes on the charger, starting empty."""
    Q, R, T, b = model.Q, model.R, model.T, model.beta
    if t <= 0:
        return 0.0
    if t <= R:
        return Q * t / R
    c = 1.0 - (Q / (R * b)) * math.exp(-b * (T - R)) * (math.exp(b * (T - t)) - 1.0)
    return min(1.0, max(0.0, c))


def charge_time_from_empty(model: BatteryModel, q: float) -> float:
    """Minutes on the charger to go from empty to ``q`` (inverse of charge_curve)."""
    Q, R, T, b = model.Q, model.R, model.T, model.beta
    if q <= 0:
        return 0.0
    if q <= Q:
        return R * q / Q
    if q >= 1:
        return T
    return T - math.log1p((1.0 - q) * (R * b / Q) * math.exp(b * (T - R))) / b


def avg_cost(model: BatteryModel, q_to: float, d: float, cost_rate: float = 1.0) -> float:
    """Long-run offline cost per minute when always charging from empty up to ``q_to``.

    ``d`` is the fixed detour time per charge; driving time per cycle is ``q_to / q_est``.
    """
    if not q_to > 0:
        raise DomainError("q_to must be positive")
    if q_to > 1 or d < 0:
        raise DomainError("need q_to <= 1 and d >= 0")
    offline = d + charge_time_from_empty(model, q_to)
    return offline / (offline + q_to / model.q_est) * cost_rate


def optimal_charge_to(model: BatteryModel, d: float, cost_rate: float = 1.0) -> float:
    """Charge-up-to level minimizing :func:`avg_cost`.

    A 0.001 grid locates the best cell, then golden-section search refines it.
    With ``d == 0`` every level up to Q is optimal and Q is returned.
    """
    if d < 0:
        raise DomainError("d must be non-negative")
    if d == 0:
        return model.Q
    grid = [i / 1000 for i in range(1, 1001)]
    costs = [avg_cost(model, q, d, cost_rate) for q in grid]
    i = min(range(len(grid)), key=costs.__getitem__)
    lo = grid[max(0, i - 1)]
    hi = grid[min(len(grid) - 1, i + 1)]
    f = lambda q: avg_cost(model, q, d, cost_rate)
    a, b = lo, hi
    x1, x2 = b - _GOLDEN * (b - a), a + _GOLDEN * (b - a)
    f1, f2 = f(x1), f(x2)
    while b - a > 1e-9:
        if f1 <= f2:
            b, x2, f2 = x2, x1, f1
            x1 = b - _GOLDEN * (b - a)
            f1 = f(x1)
        else:
            a, x1, f1 = x1, x2, f2
            x2 = a + _GOLDEN * (b - a)
            f2 = f(x2)
    best = 0.5 * (a + b)
    return min((best, grid[i]), key=f)


def discharge(model: BatteryModel, q: float, distance: float) -> float:
    """Charge after driving ``distance`` meters; may drop below 0 into the buffer."""
    return q - distance / (model.range_km * 1000.0)


def predicted_empty_time(model: BatteryModel, q0: float, t0: float) -> float:
    """Seconds at which charge ``q0`` held at ``t0`` runs out at the estimated rate."""
    return t0 + max(q0, 0.0) / model.q_est * 60.0
