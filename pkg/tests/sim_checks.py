"""Shared scenario and invariant checks for simulator runs."""

import math

import numpy as np

from evpool.battery import BatteryModel
from evpool.demand import synth_requests
from evpool.network import Station, generate_grid

RUSH_BATTERY = BatteryModel(range_km=90, q_est=1 / 300)


def rush_hour_network():
    """10x10 grid, one-minute 500 m edges, four 5-charger stations inset from the corners."""
    net = generate_grid(10, 10, edge_time=60, edge_distance=500)
    return net.with_stations([Station(0, 22, 5), Station(1, 27, 5), Station(2, 72, 5), Station(3, 77, 5)])


def rush_hour_profile():
    """Requests per minute from 05:00 to midnight with morning and evening peaks."""
    h = 5 + np.arange(19 * 60) / 60
    rate = 0.4 + 4.5 * np.exp(-0.5 * ((h - 8.5) / 1.2) ** 2) + 4.0 * np.exp(-0.5 * ((h - 17.5) / 1.2) ** 2)
    return rate.tolist()


def rush_hour_requests(net, seed):
    return synth_requests(net, rush_hour_profile(), seed=seed, start=5 * 3600)


def qos_violations(result, requests, net, qos, tol=1e-6):
    by_id = {r.id: r for r in requests}
    pick = {e.request: e.time for e in result.log if e.kind == "pickup"}
    bad = 0
    for e in result.log:
        if e.kind != "dropoff":
            continue
        r = by_id[e.request]
        wait = pick[e.request] - r.entry_time
        delay = e.time - r.entry_time - net.travel_time(r.origin, r.destination)
        bad += (wait > qos.max_wait + tol) + (delay > qos.max_delay + tol)
    return bad


def occupancy_violations(result, net):
    """Instants at which a station hosts more charging vehicles than it has chargers."""
    # ends sort before starts at the same instant
    ev = sorted(((e.time, 1 if e.kind == "charge_start" else -1, e.station) for e in result.log
                 if e.kind in ("charge_start", "charge_end")), key=lambda x: (x[0], x[1]))
    occ, bad = {}, 0
    for _, d, s in ev:
        occ[s] = occ.get(s, 0) + d
        bad += occ[s] > net.station(s).capacity
    return bad


def reconstruction_error(result, battery, drains=True):
    """Largest gap between the logged state and initial charge - odometer drain + logged charging."""
    rate = battery.eta / 60
    open_at, spans = {}, {}
    for e in result.log:
        if e.kind == "charge_start":
            open_at[e.vehicle] = e.time
        elif e.kind == "charge_end":
            spans.setdefault(e.vehicle, []).append((open_at.pop(e.vehicle), e.time))
    for v, s in open_at.items():
        spans.setdefault(v, []).append((s, math.inf))
    err = 0.0
    for t, v, q, odo in result.trace:
        gained = sum(rate * max(0.0, min(t, b) - a) for a, b in spans.get(v, []))
        drained = odo / (battery.range_km * 1000) if drains else 0.0
        err = max(err, abs(result.initial_charge[v] - drained + gained - q))
    return err


def pickups_precede_dropoffs(result):
    picked = set()
    for e in result.log:
        if e.kind == "pickup":
            picked.add(e.request)
        elif e.kind == "dropoff" and e.request not in picked:
            return False
    return True
