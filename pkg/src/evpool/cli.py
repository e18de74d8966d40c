"""Command-line entry point: ``evpool run | calibrate | place-stations | generate-grid | synth-requests``.

Scenario files are flat ``key = value`` text; relative paths resolve against
the file's directory. Exit codes: 0 success, 1 infeasible, 2 usage or I/O.
"""

from __future__ import annotations

import argparse
import csv
import sys
from dataclasses import replace
from pathlib import Path
from typing import Optional, Sequence

from .battery import BatteryModel
from .benchmark import BenchmarkConfig
from .core import QosPolicy
from .demand import (
    availability_requirement,
    calibrate_lambda,
    demand_profile,
    expand_profile,
    load_requests,
    synth_requests,
    write_requests,
)
from .errors import ConfigError, EvPoolError, Infeasible
from .network import (
    generate_grid,
    load_network,
    load_stations,
    place_stations_greedy,
    place_stations_kmeans,
    write_network,
    write_stations,
)
from .simulator import BUCKET, METHODS, ScenarioConfig, run, write_metrics, write_timeseries

EXIT_OK, EXIT_INFEASIBLE, EXIT_USAGE = 0, 1, 2

# scenario keys -> (ScenarioConfig field, parser)
_FLOAT_KEYS = ["batch", "short_cadence", "long_cadence", "T_SL", "delta", "buffer_D", "day_start", "day_end", "long_window"]
_INT_KEYS = ["fleet_size", "vehicle_capacity", "seed", "max_riders_per_trip", "nearest_vehicle_cap", "trip_cap"]
_BATTERY_KEYS = {"battery_Q": "Q", "battery_R": "R", "battery_T": "T", "eta": "eta", "q_est": "q_est",
                 "q_min": "q_min", "range_km": "range_km"}
_FILE_KEYS = {"nodes", "arcs", "stations", "requests", "synth_profile"}
_OTHER_KEYS = {"grid_rows", "grid_cols", "edge_time", "edge_distance", "synth_seed", "synth_period",
               "max_wait", "max_delay", "initial_charge", "lam", "benchmark_threshold", "benchmark_radius",
               "allow_large_delta", "method"}
KNOWN_KEYS = set(_FLOAT_KEYS) | set(_INT_KEYS) | set(_BATTERY_KEYS) | _FILE_KEYS | _OTHER_KEYS


class UsageError(Exception):
    pass


def parse_config(path) -> dict[str, str]:
    """Read ``key = value`` lines; ``#`` starts a comment. Unknown keys are an error."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc.strerror}") from None
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in KNOWN_KEYS:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        if key in _FILE_KEYS:
            value = str((path.parent / value).resolve()) if not Path(value).is_absolute() else value
        out[key] = value
    return out


def _num(cfg: dict, key: str, kind, default=None):
    if key not in cfg:
        return default
    try:
        return kind(cfg[key])
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {cfg[key]!r}") from None


def _bool(cfg: dict, key: str) -> bool:
    v = cfg.get(key, "false").lower()
    if v not in ("true", "false", "1", "0", "yes", "no"):
        raise ConfigError(f"{key}: expected true or false")
    return v in ("true", "1", "yes")


def _need_file(path: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"file not found: {p}")
    return p


def scenario_from(cfg: dict) -> ScenarioConfig:
    kwargs = {}
    for k in _FLOAT_KEYS:
        v = _num(cfg, k, float)
        if v is not None:
            kwargs[k] = v
    for k in _INT_KEYS:
        v = _num(cfg, k, int)
        if v is not None:
            kwargs[k] = v
    battery = {field: _num(cfg, key, float) for key, field in _BATTERY_KEYS.items() if key in cfg}
    try:
        kwargs["battery"] = BatteryModel(**battery)
        kwargs["qos"] = QosPolicy(_num(cfg, "max_wait", float, 300.0), _num(cfg, "max_delay", float, 900.0))
        kwargs["benchmark"] = BenchmarkConfig(_num(cfg, "benchmark_threshold", float, 0.05),
                                              _num(cfg, "benchmark_radius", float, 900.0))
    except EvPoolError as exc:
        raise ConfigError(str(exc)) from None
    if "initial_charge" in cfg:
        kwargs["initial_charge"] = cfg["initial_charge"].upper()
    if "lam" in cfg:
        kwargs["lam"] = _num(cfg, "lam", float)
    if "method" in cfg:
        kwargs["method"] = cfg["method"].upper()
    kwargs["allow_large_delta"] = _bool(cfg, "allow_large_delta")
    return ScenarioConfig(**kwargs)


def network_from(cfg: dict):
    if "nodes" in cfg or "arcs" in cfg:
        if "nodes" not in cfg or "arcs" not in cfg:
            raise ConfigError("nodes and arcs must be given together")
        stations = _need_file(cfg["stations"]) if "stations" in cfg else None
        return load_network(_need_file(cfg["nodes"]), _need_file(cfg["arcs"]), stations)
    if "grid_rows" in cfg and "grid_cols" in cfg:
        net = generate_grid(_num(cfg, "grid_rows", int), _num(cfg, "grid_cols", int),
                            _num(cfg, "edge_time", float, 60.0), _num(cfg, "edge_distance", float, 500.0))
        if "stations" in cfg:
            net = net.with_stations(load_stations(_need_file(cfg["stations"])))
        return net
    raise ConfigError("config needs either nodes/arcs files or grid_rows/grid_cols")


def _read_profile(path: Path) -> list[float]:
    """One rate (requests per minute) per line, or a CSV whose last column holds it."""
    rates = []
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.reader(fh):
            if not row or not row[-1].strip():
                continue
            try:
                rates.append(float(row[-1]))
            except ValueError:
                if rates:
                    raise ConfigError(f"{path}: bad rate {row[-1]!r}") from None
    return rates


def requests_from(cfg: dict, net, scenario: ScenarioConfig):
    if "requests" in cfg:
        return load_requests(_need_file(cfg["requests"]), net)
    if "synth_profile" in cfg:
        rates = _read_profile(_need_file(cfg["synth_profile"]))
        return synth_requests(net, rates, _num(cfg, "synth_seed", int, scenario.seed),
                              _num(cfg, "synth_period", float, 60.0), scenario.day_start)
    raise ConfigError("config needs requests or synth_profile")


# -- commands ---------------------------------------------------------------------------------


def _fmt_cell(x) -> str:
    return f"{x:.4f}" if isinstance(x, float) else str(x)


def cmd_run(args) -> int:
    cfg = parse_config(args.config)
    scenario = scenario_from(cfg)
    if args.seed is not None:
        scenario = replace(scenario, seed=args.seed)
    methods = [m.strip().upper() for m in args.methods.split(",") if m.strip()]
    bad = [m for m in methods if m not in METHODS]
    if bad or not methods:
        raise UsageError(f"unknown methods {bad}; choose from {', '.join(m.lower() for m in METHODS)}")
    net = network_from(cfg)
    requests = requests_from(cfg, net, scenario)
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise UsageError(f"cannot create {out}: {exc.strerror}") from None
    rows = []
    for m in methods:
        result = run(replace(scenario, method=m), net, requests)
        d = out / m.lower()
        d.mkdir(exist_ok=True)
        write_metrics([(m, scenario.seed, result.metrics)], d / "metrics.csv")
        write_timeseries(result.metrics, d / "timeseries.csv")
        result.log.write_csv(d / "events.csv")
        rows.append((m, scenario.seed, result.metrics))
    write_metrics(rows, out / "metrics.csv")
    header = ["method"] + ["Rate", "WT", "RT", "delay", "Abs", "rider", "shared", "distance_km"]
    table = [header] + [[m] + [_fmt_cell(x) for x in met.row()[:8]] for m, _, met in rows]
    widths = [max(len(r[i]) for r in table) for i in range(len(header))]
    for r in table:
        print("  ".join(c.rjust(w) for c, w in zip(r, widths)))
    return EXIT_OK


def cmd_calibrate(args) -> int:
    cfg = parse_config(args.config)
    scenario = scenario_from(cfg)
    net = network_from(cfg)
    requests = requests_from(cfg, net, scenario)
    n_blocks = int(-(-(scenario.day_end - scenario.day_start) // BUCKET))
    profile = demand_profile(requests, net.travel_time, BUCKET, scenario.day_start, n_blocks)
    lam = calibrate_lambda(scenario.fleet_size, profile, scenario.battery, net.total_capacity,
                           step=args.step, block=BUCKET, period_length=scenario.long_cadence)
    periods = expand_profile(profile, BUCKET, scenario.long_cadence)
    req = availability_requirement(scenario.fleet_size, periods, lam, scenario.long_cadence)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "demand_profile.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t_s", "d"])
        for b, d in enumerate(profile):
            w.writerow([_plain(scenario.day_start + b * BUCKET), repr(float(d))])
    with open(out / "requirement.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t_s", "R"])
        for k, r in enumerate(req.values):
            w.writerow([_plain(scenario.day_start + k * scenario.long_cadence), r])
    (out / "lambda.txt").write_text(f"{lam!r}\n", encoding="utf-8")
    print(f"lambda = {lam}")
    return EXIT_OK


def _plain(x: float) -> str:
    return str(int(x)) if float(x).is_integer() else repr(float(x))


def cmd_place_stations(args) -> int:
    cfg = parse_config(args.config)
    net = network_from(cfg)
    if args.mode == "kmeans":
        scenario = scenario_from(cfg)
        requests = requests_from(cfg, net, scenario)
        endpoints = [n for r in requests for n in (r.origin, r.destination)]
        stations = place_stations_kmeans(net, endpoints, args.k, args.total_capacity, args.seed)
    else:
        stations = place_stations_greedy(net, args.k, args.seed)
    write_stations(stations, args.out)
    print(f"wrote {len(stations)} stations to {args.out}")
    return EXIT_OK


def cmd_generate_grid(args) -> int:
    net = generate_grid(args.rows, args.cols, args.edge_time, args.edge_distance)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_network(net, out / "nodes.csv", out / "arcs.csv")
    print(f"wrote {out / 'nodes.csv'} and {out / 'arcs.csv'}")
    return EXIT_OK


def cmd_synth_requests(args) -> int:
    cfg = parse_config(args.config)
    scenario = scenario_from(cfg)
    net = network_from(cfg)
    if "synth_profile" not in cfg:
        raise ConfigError("synth-requests needs synth_profile in the config")
    requests = synth_requests(net, _read_profile(_need_file(cfg["synth_profile"])),
                              args.seed if args.seed is not None else _num(cfg, "synth_seed", int, scenario.seed),
                              _num(cfg, "synth_period", float, 60.0), scenario.day_start)
    write_requests(requests, args.out)
    print(f"wrote {len(requests)} requests to {args.out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="evpool", description="Electric ridepooling fleet simulator")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="simulate a day for one or more methods")
    r.add_argument("--config", required=True)
    r.add_argument("--methods", default="ice,heuristic,benchmark")
    r.add_argument("--out", required=True)
    r.add_argument("--seed", type=int)
    r.set_defaults(func=cmd_run)

    c = sub.add_parser("calibrate", help="find lambda and write d(t), R(t)")
    c.add_argument("--config", required=True)
    c.add_argument("--out", required=True)
    c.add_argument("--step", type=float, default=0.01)
    c.set_defaults(func=cmd_calibrate)

    s = sub.add_parser("place-stations", help="choose station nodes")
    s.add_argument("--config", required=True)
    s.add_argument("--mode", choices=["kmeans", "greedy"], required=True)
    s.add_argument("--k", type=int, required=True)
    s.add_argument("--total-capacity", type=int, default=None)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_place_stations)

    g = sub.add_parser("generate-grid", help="write a grid network")
    g.add_argument("--rows", type=int, required=True)
    g.add_argument("--cols", type=int, required=True)
    g.add_argument("--edge-time", type=float, default=60.0)
    g.add_argument("--edge-distance", type=float, default=500.0)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_generate_grid)

    q = sub.add_parser("synth-requests", help="draw synthetic requests from a rate profile")
    q.add_argument("--config", required=True)
    q.add_argument("--seed", type=int)
    q.add_argument("--out", required=True)
    q.set_defaults(func=cmd_synth_requests)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    if getattr(args, "total_capacity", None) is None and getattr(args, "mode", None) == "kmeans":
        args.total_capacity = args.k
    try:
        return args.func(args)
    except Infeasible as exc:
        print(f"evpool: infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (UsageError, EvPoolError, OSError) as exc:
        print(f"evpool: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
