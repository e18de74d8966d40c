"""Road graph, travel-time queries, charge-station placement and grid generation.

Node ids are integers. Travel times are in seconds, distances in meters.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components, dijkstra

from .errors import InvalidArgument, ParseError, UnknownNode, ValidationError

# Above this many nodes travel times are computed per target on demand.
ALL_PAIRS_LIMIT = 2500
_TIE_TOL = 1e-9


@dataclass(frozen=True)
class Station:
    id: int
    node: int
    capacity: int

    def __post_init__(self):
        if self.capacity < 1:
            raise ValidationError(f"station {self.id}: capacity must be >= 1")


@dataclass(frozen=True)
class Arc:
    tail: int
    head: int
    travel_time: float
    distance: float


class RoadNetwork:
    """Immutable directed road graph with cached shortest travel times.

    Parallel arcs are collapsed to the fastest one.
    """

    def __init__(
        self,
        nodes: Sequence[int],
        arcs: Iterable[Arc],
        stations: Sequence[Station] = (),
        coords: dict[int, tuple[float, float]] | None = None,
    ):
        self.nodes = sorted(int(n) for n in nodes)
        if len(set(self.nodes)) != len(self.nodes):
            raise ValidationError("duplicate node id")
        self._index = {n: i for i, n in enumerate(self.nodes)}
        self.coords = dict(coords or {})

        best: dict[tuple[int, int], Arc] = {}
        for arc in arcs:
            if arc.tail not in self._index or arc.head not in self._index:
                raise ValidationError(f"arc {arc.tail}->{arc.head} references an undeclared node")
            if not arc.travel_time > 0:
                raise ValidationError(f"arc {arc.tail}->{arc.head}: travel time must be positive")
            if arc.distance < 0:
                raise ValidationError(f"arc {arc.tail}->{arc.head}: negative distance")
            if arc.tail == arc.head:
                continue
            key = (arc.tail, arc.head)
            if key not in best or arc.travel_time < best[key].travel_time:
                best[key] = arc
        self.arcs = [best[k] for k in sorted(best)]
        self._arc = best
        self._succ: dict[int, list[int]] = {n: [] for n in self.nodes}
        for tail, head in sorted(best):
            self._succ[tail].append(head)

        n = len(self.nodes)
        rows = [self._index[a.tail] for a in self.arcs]
        cols = [self._index[a.head] for a in self.arcs]
        self._graph = csr_matrix(
            ([a.travel_time for a in self.arcs], (rows, cols)), shape=(n, n)
        )
        if n > 1:
            ncomp, _ = connected_components(self._graph, directed=True, connection="strong")
            if ncomp != 1:
                raise ValidationError("road network is not strongly connected")

        seen_nodes = set()
        seen_ids = set()
        for s in stations:
            if s.node not in self._index:
                raise ValidationError(f"station {s.id} at unknown node {s.node}")
            if s.node in seen_nodes:
                raise ValidationError(f"duplicate station node {s.node}")
            if s.id in seen_ids:
                raise ValidationError(f"duplicate station id {s.id}")
            seen_nodes.add(s.node)
            seen_ids.add(s.id)
        self.stations = list(stations)

        self._matrix: np.ndarray | None = None
        self._to_target: dict[int, np.ndarray] = {}
        self._rows: dict[int, list[float]] = {}

    # -- construction helpers -------------------------------------------------

    def with_stations(self, stations: Sequence[Station]) -> "RoadNetwork":
        net = RoadNetwork(self.nodes, self.arcs, stations, self.coords)
        net._matrix = self._matrix
        net._to_target = self._to_target
        net._rows = self._rows
        return net

    def __len__(self):
        return len(self.nodes)

    def __contains__(self, node) -> bool:
        return node in self._index

    def station(self, station_id: int) -> Station:
        for s in self.stations:
            if s.id == station_id:
                return s
        raise KeyError(station_id)

    @property
    def total_capacity(self) -> int:
        return sum(s.capacity for s in self.stations)

    def arc(self, tail: int, head: int) -> Arc:
        return self._arc[(tail, head)]

    def successors(self, node: int) -> list[int]:
        return self._succ[node]

    # -- travel times -----------------------------------------------------------

    def _idx(self, node: int) -> int:
        try:
            return self._index[node]
        except KeyError:
            raise UnknownNode(node) from None

    @property
    def matrix(self) -> np.ndarray:
        """All-pairs travel-time matrix in node-index order (small networks only)."""
        if self._matrix is None:
            if len(self.nodes) > ALL_PAIRS_LIMIT:
                raise InvalidArgument("network too large for an all-pairs matrix")
            self._matrix = dijkstra(self._graph, directed=True)
        return self._matrix

    def _column(self, target: int) -> np.ndarray:
        """Travel times from every node to ``target``."""
        j = self._idx(target)
        if len(self.nodes) <= ALL_PAIRS_LIMIT:
            return self.matrix[:, j]
        col = self._to_target.get(j)
        if col is None:
            col = dijkstra(self._graph.T.tocsr(), directed=True, indices=j)
            self._to_target[j] = col
        return col

    def row(self, source: int) -> list[float]:
        """Travel times from ``source`` to every node, as a list in index order."""
        r = self._rows.get(source)
        if r is None:
            i = self._idx(source)
            if len(self.nodes) <= ALL_PAIRS_LIMIT:
                r = self.matrix[i].tolist()
            else:
                r = dijkstra(self._graph, directed=True, indices=i).tolist()
            self._rows[source] = r
        return r

    def index(self, node: int) -> int:
        return self._idx(node)

    def travel_time(self, a: int, b: int) -> float:
        if a == b:
            self._idx(a)
            return 0.0
        return self.row(a)[self._idx(b)]

    def path(self, a: int, b: int) -> list[int]:
        """Minimum travel-time node sequence from ``a`` to ``b``.

        Among equal-time paths the lexicographically smallest sequence wins:
        at each step the smallest successor that stays on a shortest path.
        """
        col = self._column(b)
        self._idx(a)
        out = [a]
        u = a
        while u != b:
            remaining = col[self._index[u]]
            for v in self._succ[u]:
                w = self._arc[(u, v)].travel_time
                if abs(w + col[self._index[v]] - remaining) <= _TIE_TOL * max(1.0, remaining):
                    out.append(v)
                    u = v
                    break
            else:  # pragma: no cover - guarded by strong connectivity
                raise ValidationError(f"no path from {a} to {b}")
        return out

    def path_distance(self, path: Sequence[int]) -> float:
        return sum(self._arc[(u, v)].distance for u, v in zip(path, path[1:]))

    def nearest_station(self, node: int) -> Station:
        """Station with the smallest travel time from ``node`` (ties: smallest id)."""
        if not self.stations:
            raise ValidationError("network has no stations")
        r = self.row(node)
        return min(self.stations, key=lambda s: (r[self._index[s.node]], s.id))


def shortest_travel_time(net: RoadNetwork, a: int, b: int) -> float:
    return net.travel_time(a, b)


def shortest_path(net: RoadNetwork, a: int, b: int) -> list[int]:
    return net.path(a, b)


# -- file formats -----------------------------------------------------------------


def _read_rows(path: Path, header: list[str]) -> list[list[str]]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            got = next(reader)
        except StopIteration:
            raise ParseError(f"{path}: missing header") from None
        if [h.strip() for h in got] != header:
            raise ParseError(f"{path}: expected header {','.join(header)}, got {','.join(got)}")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise ParseError(f"{path}:{lineno}: expected {len(header)} fields")
            rows.append([c.strip() for c in row])
        return rows


def _num(value: str, kind, where: str):
    try:
        return kind(value)
    except ValueError:
        raise ParseError(f"{where}: bad value {value!r}") from None


def load_stations(path) -> list[Station]:
    path = Path(path)
    out = []
    for i, (sid, node, cap) in enumerate(_read_rows(path, ["station_id", "node_id", "capacity"])):
        where = f"{path}:{i + 2}"
        out.append(Station(_num(sid, int, where), _num(node, int, where), _num(cap, int, where)))
    return out


def load_network(node_file, arc_file, station_file=None) -> RoadNetwork:
    node_file, arc_file = Path(node_file), Path(arc_file)
    nodes, coords = [], {}
    for i, (nid, x, y) in enumerate(_read_rows(node_file, ["node_id", "x", "y"])):
        where = f"{node_file}:{i + 2}"
        n = _num(nid, int, where)
        nodes.append(n)
        coords[n] = (_num(x, float, where), _num(y, float, where))
    arcs = []
    for i, row in enumerate(_read_rows(arc_file, ["from", "to", "travel_time_s", "distance_m"])):
        where = f"{arc_file}:{i + 2}"
        arcs.append(
            Arc(_num(row[0], int, where), _num(row[1], int, where),
                _num(row[2], float, where), _num(row[3], float, where))
        )
    stations = load_stations(station_file) if station_file is not None else []
    return RoadNetwork(nodes, arcs, stations, coords)


def _fmt(x: float) -> str:
    return repr(float(x)) if not float(x).is_integer() else str(int(x))


def write_stations(stations: Sequence[Station], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["station_id", "node_id", "capacity"])
        for s in stations:
            w.writerow([s.id, s.node, s.capacity])


def write_network(net: RoadNetwork, node_file, arc_file, station_file=None) -> None:
    with open(node_file, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["node_id", "x", "y"])
        for n in net.nodes:
            x, y = net.coords.get(n, (0.0, 0.0))
            w.writerow([n, _fmt(x), _fmt(y)])
    with open(arc_file, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["from", "to", "travel_time_s", "distance_m"])
        for a in net.arcs:
            w.writerow([a.tail, a.head, _fmt(a.travel_time), _fmt(a.distance)])
    if station_file is not None:
        write_stations(net.stations, station_file)


# -- synthetic networks -------------------------------------------------------------


def generate_grid(rows: int, cols: int, edge_time: float = 60.0, edge_distance: float = 500.0) -> RoadNetwork:
    """Bidirectional ``rows`` x ``cols`` grid; node ``r*cols + c`` sits at (c, r) * edge_distance."""
    if rows < 2 or cols < 2:
        raise InvalidArgument("grid needs at least 2 rows and 2 columns")
    if not edge_time > 0 or edge_distance < 0:
        raise InvalidArgument("edge_time must be positive and edge_distance non-negative")
    nodes = list(range(rows * cols))
    coords = {r * cols + c: (c * edge_distance, r * edge_distance) for r in range(rows) for c in range(cols)}
    arcs = []
    for r in range(rows):
        for c in range(cols):
            u = r * cols + c
            if c + 1 < cols:
                arcs += [Arc(u, u + 1, edge_time, edge_distance), Arc(u + 1, u, edge_time, edge_distance)]
            if r + 1 < rows:
                arcs += [Arc(u, u + cols, edge_time, edge_distance), Arc(u + cols, u, edge_time, edge_distance)]
    return RoadNetwork(nodes, arcs, (), coords)


# -- station placement ---------------------------------------------------------------


def allocate_capacity(weights: Sequence[float], total: int) -> list[int]:
    """Split ``total`` proportionally to ``weights`` by largest remainder, each share >= 1."""
    k = len(weights)
    if total < k:
        raise InvalidArgument("total capacity must be at least the number of stations")
    wsum = float(sum(weights))
    quotas = [total * w / wsum if wsum > 0 else total / k for w in weights]
    alloc = [max(1, math.floor(q)) for q in quotas]
    while sum(alloc) > total:
        j = min((j for j in range(k) if alloc[j] > 1), key=lambda j: (quotas[j] - alloc[j], j))
        alloc[j] -= 1
    while sum(alloc) < total:
        j = max(range(k), key=lambda j: (quotas[j] - alloc[j], -j))
        alloc[j] += 1
    return alloc


def _kmedoids_once(nodes, weights, dist, k, rng):
    """One weighted Lloyd-style k-medoids run; ``dist[i][j]`` is travel time i -> j."""
    m = len(nodes)
    # k-means++ style seeding on travel time
    first = int(rng.choice(m, p=weights / weights.sum()))
    centers = [first]
    while len(centers) < k:
        d = np.min(dist[:, centers], axis=1) ** 2 * weights
        d[centers] = 0.0
        if d.sum() <= 0:
            rest = [i for i in range(m) if i not in centers]
            centers.append(rest[int(rng.integers(len(rest)))])
        else:
            centers.append(int(rng.choice(m, p=d / d.sum())))
    labels = None
    for _ in range(100):
        new_labels = np.argmin(dist[:, centers], axis=1)
        if labels is not None and np.array_equal(new_labels, labels):
            break
        labels = new_labels
        new_centers = []
        for j in range(k):
            members = np.flatnonzero(labels == j)
            if len(members) == 0:
                new_centers.append(centers[j])
                continue
            cost = (weights[members][:, None] * dist[np.ix_(members, members)]).sum(axis=0)
            new_centers.append(int(members[np.argmin(cost)]))
        if new_centers == centers:
            break
        centers = new_centers
    labels = np.argmin(dist[:, centers], axis=1)
    cost = float(sum(weights[i] * dist[i, centers[labels[i]]] for i in range(m)))
    return cost, centers, labels


def place_stations_kmeans(
    net: RoadNetwork,
    endpoints: Sequence[int],
    k: int,
    total_capacity: int,
    seed: int = 0,
    n_init: int = 5,
) -> list[Station]:
    """Weighted k-medoids over endpoint nodes using network travel time.

    Each cluster's medoid becomes a station; capacity follows cluster weight.
    """
    if k < 1:
        raise InvalidArgument("k must be >= 1")
    if not endpoints:
        raise InvalidArgument("no endpoints given")
    counts: dict[int, int] = {}
    for e in endpoints:
        net.index(e)
        counts[e] = counts.get(e, 0) + 1
    nodes = sorted(counts)
    if k > len(nodes):
        raise InvalidArgument(f"k={k} exceeds the {len(nodes)} distinct endpoint nodes")
    if total_capacity < k:
        raise InvalidArgument("total capacity must be at least k")
    weights = np.array([counts[n] for n in nodes], dtype=float)
    idx = [net.index(n) for n in nodes]
    dist = np.array([[net.row(a)[j] for j in idx] for a in nodes])

    rng = np.random.default_rng(seed)
    best = None
    for _ in range(n_init):
        cost, centers, labels = _kmedoids_once(nodes, weights, dist, k, rng)
        key = (round(cost, 9), sorted(nodes[c] for c in centers))
        if best is None or key < best[0]:
            best = (key, centers, labels)
    _, centers, labels = best
    cluster_w = [float(weights[labels == j].sum()) for j in range(k)]
    order = sorted(range(k), key=lambda j: nodes[centers[j]])
    caps = allocate_capacity([cluster_w[j] for j in order], total_capacity)
    return [Station(i, nodes[centers[j]], caps[i]) for i, j in enumerate(order)]


def place_stations_greedy(net: RoadNetwork, k: int, seed: int = 0) -> list[Station]:
    """Max-min dispersion placement of capacity-1 stations; first one uniformly at random."""
    if k < 1 or k > len(net.nodes):
        raise InvalidArgument(f"k must be in [1, {len(net.nodes)}]")
    rng = np.random.default_rng(seed)
    placed = [net.nodes[int(rng.integers(len(net.nodes)))]]
    nearest = {n: net.travel_time(n, placed[0]) for n in net.nodes}
    while len(placed) < k:
        taken = set(placed)
        nxt = min((n for n in net.nodes if n not in taken), key=lambda n: (-nearest[n], n))
        placed.append(nxt)
        for n in net.nodes:
            nearest[n] = min(nearest[n], net.travel_time(n, nxt))
    return [Station(i, node, 1) for i, node in enumerate(placed)]
