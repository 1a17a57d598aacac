"""Urban road network: shortest paths, charging detours and destination proximity.

The graph is undirected with strictly positive edge lengths in kilometres.
Shortest paths are computed with Dijkstra's algorithm; among paths of equal
length the lexicographically smallest node sequence wins, which makes
results independent of edge insertion order.
"""

from __future__ import annotations

import heapq
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Hashable, Iterable, Sequence

import numpy as np

from .errors import ConfigError, NoPath, UnknownNode

NodeId = Hashable


@dataclass(frozen=True)
class Node:
    id: NodeId
    x: float = 0.0
    y: float = 0.0
    restaurant: bool = False
    shopping: bool = False
    supermarket: bool = False


@dataclass(frozen=True)
class Route:
    nodes: tuple
    length: float


@dataclass
class RoadNetwork:
    """Weighted undirected road graph.

    The network is treated as read-only once constructed; every query is a
    pure function of the stored adjacency, so a single instance may be shared
    between threads.
    """

    nodes: dict = field(default_factory=dict)
    _adj: dict = field(default_factory=dict, repr=False)

    @classmethod
    def from_lists(cls, nodes: Iterable[Node], edges: Iterable[tuple]) -> "RoadNetwork":
        net = cls()
        for node in nodes:
            if node.id in net.nodes:
                raise ConfigError(f"duplicate node id {node.id!r}")
            for flag in (node.restaurant, node.shopping, node.supermarket):
                if not isinstance(flag, (bool, np.bool_)):
                    raise ConfigError(f"amenity flags of node {node.id!r} must be booleans")
            net.nodes[node.id] = node
            net._adj[node.id] = {}
        for a, b, length in edges:
            net._add_edge(a, b, float(length))
        return net

    def _add_edge(self, a, b, length: float) -> None:
        for end in (a, b):
            if end not in self.nodes:
                raise ConfigError(f"edge references unknown node {end!r}")
        if not (length > 0.0) or not math.isfinite(length):
            raise ConfigError(f"edge {a!r}-{b!r} must have positive finite length, got {length}")
        if a == b:
            raise ConfigError(f"self-loop at node {a!r}")
        # parallel edges collapse to the shortest one
        best = min(length, self._adj[a].get(b, math.inf))
        self._adj[a][b] = best
        self._adj[b][a] = best

    def neighbors(self, node) -> dict:
        self._check(node)
        return self._adj[node]

    def edges(self) -> list[tuple]:
        out, seen = [], set()
        for a, nbrs in self._adj.items():
            for b, length in nbrs.items():
                key = frozenset((a, b))
                if key not in seen:
                    seen.add(key)
                    out.append((a, b, length))
        return out

    def _check(self, *ids) -> None:
        for node in ids:
            if node not in self.nodes:
                raise UnknownNode(node)

    def bounding_box(self) -> tuple[float, float, float, float]:
        xs = [n.x for n in self.nodes.values()]
        ys = [n.y for n in self.nodes.values()]
        return min(xs), min(ys), max(xs), max(ys)

    def node_ids(self) -> list:
        return list(self.nodes)

    # -- queries -----------------------------------------------------------

    def distances_from(self, origin) -> dict:
        """Shortest-path lengths from ``origin`` to every reachable node."""
        self._check(origin)
        dist = {origin: 0.0}
        done = set()
        heap = [(0.0, 0, origin)]
        counter = 1
        while heap:
            d, _, u = heapq.heappop(heap)
            if u in done:
                continue
            done.add(u)
            for v, length in self._adj[u].items():
                nd = d + length
                if nd < dist.get(v, math.inf):
                    dist[v] = nd
                    heapq.heappush(heap, (nd, counter, v))
                    counter += 1
        return dist

    def distance(self, a, b) -> float:
        """Shortest-path length, ``inf`` when unreachable."""
        self._check(a, b)
        return self.distances_from(a).get(b, math.inf)

    def distance_matrix(self, ids: Sequence | None = None) -> np.ndarray:
        """Dense all-pairs distances over ``ids`` (default: all nodes)."""
        ids = list(self.nodes) if ids is None else list(ids)
        out = np.full((len(ids), len(ids)), np.inf)
        for i, a in enumerate(ids):
            dist = self.distances_from(a)
            for j, b in enumerate(ids):
                out[i, j] = dist.get(b, np.inf)
        return out


def shortest_path(net: RoadNetwork, origin, dest) -> Route:
    """Minimal-length route; ties go to the lexicographically smallest sequence.

    Heap entries carry the full node sequence as a secondary key. Since edge
    lengths are positive, two distinct equal-length paths to the same node
    differ at some position before either ends, so extending both by the same
    edge preserves their lexicographic order.
    """
    net._check(origin, dest)
    best: dict = {origin: (0.0, (origin,))}
    done = set()
    heap = [(0.0, (origin,))]
    while heap:
        d, path = heapq.heappop(heap)
        u = path[-1]
        if u in done:
            continue
        done.add(u)
        if u == dest:
            return Route(nodes=path, length=d)
        for v, length in net._adj[u].items():
            if v in done:
                continue
            cand = (d + length, path + (v,))
            if v not in best or cand < best[v]:
                best[v] = cand
                heapq.heappush(heap, cand)
    raise NoPath(f"no path from {origin!r} to {dest!r}")


def deviating_distance(net: RoadNetwork, origin, dest, station) -> float:
    """Extra kilometres driven when detouring through ``station``."""
    net._check(origin, dest, station)
    from_origin = net.distances_from(origin)
    direct = from_origin.get(dest, math.inf)
    if math.isinf(direct):
        raise NoPath(f"no path from {origin!r} to {dest!r}")
    leg1 = from_origin.get(station, math.inf)
    leg2 = net.distances_from(station).get(dest, math.inf)
    if math.isinf(leg1) or math.isinf(leg2):
        raise NoPath(f"station {station!r} not reachable on trip {origin!r}->{dest!r}")
    # float rounding can leave a -1e-16 residue when the station is on the route
    return max(leg1 + leg2 - direct, 0.0)


def destination_indicator(net: RoadNetwork, dest, station, d_th: float) -> int:
    if d_th < 0:
        raise ValueError("d_th must be non-negative")
    return int(net.distance(dest, station) <= d_th)


def load_network(path: str | Path) -> RoadNetwork:
    """Read a road network from JSON ``{"nodes": [...], "edges": [...]}``."""
    try:
        raw = json.loads(Path(path).read_text())
        nodes = [
            Node(
                id=n["id"],
                x=float(n.get("x", 0.0)),
                y=float(n.get("y", 0.0)),
                restaurant=n.get("restaurant", False),
                shopping=n.get("shopping", False),
                supermarket=n.get("supermarket", False),
            )
            for n in raw["nodes"]
        ]
        edges = [(e["a"], e["b"], e["length"]) for e in raw["edges"]]
    except (OSError, KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"cannot read road network {path}: {exc}") from exc
    return RoadNetwork.from_lists(nodes, edges)
