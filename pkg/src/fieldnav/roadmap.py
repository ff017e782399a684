"""Probabilistic roadmap over traversable terrain with energy edge costs."""

from __future__ import annotations

import heapq
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from .errors import NoPath, SamplingExhausted, UntraversableWaypoint
from .terrain import CostOverrides, EnergyParams, TerrainMap, edge_energy, segment_traversable

INF = math.inf


@dataclass
class Roadmap:
    nodes: np.ndarray
    edges: list[dict[int, tuple[float, float]]]
    waypoint_node_ids: list[int]

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    def n_edges(self) -> int:
        return sum(len(e) for e in self.edges)

    def path_cost(self, path) -> float:
        total = 0.0
        for a, b in zip(path[:-1], path[1:]):
            total += self.edges[a][b][0]
        return total

    def to_dict(self) -> dict:
        return {
            "nodes": self.nodes.tolist(),
            "edges": [
                [i, j, cost, length]
                for i, adj in enumerate(self.edges)
                for j, (cost, length) in sorted(adj.items())
            ],
            "waypoint_node_ids": list(self.waypoint_node_ids),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "Roadmap":
        nodes = np.asarray(doc["nodes"], dtype=float).reshape(-1, 2)
        edges: list[dict[int, tuple[float, float]]] = [dict() for _ in range(len(nodes))]
        for i, j, cost, length in doc["edges"]:
            edges[int(i)][int(j)] = (float(cost), float(length))
        return cls(nodes=nodes, edges=edges, waypoint_node_ids=[int(i) for i in doc["waypoint_node_ids"]])

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path) -> "Roadmap":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass
class CostMatrix:
    """Pairwise lowest energy between mission points (index 0..n-1)."""

    costs: np.ndarray
    node_ids: list[int]
    paths: dict[tuple[int, int], list[int]] = field(default_factory=dict)
    warnings: list[dict] = field(default_factory=list)

    @property
    def n(self) -> int:
        return self.costs.shape[0]

    def __getitem__(self, ij):
        return self.costs[ij]


def _sample_free(terrain: TerrainMap, n_samples: int, rng: np.random.Generator) -> np.ndarray:
    xmin, ymin, xmax, ymax = terrain.bounds
    budget = 1000 * n_samples
    attempts = 0
    accepted: list[np.ndarray] = []
    have = 0
    while have < n_samples:
        if attempts >= budget:
            raise SamplingExhausted(f"found {have}/{n_samples} traversable samples in {attempts} draws")
        batch = min(max(2 * (n_samples - have), 64), budget - attempts)
        pts = np.column_stack([rng.uniform(xmin, xmax, batch), rng.uniform(ymin, ymax, batch)])
        attempts += batch
        ok = terrain.traversable(pts)
        good = pts[ok][: n_samples - have]
        accepted.append(good)
        have += len(good)
    return np.vstack(accepted) if accepted else np.empty((0, 2))


def build_prm(
    terrain: TerrainMap,
    params: EnergyParams,
    waypoints,
    n_samples: int = 500,
    k: int = 8,
    seed: int = 0,
    overrides: CostOverrides | None = None,
) -> Roadmap:
    """Build a k-nearest-neighbour PRM whose first nodes are ``waypoints``.

    ``waypoints`` must contain every mission point, home included; its
    entries become nodes ``0..len(waypoints)-1`` in order.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if n_samples < 0:
        raise ValueError("n_samples must be >= 0")
    wps = np.asarray(waypoints, dtype=float).reshape(-1, 2)
    for i, w in enumerate(wps):
        if not terrain.traversable(w)[0]:
            raise UntraversableWaypoint(i, w)
    rng = np.random.default_rng(seed)
    samples = _sample_free(terrain, n_samples, rng) if n_samples > 0 else np.empty((0, 2))
    nodes = np.vstack([wps, samples])
    n = len(nodes)
    edges: list[dict[int, tuple[float, float]]] = [dict() for _ in range(n)]
    if n < 2:
        return Roadmap(nodes=nodes, edges=edges, waypoint_node_ids=list(range(len(wps))))

    kk = min(k + 1, n)
    _, idx = cKDTree(nodes).query(nodes, k=kk)
    idx = np.atleast_2d(idx)
    pairs = set()
    for i in range(n):
        count = 0
        for j in idx[i]:
            j = int(j)
            if j == i or j >= n:
                continue
            pairs.add((min(i, j), max(i, j)))
            count += 1
            if count == k:
                break
    hs = terrain.heights(nodes)
    for i, j in sorted(pairs):
        p, q = nodes[i], nodes[j]
        if not segment_traversable(terrain, p, q):
            continue
        length = math.sqrt(float(np.sum((q - p) ** 2)) + float(hs[j] - hs[i]) ** 2)
        edges[i][j] = (edge_energy(terrain, params, p, q, overrides), length)
        edges[j][i] = (edge_energy(terrain, params, q, p, overrides), length)
    return Roadmap(nodes=nodes, edges=edges, waypoint_node_ids=list(range(len(wps))))


def _dijkstra(roadmap: Roadmap, source: int, target: int | None = None):
    n = roadmap.n_nodes
    dist = [INF] * n
    pred = [-1] * n
    done = [False] * n
    dist[source] = 0.0
    heap = [(0.0, source)]
    while heap:
        d, u = heapq.heappop(heap)
        if done[u]:
            continue
        done[u] = True
        if u == target:
            break
        for v, (cost, _) in roadmap.edges[u].items():
            nd = d + cost
            if nd < dist[v] or (nd == dist[v] and not done[v] and u < pred[v]):
                dist[v] = nd
                pred[v] = u
                heapq.heappush(heap, (nd, v))
    return dist, pred


def _unwind(pred, source, target) -> list[int]:
    path = [target]
    while path[-1] != source:
        path.append(pred[path[-1]])
    path.reverse()
    return path


def _check_node(roadmap: Roadmap, a: int) -> None:
    if not 0 <= a < roadmap.n_nodes:
        raise IndexError(f"node id {a} out of range")


def shortest_path(roadmap: Roadmap, a: int, b: int) -> tuple[list[int], float]:
    """Uniform-cost search; equal-cost frontier ties resolve to the smaller node id."""
    _check_node(roadmap, a)
    _check_node(roadmap, b)
    if a == b:
        return [a], 0.0
    dist, pred = _dijkstra(roadmap, a, b)
    if dist[b] == INF:
        raise NoPath(a, b)
    return _unwind(pred, a, b), dist[b]


def goal_cost_matrix(roadmap: Roadmap, waypoints) -> CostMatrix:
    """All-pairs lowest costs among ``waypoints`` (node ids), with cached paths."""
    ids = [int(w) for w in waypoints]
    for w in ids:
        _check_node(roadmap, w)
    n = len(ids)
    costs = np.zeros((n, n))
    paths: dict[tuple[int, int], list[int]] = {}
    warnings: list[dict] = []
    for i, a in enumerate(ids):
        dist, pred = _dijkstra(roadmap, a)
        for j, b in enumerate(ids):
            if i == j:
                paths[(i, j)] = [a]
                continue
            if a == b:
                costs[i, j] = 0.0
                paths[(i, j)] = [a]
            elif dist[b] == INF:
                costs[i, j] = INF
                warnings.append({"kind": "no_path", "from": i, "to": j, "from_node": a, "to_node": b})
            else:
                costs[i, j] = dist[b]
                paths[(i, j)] = _unwind(pred, a, b)
    return CostMatrix(costs=costs, node_ids=ids, paths=paths, warnings=warnings)
