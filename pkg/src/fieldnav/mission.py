"""Waypoint ordering (asymmetric TSP) and reference-path stitching."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import Disconnected, MissingCachedPath
from .roadmap import CostMatrix, Roadmap
from .terrain import TerrainMap

EXACT_MAX = 12


@dataclass
class Tour:
    order: list[int]
    total_cost: float

    def to_dict(self) -> dict:
        return {"order": list(self.order), "total_cost": self.total_cost}


def tour_cost(costs, order) -> float:
    """Left-to-right sum of consecutive legs."""
    c = np.asarray(costs, dtype=float)
    total = 0.0
    for a, b in zip(order[:-1], order[1:]):
        total += float(c[a, b])
    return total


def _as_array(costs) -> np.ndarray:
    if isinstance(costs, CostMatrix):
        return np.asarray(costs.costs, dtype=float)
    return np.asarray(costs, dtype=float)


def held_karp(c: np.ndarray, home: int) -> list[int]:
    """Exact minimum-cost closed tour from ``home`` by subset dynamic programming."""
    m = c.shape[0]
    others = [i for i in range(m) if i != home]
    n = len(others)
    sub = c[np.ix_(others, others)]
    from_home = c[home, others]
    to_home = c[others, home]
    full = 1 << n
    dp = np.full((full, n), np.inf)
    parent = np.full((full, n), -1, dtype=np.int64)
    members = ((np.arange(full)[:, None] >> np.arange(n)) & 1).astype(bool)
    for j in range(n):
        dp[1 << j, j] = from_home[j]
    for mask in range(1, full):
        if mask & (mask - 1) == 0:
            continue
        for j in range(n):
            bit = 1 << j
            if not mask & bit:
                continue
            prev = mask ^ bit
            cand = np.where(members[prev], dp[prev] + sub[:, j], np.inf)
            i = int(np.argmin(cand))
            dp[mask, j] = cand[i]
            parent[mask, j] = i
    last = dp[full - 1] + to_home
    j = int(np.argmin(last))
    if not np.isfinite(last[j]):
        raise Disconnected("no finite tour through all waypoints")
    seq = []
    mask = full - 1
    while j >= 0:
        seq.append(j)
        pj = int(parent[mask, j])
        mask ^= 1 << j
        j = pj
    seq.reverse()
    return [home] + [others[j] for j in seq] + [home]


def nearest_neighbor(c: np.ndarray, home: int) -> list[int]:
    m = c.shape[0]
    left = [i for i in range(m) if i != home]
    order = [home]
    cur = home
    while left:
        nxt = min(left, key=lambda j: (c[cur, j], j))
        order.append(nxt)
        left.remove(nxt)
        cur = nxt
    order.append(home)
    return order


def or_opt(c: np.ndarray, order: list[int]) -> list[int]:
    """Relocate runs of 1-3 consecutive stops (orientation kept) until no move improves.

    Only forward-orientation moves are tried, so every delta is exact under
    asymmetric costs.
    """
    route = list(order[1:-1])
    home = order[0]
    improved = True
    while improved:
        improved = False
        for seg in (1, 2, 3):
            n = len(route)
            if seg >= n:
                continue
            i = 0
            while i + seg <= n:
                full = [home] + route + [home]
                a = i + 1
                b = i + seg
                prev, first, last, nxt = full[a - 1], full[a], full[b], full[b + 1]
                removed = c[prev, first] + c[last, nxt] - c[prev, nxt]
                rest = [home] + route[:i] + route[i + seg:] + [home]
                best_delta, best_pos = -1e-12, None
                for pos in range(len(rest) - 1):
                    if pos == i:
                        continue
                    u, v = rest[pos], rest[pos + 1]
                    added = c[u, first] + c[last, v] - c[u, v]
                    delta = added - removed
                    if delta < best_delta:
                        best_delta, best_pos = delta, pos
                if best_pos is not None:
                    moved = route[i:i + seg]
                    base = route[:i] + route[i + seg:]
                    route = base[:best_pos] + moved + base[best_pos:]
                    improved = True
                i += 1
    return [home] + route + [home]


def solve_tour(costs, home: int = 0) -> Tour:
    """Closed tour from ``home`` through every other index of the cost matrix.

    Up to 12 waypoints the optimum is exact; beyond that a nearest-neighbour
    tour is refined by Or-opt.
    """
    c = _as_array(costs)
    m = c.shape[0]
    if m < 2:
        raise ValueError("need at least one waypoint besides home")
    if not 0 <= home < m:
        raise IndexError("home index out of range")
    n = m - 1
    if n == 1:
        w = 1 - home
        order = [home, w, home]
    elif n <= EXACT_MAX:
        order = held_karp(c, home)
    else:
        order = or_opt(c, nearest_neighbor(c, home))
    total = tour_cost(c, order)
    if not math.isfinite(total):
        raise Disconnected("tour uses an unreachable leg")
    return Tour(order=order, total_cost=total)


@dataclass
class ReferencePath:
    points: np.ndarray
    arc: np.ndarray
    sources: list[int]
    stops: list[int]
    order: list[int] = field(default_factory=list)

    def __post_init__(self):
        self._seg = np.diff(self.points, axis=0)
        self._seg_len2 = np.einsum("ij,ij->i", self._seg, self._seg) if len(self.points) > 1 else np.zeros(0)

    @property
    def total_length(self) -> float:
        return float(self.arc[-1])

    @property
    def n_legs(self) -> int:
        return len(self.stops) - 1

    def leg_range(self, leg: int) -> tuple[float, float]:
        return float(self.arc[self.stops[leg]]), float(self.arc[self.stops[leg + 1]])

    def leg_points(self, leg: int) -> np.ndarray:
        return self.points[self.stops[leg]: self.stops[leg + 1] + 1]

    def _locate(self, s: float) -> int:
        i = int(np.searchsorted(self.arc, s, side="right")) - 1
        return min(max(i, 0), max(len(self.points) - 2, 0))

    def point_at(self, s: float) -> np.ndarray:
        if len(self.points) == 1:
            return self.points[0].copy()
        s = min(max(s, 0.0), self.total_length)
        i = self._locate(s)
        span = self.arc[i + 1] - self.arc[i]
        t = 0.0 if span <= 0 else (s - self.arc[i]) / span
        return self.points[i] + t * self._seg[i]

    def tangent_at(self, s: float) -> np.ndarray:
        if len(self.points) == 1:
            return np.array([1.0, 0.0])
        i = self._locate(min(max(s, 0.0), self.total_length))
        d = self._seg[i]
        return d / math.sqrt(self._seg_len2[i])

    def project(self, p, s_lo: float = 0.0, s_hi: float | None = None) -> tuple[float, float, int]:
        """Nearest point to ``p`` among path points with arc length in [s_lo, s_hi].

        Returns ``(s, distance, segment_index)``.
        """
        if s_hi is None:
            s_hi = self.total_length
        if len(self.points) == 1:
            return 0.0, float(np.hypot(*(np.asarray(p) - self.points[0]))), 0
        i0 = self._locate(s_lo)
        i1 = self._locate(s_hi)
        a = self.points[i0:i1 + 1]
        d = self._seg[i0:i1 + 1]
        l2 = self._seg_len2[i0:i1 + 1]
        rel = np.asarray(p, dtype=float) - a
        t = np.einsum("ij,ij->i", rel, d) / l2
        arc0 = self.arc[i0:i1 + 1]
        span = self.arc[i0 + 1:i1 + 2] - arc0
        lo = np.clip((s_lo - arc0) / span, 0.0, 1.0)
        hi = np.clip((s_hi - arc0) / span, 0.0, 1.0)
        t = np.minimum(np.maximum(t, lo), hi)
        closest = a + t[:, None] * d
        dist = np.hypot(closest[:, 0] - p[0], closest[:, 1] - p[1])
        k = int(np.argmin(dist))
        return float(arc0[k] + t[k] * span[k]), float(dist[k]), i0 + k

    def to_dict(self) -> dict:
        return {
            "points": self.points.tolist(),
            "arc": self.arc.tolist(),
            "sources": list(self.sources),
            "stops": list(self.stops),
            "order": list(self.order),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "ReferencePath":
        return cls(
            points=np.asarray(doc["points"], dtype=float).reshape(-1, 2),
            arc=np.asarray(doc["arc"], dtype=float),
            sources=[int(s) for s in doc["sources"]],
            stops=[int(s) for s in doc["stops"]],
            order=[int(s) for s in doc.get("order", [])],
        )

    def dumps(self) -> str:
        return json.dumps(self.to_dict())


def _arc_lengths(points: np.ndarray, terrain: TerrainMap | None) -> np.ndarray:
    seg = np.diff(points, axis=0)
    d2 = np.einsum("ij,ij->i", seg, seg)
    if terrain is not None:
        dh = np.diff(terrain.heights(points))
        d2 = d2 + dh * dh
    return np.concatenate([[0.0], np.cumsum(np.sqrt(d2))])


def stitch_reference_path(roadmap: Roadmap, costs: CostMatrix, tour: Tour, terrain: TerrainMap | None = None) -> ReferencePath:
    """Concatenate cached roadmap paths along the tour into one polyline.

    Consecutive coincident vertices are merged so arc length strictly
    increases; ``stops[k]`` is the vertex index of the k-th tour entry.
    """
    pts: list[np.ndarray] = []
    sources: list[int] = []
    stops: list[int] = []

    def push(node: int) -> None:
        p = roadmap.nodes[node]
        if pts and np.array_equal(pts[-1], p):
            return
        pts.append(p)
        sources.append(int(node))

    order = tour.order
    push(costs.node_ids[order[0]])
    stops.append(0)
    for a, b in zip(order[:-1], order[1:]):
        key = (a, b)
        if key not in costs.paths:
            raise MissingCachedPath(f"no cached path for leg {a}->{b}")
        for node in costs.paths[key][1:]:
            push(node)
        stops.append(len(pts) - 1)
    points = np.asarray(pts, dtype=float)
    return ReferencePath(
        points=points,
        arc=_arc_lengths(points, terrain),
        sources=sources,
        stops=stops,
        order=list(order),
    )
