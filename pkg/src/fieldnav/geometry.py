"""Small planar geometry helpers shared by the planners and the simulator."""

from __future__ import annotations

import math

import numpy as np


def wrap_angle(a: float) -> float:
    """Wrap an angle to [-pi, pi)."""
    return (a + math.pi) % (2.0 * math.pi) - math.pi


def points_in_polygon(points: np.ndarray, polygon: np.ndarray) -> np.ndarray:
    """Even-odd ray casting for an array of points against one simple polygon.

    Points exactly on an edge may land on either side.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    poly = np.asarray(polygon, dtype=float)
    x = pts[:, 0][:, None]
    y = pts[:, 1][:, None]
    x0, y0 = poly[:, 0], poly[:, 1]
    x1, y1 = np.roll(x0, -1), np.roll(y0, -1)
    straddle = (y0 > y) != (y1 > y)
    with np.errstate(divide="ignore", invalid="ignore"):
        x_cross = x0 + (y - y0) * (x1 - x0) / (y1 - y0)
    hits = straddle & (x < x_cross)
    return (np.count_nonzero(hits, axis=1) % 2) == 1


def _segments_intersect(p1, p2, p3, p4) -> bool:
    def orient(a, b, c):
        return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])

    d1 = orient(p3, p4, p1)
    d2 = orient(p3, p4, p2)
    d3 = orient(p1, p2, p3)
    d4 = orient(p1, p2, p4)
    if ((d1 > 0) != (d2 > 0)) and ((d3 > 0) != (d4 > 0)) and d1 * d2 < 0 and d3 * d4 < 0:
        return True

    def on_seg(a, b, c):
        return (
            min(a[0], b[0]) <= c[0] <= max(a[0], b[0])
            and min(a[1], b[1]) <= c[1] <= max(a[1], b[1])
        )

    if d1 == 0 and on_seg(p3, p4, p1):
        return True
    if d2 == 0 and on_seg(p3, p4, p2):
        return True
    if d3 == 0 and on_seg(p1, p2, p3):
        return True
    if d4 == 0 and on_seg(p1, p2, p4):
        return True
    return False


def polygon_is_simple(polygon) -> bool:
    """True when the closed polygon has >= 3 vertices and no two non-adjacent edges touch."""
    poly = [tuple(map(float, v)) for v in polygon]
    n = len(poly)
    if n < 3:
        return False
    edges = [(poly[i], poly[(i + 1) % n]) for i in range(n)]
    for i in range(n):
        for j in range(i + 1, n):
            if j == i + 1 or (i == 0 and j == n - 1):
                continue
            if _segments_intersect(*edges[i], *edges[j]):
                return False
    # zero-area polygons are degenerate
    area = 0.0
    for (ax, ay), (bx, by) in edges:
        area += ax * by - bx * ay
    return abs(area) > 1e-12


def project_on_polyline(points: np.ndarray, p) -> tuple[float, float, int, float]:
    """Nearest point of a polyline to ``p``.

    Returns ``(distance, t, segment_index, along)`` where ``t`` in [0, 1] is the
    fraction along the winning segment and ``along`` its absolute offset (m).
    A single-vertex polyline is treated as a point.
    """
    pts = np.asarray(points, dtype=float)
    px, py = float(p[0]), float(p[1])
    if len(pts) == 1:
        return math.hypot(pts[0, 0] - px, pts[0, 1] - py), 0.0, 0, 0.0
    a = pts[:-1]
    d = pts[1:] - a
    seg_len2 = np.einsum("ij,ij->i", d, d)
    rel = np.array([px, py]) - a
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(seg_len2 > 0, np.einsum("ij,ij->i", rel, d) / seg_len2, 0.0)
    t = np.clip(t, 0.0, 1.0)
    closest = a + t[:, None] * d
    dist = np.hypot(closest[:, 0] - px, closest[:, 1] - py)
    i = int(np.argmin(dist))
    return float(dist[i]), float(t[i]), i, float(t[i] * math.sqrt(seg_len2[i]))
