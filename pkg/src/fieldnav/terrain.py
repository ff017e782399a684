"""Terrain world model and the asymmetric energy cost-of-motion metric.

Elevation and slip are stored as node-valued grids: sample ``[r, c]`` sits at
``origin + (c * cell_size, r * cell_size)`` and values in between are bilinear.
The grid rectangle therefore spans ``(width - 1) * cell_size`` by
``(height - 1) * cell_size`` metres.
"""

from __future__ import annotations

import inspect
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigInvalid, OutOfBounds
from .geometry import points_in_polygon, polygon_is_simple

MAX_SLIP = 0.95
_EPS = 1e-9


@dataclass
class EnergyParams:
    mass: float = 450.0
    gravity: float = 9.81
    rolling_coeff: float = 0.08
    drivetrain_eff: float = 0.85
    regen_factor: float = 0.0
    idle_power: float = 150.0
    floor_energy_per_m: float = 5.0

    def __post_init__(self):
        if not self.mass > 0:
            raise ConfigInvalid("mass must be positive")
        if not 0.0 < self.drivetrain_eff <= 1.0:
            raise ConfigInvalid("drivetrain_eff must lie in (0, 1]")
        if not 0.0 <= self.regen_factor <= 1.0:
            raise ConfigInvalid("regen_factor must lie in [0, 1]")
        if self.floor_energy_per_m < 0:
            raise ConfigInvalid("floor_energy_per_m must be >= 0")


@dataclass
class TerrainMap:
    origin: tuple[float, float]
    cell_size: float
    elevation: np.ndarray
    slip: np.ndarray
    no_go: list[np.ndarray] = field(default_factory=list)
    max_slope: float = math.radians(30.0)

    def __post_init__(self):
        self.origin = (float(self.origin[0]), float(self.origin[1]))
        self.elevation = np.asarray(self.elevation, dtype=float)
        if self.elevation.ndim != 2 or min(self.elevation.shape) < 2:
            raise ConfigInvalid("elevation must be a 2D grid with at least 2x2 samples")
        slip = np.asarray(self.slip, dtype=float)
        if slip.ndim == 0:
            slip = np.full_like(self.elevation, float(slip))
        if slip.shape != self.elevation.shape:
            raise ConfigInvalid("slip grid shape must match elevation grid")
        self.slip = slip
        if not self.cell_size > 0:
            raise ConfigInvalid("cell_size must be positive")
        if not np.all(np.isfinite(self.elevation)):
            raise ConfigInvalid("elevation must be finite everywhere")
        if np.any(self.slip < 0) or np.any(self.slip > MAX_SLIP):
            raise ConfigInvalid(f"slip values must lie in [0, {MAX_SLIP}]")
        polys = []
        for i, poly in enumerate(self.no_go):
            arr = np.asarray(poly, dtype=float)
            if arr.ndim != 2 or arr.shape[1] != 2 or not polygon_is_simple(arr):
                raise ConfigInvalid(f"no_go polygon {i} is not a simple polygon")
            polys.append(arr)
        self.no_go = polys
        self._poly_boxes = [(p.min(axis=0), p.max(axis=0)) for p in polys]

    @property
    def height(self) -> int:
        return self.elevation.shape[0]

    @property
    def width(self) -> int:
        return self.elevation.shape[1]

    @property
    def bounds(self) -> tuple[float, float, float, float]:
        """(xmin, ymin, xmax, ymax) of the grid rectangle."""
        x0, y0 = self.origin
        return (
            x0,
            y0,
            x0 + (self.width - 1) * self.cell_size,
            y0 + (self.height - 1) * self.cell_size,
        )

    def contains(self, points) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        xmin, ymin, xmax, ymax = self.bounds
        return (
            (pts[:, 0] >= xmin - _EPS)
            & (pts[:, 0] <= xmax + _EPS)
            & (pts[:, 1] >= ymin - _EPS)
            & (pts[:, 1] <= ymax + _EPS)
        )

    def _interp(self, grid: np.ndarray, points: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        if not np.all(self.contains(pts)):
            bad = pts[~self.contains(pts)][0]
            raise OutOfBounds(bad)
        fx = (pts[:, 0] - self.origin[0]) / self.cell_size
        fy = (pts[:, 1] - self.origin[1]) / self.cell_size
        c0 = np.clip(np.floor(fx).astype(int), 0, self.width - 2)
        r0 = np.clip(np.floor(fy).astype(int), 0, self.height - 2)
        tx = np.clip(fx - c0, 0.0, 1.0)
        ty = np.clip(fy - r0, 0.0, 1.0)
        g00 = grid[r0, c0]
        g01 = grid[r0, c0 + 1]
        g10 = grid[r0 + 1, c0]
        g11 = grid[r0 + 1, c0 + 1]
        return (g00 * (1 - tx) + g01 * tx) * (1 - ty) + (g10 * (1 - tx) + g11 * tx) * ty

    def heights(self, points) -> np.ndarray:
        return self._interp(self.elevation, points)

    def slips(self, points) -> np.ndarray:
        return self._interp(self.slip, points)

    def slopes(self, points) -> np.ndarray:
        """Slope magnitude (rad) from central differences at cell resolution.

        Stencils are clamped to the grid, falling back to one-sided differences
        at the border.
        """
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        xmin, ymin, xmax, ymax = self.bounds
        h = self.cell_size
        xl = np.maximum(pts[:, 0] - h, xmin)
        xr = np.minimum(pts[:, 0] + h, xmax)
        yl = np.maximum(pts[:, 1] - h, ymin)
        yr = np.minimum(pts[:, 1] + h, ymax)
        y = np.clip(pts[:, 1], ymin, ymax)
        x = np.clip(pts[:, 0], xmin, xmax)
        gx = (self.heights(np.column_stack([xr, y])) - self.heights(np.column_stack([xl, y]))) / (xr - xl)
        gy = (self.heights(np.column_stack([x, yr])) - self.heights(np.column_stack([x, yl]))) / (yr - yl)
        return np.arctan(np.hypot(gx, gy))

    def in_no_go(self, points) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        inside = np.zeros(len(pts), dtype=bool)
        for poly, (lo, hi) in zip(self.no_go, self._poly_boxes):
            box = np.all((pts >= lo) & (pts <= hi), axis=1)
            if np.any(box):
                inside[box] |= points_in_polygon(pts[box], poly)
        return inside

    def traversable(self, points) -> np.ndarray:
        """Vectorised :func:`is_traversable`."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        ok = self.contains(pts)
        if np.any(ok):
            sub = pts[ok]
            good = ~self.in_no_go(sub)
            if np.any(good):
                good[good] = self.slopes(sub[good]) <= self.max_slope + 1e-12
            ok[ok] = good
        return ok


def height_at(terrain: TerrainMap, p) -> float:
    return float(terrain.heights(p)[0])


def is_traversable(terrain: TerrainMap, p) -> bool:
    return bool(terrain.traversable(p)[0])


def segment_samples(terrain: TerrainMap, p, q) -> np.ndarray:
    """Points along p->q at spacing <= cell_size / 2, endpoints included."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    length = float(np.hypot(*(q - p)))
    n = max(1, int(math.ceil(length / (0.5 * terrain.cell_size))))
    t = np.linspace(0.0, 1.0, n + 1)[:, None]
    return p + t * (q - p)


def segment_traversable(terrain: TerrainMap, p, q) -> bool:
    return bool(np.all(terrain.traversable(segment_samples(terrain, p, q))))


class CostOverrides:
    """Per-edge energy table that replaces the physics model for listed edges.

    Keys are endpoint coordinates rounded to ``decimals``; this lets an
    externally learnt cost-of-motion metric be injected as plain data.
    """

    def __init__(self, table: dict | None = None, decimals: int = 3):
        self.decimals = decimals
        self.table = dict(table or {})

    def _key(self, p, q):
        r = self.decimals
        return (round(float(p[0]), r), round(float(p[1]), r), round(float(q[0]), r), round(float(q[1]), r))

    def set(self, p, q, cost: float) -> None:
        self.table[self._key(p, q)] = float(cost)

    def get(self, p, q):
        return self.table.get(self._key(p, q))

    def __len__(self):
        return len(self.table)

    @classmethod
    def load(cls, path) -> "CostOverrides":
        doc = json.loads(Path(path).read_text())
        out = cls(decimals=int(doc.get("decimals", 3)))
        for row in doc["edges"]:
            cost = float(row["cost"])
            if cost < 0:
                raise ConfigInvalid("override costs must be nonnegative")
            out.set(row["from"], row["to"], cost)
        return out


def edge_energy(terrain: TerrainMap, params: EnergyParams, p, q, overrides: CostOverrides | None = None) -> float:
    """Energy (J) to drive the straight segment p->q.

    Uphill work is paid in full, downhill work is recovered at
    ``regen_factor``; the result is clamped below by the per-metre floor and
    inflated by drivetrain losses and mean slip along the segment.
    """
    if overrides is not None:
        hit = overrides.get(p, q)
        if hit is not None:
            return hit
    samples = segment_samples(terrain, p, q)  # raises nothing; heights() checks bounds
    ends = terrain.heights(np.vstack([samples[0], samples[-1]]))
    dh = float(ends[1] - ends[0])
    horiz = math.hypot(float(q[0]) - float(p[0]), float(q[1]) - float(p[1]))
    d = math.hypot(horiz, dh)
    if d == 0.0:
        return 0.0
    theta = math.atan2(dh, horiz)
    k = 1.0 if theta >= 0 else params.regen_factor
    raw = params.mass * params.gravity * d * (params.rolling_coeff * math.cos(theta) + k * math.sin(theta))
    slip = float(np.mean(terrain.slips(samples)))
    return max(raw, params.floor_energy_per_m * d) / (params.drivetrain_eff * (1.0 - slip))


# -- serialisation ---------------------------------------------------------------------


def terrain_from_dict(doc: dict, base_dir: Path | None = None) -> TerrainMap:
    if "file" in doc:
        path = Path(doc["file"])
        if base_dir is not None and not path.is_absolute():
            path = base_dir / path
        return load_terrain(path)
    if "generator" in doc:
        gen = doc["generator"]
        if not isinstance(gen, dict):
            raise ConfigInvalid("terrain.generator: expected an object")
        unknown = sorted(set(gen) - set(inspect.signature(generate_terrain).parameters))
        if unknown:
            raise ConfigInvalid(f"terrain.generator: unknown keys {unknown}")
        return generate_terrain(**gen)
    try:
        w = int(doc["width"])
        h = int(doc["height"])
        elev = np.asarray(doc["elevation"], dtype=float).reshape(h, w)
        slip = doc.get("slip", 0.0)
        slip = np.asarray(slip, dtype=float)
        if slip.ndim > 0:
            slip = slip.reshape(h, w)
        if "max_slope_deg" in doc:
            max_slope = math.radians(float(doc["max_slope_deg"]))
        else:
            max_slope = float(doc.get("max_slope", math.radians(30.0)))
        return TerrainMap(
            origin=tuple(doc.get("origin", (0.0, 0.0))),
            cell_size=float(doc["cell_size"]),
            elevation=elev,
            slip=slip,
            no_go=[np.asarray(p, dtype=float) for p in doc.get("no_go", [])],
            max_slope=max_slope,
        )
    except (KeyError, TypeError) as exc:
        raise ConfigInvalid(f"malformed terrain document: {exc}") from exc
    except ValueError as exc:
        if isinstance(exc, ConfigInvalid):
            raise
        raise ConfigInvalid(f"malformed terrain document: {exc}") from exc


def terrain_to_dict(terrain: TerrainMap) -> dict:
    return {
        "origin": list(terrain.origin),
        "cell_size": terrain.cell_size,
        "width": terrain.width,
        "height": terrain.height,
        "elevation": terrain.elevation.ravel().tolist(),
        "slip": terrain.slip.ravel().tolist(),
        "no_go": [p.tolist() for p in terrain.no_go],
        "max_slope": terrain.max_slope,
    }


def load_terrain(path) -> TerrainMap:
    return terrain_from_dict(json.loads(Path(path).read_text()), base_dir=Path(path).parent)


def save_terrain(terrain: TerrainMap, path) -> None:
    Path(path).write_text(json.dumps(terrain_to_dict(terrain)))


def generate_terrain(
    size=(100.0, 100.0),
    cell_size: float = 1.0,
    seed: int = 0,
    relief: float = 0.0,
    n_bumps: int = 12,
    bump_scale: float = 15.0,
    ramp=(0.0, 0.0),
    slip_base: float = 0.05,
    slip_var: float = 0.0,
    no_go=(),
    origin=(0.0, 0.0),
    max_slope_deg: float = 30.0,
) -> TerrainMap:
    """Seeded procedural terrain: planar ramp plus smooth Gaussian-bump relief.

    ``ramp`` is the (x, y) grade in m/m. ``relief`` is the peak bump amplitude
    in metres; bump signs and widths are drawn from the seed.
    """
    rng = np.random.default_rng(seed)
    w = int(round(size[0] / cell_size)) + 1
    h = int(round(size[1] / cell_size)) + 1
    xs = origin[0] + np.arange(w) * cell_size
    ys = origin[1] + np.arange(h) * cell_size
    X, Y = np.meshgrid(xs, ys)
    elev = ramp[0] * (X - origin[0]) + ramp[1] * (Y - origin[1])
    slip_field = np.zeros_like(elev)
    if n_bumps > 0 and (relief > 0 or slip_var > 0):
        cx = rng.uniform(xs[0], xs[-1], n_bumps)
        cy = rng.uniform(ys[0], ys[-1], n_bumps)
        sig = bump_scale * rng.uniform(0.6, 1.4, n_bumps)
        amp = rng.uniform(-1.0, 1.0, n_bumps)
        samp = rng.uniform(0.0, 1.0, n_bumps)
        for i in range(n_bumps):
            g = np.exp(-((X - cx[i]) ** 2 + (Y - cy[i]) ** 2) / (2 * sig[i] ** 2))
            elev = elev + relief * amp[i] * g
            slip_field = slip_field + samp[i] * g
        if slip_field.max() > 0:
            slip_field = slip_field / slip_field.max()
    slip = np.clip(slip_base + slip_var * slip_field, 0.0, MAX_SLIP)
    return TerrainMap(
        origin=tuple(origin),
        cell_size=cell_size,
        elevation=elev,
        slip=slip,
        no_go=[np.asarray(p, dtype=float) for p in no_go],
        max_slope=math.radians(max_slope_deg),
    )
