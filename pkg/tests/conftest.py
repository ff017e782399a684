import math
import os
from importlib import resources
from pathlib import Path

import numpy as np
import pytest

from fieldnav.mission import ReferencePath
from fieldnav.terrain import TerrainMap

# keep hypothesis runs brisk on a single core
try:
    from hypothesis import settings

    settings.register_profile("ci", max_examples=60, deadline=None)
    settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "ci"))
except ImportError:  # pragma: no cover
    pass


def flat_terrain(w=40, h=40, cell=1.0, z=0.0, slip=0.0, no_go=(), max_slope_deg=30.0):
    return TerrainMap(
        origin=(0.0, 0.0),
        cell_size=cell,
        elevation=np.full((h + 1, w + 1), float(z)),
        slip=np.full((h + 1, w + 1), float(slip)),
        no_go=list(no_go),
        max_slope=math.radians(max_slope_deg),
    )


def ramp_terrain(w=40, h=20, cell=1.0, grade=0.1, slip=0.0):
    """Elevation rises along +x at ``grade`` m/m."""
    xs = np.arange(w + 1) * cell
    elev = np.tile(grade * xs, (h + 1, 1))
    return TerrainMap((0.0, 0.0), cell, elev, np.full_like(elev, slip))


def polyline_path(points, stops=None):
    pts = np.asarray(points, dtype=float)
    seg = np.hypot(*np.diff(pts, axis=0).T)
    arc = np.concatenate([[0.0], np.cumsum(seg)])
    stops = [0, len(pts) - 1] if stops is None else list(stops)
    return ReferencePath(points=pts, arc=arc, sources=list(range(len(pts))), stops=stops)


def scenario_path(name: str) -> Path:
    return Path(str(resources.files("fieldnav") / "scenarios" / f"{name}.json"))


@pytest.fixture
def straight_path():
    return polyline_path([(0.0, 0.0), (10.0, 0.0), (20.0, 0.0), (30.0, 0.0)])
