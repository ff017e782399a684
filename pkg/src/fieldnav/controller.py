"""High-level mode switching, the failsafe collision check and the path tracker."""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import ConfigInvalid, PathExhausted
from .geometry import wrap_angle
from .mission import ReferencePath


class ModeKind(str, Enum):
    LONG_TERM = "LongTerm"
    DYNAMIC = "Dynamic"
    FAILSAFE = "Failsafe"
    TASK_DWELL = "TaskDwell"


@dataclass(frozen=True)
class Mode:
    kind: ModeKind = ModeKind.LONG_TERM
    entered_at: float = 0.0
    last_trigger: float = -math.inf


@dataclass(frozen=True)
class SwitchParams:
    r_agent: float = 5.0
    r_path: float = 2.0
    lookahead_window: float = 15.0
    t_clear: float = 2.0
    d_failsafe: float = 1.5
    d_resume: float = 1.8
    r_waypoint: float = 0.5
    t_spray: float = 5.0

    def __post_init__(self):
        if not self.d_resume > self.d_failsafe:
            raise ConfigInvalid("d_resume must exceed d_failsafe")
        if not self.r_agent > self.d_failsafe:
            raise ConfigInvalid("r_agent must exceed d_failsafe")


@dataclass(frozen=True)
class PursuitParams:
    lookahead: float = 2.5
    v_max: float = 1.5
    v_min: float = 0.2
    omega_max: float = 0.8
    tip_angle: float = math.radians(80.0)
    curvature_gain: float = 0.5
    slow_radius: float = 2.0
    blind_spot_guard: bool = False


def _dist(a, b) -> float:
    return math.hypot(a[0] - b[0], a[1] - b[1])


def dynamic_triggers(robot_xy, tracks, ref_path: ReferencePath | None, progress: float, params: SwitchParams) -> tuple[bool, bool]:
    """(robot-proximity trigger, path-corridor trigger) for the given tracks."""
    near_robot = any(_dist(t.position, robot_xy) <= params.r_agent for t in tracks)
    near_path = False
    if ref_path is not None and tracks:
        hi = min(progress + params.lookahead_window, ref_path.total_length)
        lo = min(progress, hi)
        for t in tracks:
            if ref_path.project(t.position, lo, hi)[1] <= params.r_path:
                near_path = True
                break
    return near_robot, near_path


def select_mode(
    prev: Mode,
    robot_xy,
    confirmed_tracks,
    ref_path: ReferencePath | None,
    progress: float,
    params: SwitchParams,
    now: float,
    objective=None,
    dwell_elapsed: float = 0.0,
) -> Mode:
    """Pick the planner that owns the robot this tick.

    Priority: Failsafe (exit only once every track is beyond ``d_resume``),
    Dynamic while a track is within ``r_agent`` of the robot, TaskDwell at
    the current objective until ``t_spray`` has been spent there, Dynamic
    while the corridor trigger fires or either fired within ``t_clear``,
    otherwise LongTerm. A nearby track therefore pauses a dwell; the
    corridor and hysteresis rules do not, since they concern the path ahead.
    """
    dists = [_dist(t.position, robot_xy) for t in confirmed_tracks]
    nearest = min(dists) if dists else math.inf

    def enter(kind: ModeKind, last_trigger: float) -> Mode:
        entered = prev.entered_at if prev.kind == kind else now
        return Mode(kind, entered, last_trigger)

    last = prev.last_trigger
    near_robot, near_path = dynamic_triggers(robot_xy, confirmed_tracks, ref_path, progress, params)
    if near_robot or near_path:
        last = now
    if nearest < params.d_failsafe or (prev.kind == ModeKind.FAILSAFE and nearest <= params.d_resume):
        return enter(ModeKind.FAILSAFE, last)
    if near_robot:
        return enter(ModeKind.DYNAMIC, last)
    if objective is not None and _dist(objective, robot_xy) <= params.r_waypoint and dwell_elapsed < params.t_spray:
        return enter(ModeKind.TASK_DWELL, last)
    if near_path or now - last < params.t_clear:
        return enter(ModeKind.DYNAMIC, last)
    return enter(ModeKind.LONG_TERM, last)


def failsafe_check(robot_xy, confirmed_tracks, raw_detections, params: SwitchParams) -> bool:
    """True when anything perceived this tick is inside the failsafe distance."""
    d = math.inf
    for t in confirmed_tracks:
        d = min(d, _dist(t.position, robot_xy))
    det = np.asarray(raw_detections, dtype=float).reshape(-1, 2)
    if len(det):
        d = min(d, float(np.min(np.hypot(det[:, 0] - robot_xy[0], det[:, 1] - robot_xy[1]))))
    return d < params.d_failsafe


def pursuit_law(pose, target, remaining: float, params: PursuitParams, blind_spot_occupied: bool = False) -> tuple[float, float]:
    """Pure-pursuit command toward ``target`` with ``remaining`` metres left on the leg."""
    alpha = wrap_angle(math.atan2(target[1] - pose[1], target[0] - pose[0]) - pose[2])
    turn = math.copysign(params.omega_max, alpha) if alpha != 0 else params.omega_max
    if abs(alpha) > params.tip_angle:
        if params.blind_spot_guard and blind_spot_occupied:
            return params.v_min, turn
        return 0.0, turn
    kappa = 2.0 * math.sin(alpha) / params.lookahead
    v = params.v_max * max(0.0, 1.0 - params.curvature_gain * abs(kappa))
    v = min(v, max(params.v_min, params.v_max * remaining / params.slow_radius))
    v = max(v, params.v_min)
    omega = v * kappa
    if abs(omega) > params.omega_max:
        omega = math.copysign(params.omega_max, omega)
        v = params.omega_max / abs(kappa)
    return v, omega


def track_path(
    pose,
    ref_path: ReferencePath,
    progress: float,
    params: PursuitParams = PursuitParams(),
    s_limit: float | None = None,
    blind_spot_occupied: bool = False,
) -> tuple[float, float]:
    """Pure pursuit along ``ref_path`` from arc length ``progress``.

    The look-ahead target never passes ``s_limit`` (the current objective),
    and speed ramps down over the last ``slow_radius`` metres before it.
    """
    total = ref_path.total_length
    if progress >= total:
        raise PathExhausted(f"progress {progress:.3f} >= path length {total:.3f}")
    limit = total if s_limit is None else min(s_limit, total)
    target = ref_path.point_at(min(progress + params.lookahead, limit))
    remaining = max(0.0, limit - progress)
    return pursuit_law(pose, target, remaining, params, blind_spot_occupied)
