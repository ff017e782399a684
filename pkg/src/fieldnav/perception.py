"""Front-mounted wedge sensor with a rear blind spot, and a confidence tracker.

Tracks that go unobserved lose confidence; inside the blind spot they lose
it much more slowly, so an individual walking behind the robot is still
remembered for a while.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigInvalid
from .geometry import wrap_angle


@dataclass(frozen=True)
class SensorModel:
    fov_angle: float = math.radians(270.0)
    range: float = 20.0
    pos_noise_sigma: float = 0.1
    detect_prob: float = 0.95

    def __post_init__(self):
        if not 0.0 < self.fov_angle < 2.0 * math.pi:
            raise ConfigInvalid("fov_angle must lie in (0, 2*pi)")
        if not self.range > 0:
            raise ConfigInvalid("sensor range must be positive")
        if not 0.0 <= self.detect_prob <= 1.0:
            raise ConfigInvalid("detect_prob must lie in [0, 1]")


@dataclass(frozen=True)
class TrackerParams:
    gate: float = 2.0
    alpha: float = 0.5
    beta: float = 0.3
    conf_up: float = 1.0
    decay_visible: float = 0.4
    decay_blind: float = 0.05
    conf_init: float = 0.4
    conf_confirm: float = 0.6
    conf_delete: float = 0.2

    def __post_init__(self):
        if self.decay_blind > self.decay_visible:
            raise ConfigInvalid("decay_blind must not exceed decay_visible")
        if not 0.0 <= self.conf_delete < self.conf_init <= 1.0:
            raise ConfigInvalid("need 0 <= conf_delete < conf_init <= 1")


@dataclass(frozen=True)
class Track:
    id: int
    position: tuple[float, float]
    velocity: tuple[float, float] = (0.0, 0.0)
    confidence: float = 0.4
    confirmed: bool = False
    last_update: float = 0.0

    @property
    def status(self) -> str:
        return "confirmed" if self.confirmed else "tentative"


def _bearing_range(robot_pose, point) -> tuple[float, float]:
    dx = point[0] - robot_pose[0]
    dy = point[1] - robot_pose[1]
    return wrap_angle(math.atan2(dy, dx) - robot_pose[2]), math.hypot(dx, dy)


def in_fov(robot_pose, point, sensor: SensorModel) -> bool:
    bearing, dist = _bearing_range(robot_pose, point)
    return dist <= sensor.range and abs(bearing) <= 0.5 * sensor.fov_angle


def in_blind_spot(robot_pose, point, sensor: SensorModel) -> bool:
    """Within sensing range but outside the heading-centred wedge."""
    bearing, dist = _bearing_range(robot_pose, point)
    return dist <= sensor.range and abs(bearing) > 0.5 * sensor.fov_angle


def sense(robot_pose, agents, sensor: SensorModel, rng: np.random.Generator, now: float | None = None) -> np.ndarray:
    """Noisy, unlabelled detections of agents inside the sensor wedge.

    Three draws are consumed per agent whether or not it is visible, so the
    random stream does not depend on geometry.
    """
    out = []
    for a in agents:
        if now is not None and a.spawn_time > now:
            continue
        u = rng.random()
        nx, ny = rng.normal(0.0, 1.0, 2)
        if not in_fov(robot_pose, a.position, sensor):
            continue
        if u >= sensor.detect_prob:
            continue
        s = sensor.pos_noise_sigma
        out.append((a.position[0] + s * nx, a.position[1] + s * ny))
    return np.asarray(out, dtype=float).reshape(-1, 2)


def associate(tracks, detections, gate: float) -> list[tuple[int, int]]:
    """Greedy nearest-neighbour pairing inside the gate, closest pairs first."""
    if not tracks or len(detections) == 0:
        return []
    P = np.array([t.position for t in tracks], dtype=float)
    D = np.hypot(P[:, None, 0] - detections[None, :, 0], P[:, None, 1] - detections[None, :, 1])
    cand = [(D[i, j], tracks[i].id, j, i) for i, j in zip(*np.nonzero(D <= gate))]
    cand.sort()
    used_t, used_d, pairs = set(), set(), []
    for _, _, j, i in cand:
        if i in used_t or j in used_d:
            continue
        used_t.add(i)
        used_d.add(j)
        pairs.append((int(i), int(j)))
    return pairs


def update_tracks(
    tracks,
    detections,
    robot_pose,
    sensor: SensorModel,
    dt: float,
    params: TrackerParams = TrackerParams(),
    next_id: int = 0,
    now: float = 0.0,
) -> tuple[list[Track], int]:
    """One tracker cycle; returns the surviving tracks and the next free id."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    detections = np.asarray(detections, dtype=float).reshape(-1, 2)
    coasted = [
        replace(t, position=(t.position[0] + t.velocity[0] * dt, t.position[1] + t.velocity[1] * dt))
        for t in tracks
    ]
    pairs = associate(coasted, detections, params.gate)
    matched = {i: j for i, j in pairs}
    out = []
    for i, t in enumerate(coasted):
        if i in matched:
            z = detections[matched[i]]
            rx = z[0] - t.position[0]
            ry = z[1] - t.position[1]
            conf = min(1.0, t.confidence + params.conf_up * dt)
            t = replace(
                t,
                position=(t.position[0] + params.alpha * rx, t.position[1] + params.alpha * ry),
                velocity=(t.velocity[0] + params.beta * rx / dt, t.velocity[1] + params.beta * ry / dt),
                confidence=conf,
                last_update=now,
            )
        else:
            rate = params.decay_blind if in_blind_spot(robot_pose, t.position, sensor) else params.decay_visible
            t = replace(t, confidence=max(0.0, t.confidence - rate * dt))
        if t.confidence < params.conf_delete:
            continue
        if not t.confirmed and t.confidence >= params.conf_confirm:
            t = replace(t, confirmed=True)
        out.append(t)
    used = set(matched.values())
    for j in range(len(detections)):
        if j in used:
            continue
        out.append(
            Track(
                id=next_id,
                position=(float(detections[j, 0]), float(detections[j, 1])),
                confidence=params.conf_init,
                confirmed=params.conf_init >= params.conf_confirm,
                last_update=now,
            )
        )
        next_id += 1
    return out, next_id


@dataclass
class Tracker:
    """Stateful wrapper owning the track list and id counter for one run."""

    sensor: SensorModel = field(default_factory=SensorModel)
    params: TrackerParams = field(default_factory=TrackerParams)
    tracks: list[Track] = field(default_factory=list)
    next_id: int = 0

    def update(self, detections, robot_pose, dt: float, now: float = 0.0) -> list[Track]:
        self.tracks, self.next_id = update_tracks(
            self.tracks, detections, robot_pose, self.sensor, dt, self.params, self.next_id, now
        )
        return self.tracks

    def confirmed(self) -> list[Track]:
        return [t for t in self.tracks if t.confirmed]
