"""Sample-based agent-response predictors consumed by the tree search.

Every predictor maps a :class:`PredictionRequest` to an array of shape
``(samples, horizon, n_tracks, 2)`` holding predicted positions at
``dt, 2*dt, ..., horizon*dt``. Identical requests give identical samples.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .crowd import Disc, OrcaParams, _biased_pref, _lp2, _lp3, orca_lines
from .errors import ConfigInvalid


@dataclass(frozen=True)
class PredictorParams:
    sigma_p: float = 0.1
    tau_goal: float = 5.0
    speed_noise: float = 0.1
    agent_radius: float = 0.4
    max_speed: float = 1.6
    robot_radius: float = 0.6
    orca: OrcaParams = field(default_factory=OrcaParams)


@dataclass
class PredictionRequest:
    positions: np.ndarray
    velocities: np.ndarray
    robot_trajectory: np.ndarray
    horizon: int
    samples: int = 1
    seed: int | tuple = 0
    dt: float = 0.25

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=float).reshape(-1, 2)
        self.velocities = np.asarray(self.velocities, dtype=float).reshape(-1, 2)
        self.robot_trajectory = np.asarray(self.robot_trajectory, dtype=float)
        if self.horizon < 1:
            raise ConfigInvalid("horizon must be >= 1")
        if self.samples < 1:
            raise ConfigInvalid("samples must be >= 1")
        if len(self.positions) != len(self.velocities):
            raise ConfigInvalid("positions and velocities must pair up")

    @classmethod
    def from_tracks(cls, tracks, robot_trajectory, horizon, samples=1, seed=0, dt=0.25):
        pos = np.array([t.position for t in tracks], dtype=float).reshape(-1, 2)
        vel = np.array([t.velocity for t in tracks], dtype=float).reshape(-1, 2)
        return cls(pos, vel, robot_trajectory, horizon, samples, seed, dt)


def _rng(seed) -> np.random.Generator:
    if isinstance(seed, (tuple, list)):
        return np.random.default_rng([int(s) for s in seed])
    return np.random.default_rng(seed)


def predict_cv(request: PredictionRequest, params: PredictorParams = PredictorParams()) -> np.ndarray:
    """Constant-velocity extrapolation with per-step noise growing as sqrt(t)."""
    n = len(request.positions)
    H, S, dt = request.horizon, request.samples, request.dt
    t = dt * np.arange(1, H + 1)
    mean = request.positions[None, :, :] + t[:, None, None] * request.velocities[None, :, :]
    out = np.broadcast_to(mean, (S, H, n, 2)).copy()
    if params.sigma_p > 0 and n:
        noise = _rng(request.seed).standard_normal((S, H, n, 2))
        out += params.sigma_p * np.sqrt(t)[None, :, None, None] * noise
    return out


class _Virtual:
    __slots__ = ("id", "position", "velocity", "radius", "max_speed")

    def __init__(self, i, position, velocity, radius, max_speed):
        self.id = i
        self.position = position
        self.velocity = velocity
        self.radius = radius
        self.max_speed = max_speed


def predict_orca(request: PredictionRequest, params: PredictorParams = PredictorParams()) -> np.ndarray:
    """Roll tracks forward as ORCA agents reacting to the hypothesised robot motion.

    Goals are imputed as ``position + velocity * tau_goal``; each sample
    perturbs the preferred speeds. The robot is a non-reciprocating disc that
    follows ``robot_trajectory`` (row 0 = current pose).
    """
    n = len(request.positions)
    H, S, dt = request.horizon, request.samples, request.dt
    out = np.zeros((S, H, n, 2))
    if n == 0:
        return out
    rng = _rng(request.seed)
    traj = request.robot_trajectory
    goals = request.positions + request.velocities * params.tau_goal
    speeds = np.hypot(request.velocities[:, 0], request.velocities[:, 1])
    for s in range(S):
        factor = 1.0 + params.speed_noise * rng.standard_normal(n)
        pref_speed = np.clip(speeds * factor, 0.0, params.max_speed)
        agents = [
            _Virtual(i, (float(request.positions[i, 0]), float(request.positions[i, 1])),
                     (float(request.velocities[i, 0]), float(request.velocities[i, 1])),
                     params.agent_radius, params.max_speed)
            for i in range(n)
        ]
        for k in range(H):
            r0 = traj[min(k, len(traj) - 1)]
            r1 = traj[min(k + 1, len(traj) - 1)]
            robot = Disc((float(r0[0]), float(r0[1])),
                         ((float(r1[0]) - float(r0[0])) / dt, (float(r1[1]) - float(r0[1])) / dt),
                         params.robot_radius, False, -1)
            discs = [Disc(a.position, a.velocity, a.radius, True, a.id) for a in agents]
            new = []
            for a in agents:
                gx = goals[a.id, 0] - a.position[0]
                gy = goals[a.id, 1] - a.position[1]
                gd = math.hypot(gx, gy)
                sp = min(float(pref_speed[a.id]), gd / dt) if gd > 1e-9 else 0.0
                pref = (gx / gd * sp, gy / gd * sp) if gd > 1e-9 else (0.0, 0.0)
                pref = _biased_pref(a, pref, 0.0)  # same symmetry breaking as the crowd
                nbrs = [d for d in discs if d.id != a.id]
                nbrs.append(robot)
                lines = orca_lines(a, nbrs, params.orca, dt)
                fail, v = _lp2(lines, a.max_speed, pref, False)
                if fail < len(lines):
                    v = _lp3(lines, fail, a.max_speed, v)
                vs = math.hypot(*v)
                if vs > a.max_speed:
                    v = (v[0] / vs * a.max_speed, v[1] / vs * a.max_speed)
                new.append(v)
            for a, v in zip(agents, new):
                a.velocity = v
                a.position = (a.position[0] + v[0] * dt, a.position[1] + v[1] * dt)
                out[s, k, a.id, 0] = a.position[0]
                out[s, k, a.id, 1] = a.position[1]
    return out


predict_cv.robot_conditioned = False
predict_orca.robot_conditioned = True

PREDICTORS = {"cv": predict_cv, "orca": predict_orca}


def get_predictor(name: str):
    try:
        return PREDICTORS[name]
    except KeyError:
        raise ConfigInvalid(f"unknown predictor {name!r}; choose from {sorted(PREDICTORS)}") from None
