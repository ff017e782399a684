"""Monte Carlo tree search over forward-only unicycle actions among moving agents.

Each iteration descends the tree by UCT, expands one untried action, rolls
out with pure pursuit to the fixed depth, then asks the predictor for one
sample of agent motion conditioned on that whole robot trajectory. Returns
are backed up along the visited branch.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import _search_kernels as _k
from .controller import PursuitParams
from .errors import EmptyActionSet
from .geometry import wrap_angle
from .mission import ReferencePath
from .prediction import PredictionRequest

DEFAULT_ACTIONS = tuple((v, w) for v in (0.0, 0.75, 1.5) for w in (-0.6, -0.3, 0.0, 0.3, 0.6))


@dataclass(frozen=True)
class MctsParams:
    iterations: int = 300
    depth: int = 20
    dt_plan: float = 0.25
    ucb_c: float = 1.4
    actions: tuple = DEFAULT_ACTIONS
    w_progress: float = 1.0
    w_dev: float = 0.3
    w_soft: float = 2.0
    w_col: float = 50.0
    d_soft: float = 3.0
    d_col: float = 1.5
    discount: float = 1.0

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if not self.d_col < self.d_soft:
            raise ValueError("d_col must be below d_soft")
        if any(v < 0 for v, _ in self.actions):
            raise ValueError("actions must be forward-only (v >= 0)")


def simulate_step(state, action, dt: float, v_max: float = math.inf, omega_max: float = math.inf):
    """Unicycle update; ``state`` is (x, y, heading, speed). Heading turns first."""
    v = min(max(float(action[0]), 0.0), v_max)
    w = min(max(float(action[1]), -omega_max), omega_max)
    h = wrap_angle(state[2] + w * dt)
    return (state[0] + v * dt * math.cos(h), state[1] + v * dt * math.sin(h), h, v)


class PathCursor:
    """Scalar arc-length projection on a local slice of the reference path."""

    def __init__(self, ref_path: ReferencePath, s_lo: float, s_hi: float):
        s_lo = max(0.0, min(s_lo, ref_path.total_length))
        s_hi = max(s_lo, min(s_hi, ref_path.total_length))
        pts = ref_path.points
        if len(pts) == 1:
            self.ax = [float(pts[0, 0])]
            self.ay = [float(pts[0, 1])]
            self.tx = [1.0]
            self.ty = [0.0]
            self.len = [0.0]
            self.s0 = [0.0]
            self.s_lo = self.s_hi = 0.0
            return
        i0 = ref_path._locate(s_lo)
        i1 = ref_path._locate(s_hi)
        self.ax, self.ay, self.tx, self.ty, self.len, self.s0 = [], [], [], [], [], []
        for i in range(i0, i1 + 1):
            a = pts[i]
            b = pts[i + 1]
            dx, dy = float(b[0] - a[0]), float(b[1] - a[1])
            L = math.hypot(dx, dy)
            self.ax.append(float(a[0]))
            self.ay.append(float(a[1]))
            self.tx.append(dx / L)
            self.ty.append(dy / L)
            self.len.append(L)
            self.s0.append(float(ref_path.arc[i]))
        self.scale = [
            (float(ref_path.arc[i + 1] - ref_path.arc[i]) / self.len[i - i0]) for i in range(i0, i1 + 1)
        ]
        self.s_lo, self.s_hi = s_lo, s_hi

    def project(self, x: float, y: float) -> tuple[float, float, int]:
        best = (math.inf, 0.0, 0)
        for i in range(len(self.ax)):
            rx = x - self.ax[i]
            ry = y - self.ay[i]
            t = rx * self.tx[i] + ry * self.ty[i]
            L = self.len[i]
            if t < 0.0:
                t = 0.0
            elif t > L:
                t = L
            s = self.s0[i] + t * self.scale[i] if L > 0 else self.s0[i]
            if s < self.s_lo or s > self.s_hi:
                s = min(max(s, self.s_lo), self.s_hi)
                t = (s - self.s0[i]) / self.scale[i] if L > 0 else 0.0
                t = min(max(t, 0.0), L)
            px = self.ax[i] + t * self.tx[i]
            py = self.ay[i] + t * self.ty[i]
            d = math.hypot(x - px, y - py)
            if d < best[0]:
                best = (d, s, i)
        return best[1], best[0], best[2]

    def point_at(self, s: float) -> tuple[float, float]:
        s = min(max(s, self.s_lo), self.s_hi)
        n = len(self.ax)
        i = n - 1
        for k in range(n):
            if k + 1 == n or self.s0[k + 1] > s:
                i = k
                break
        t = (s - self.s0[i]) / self.scale[i] if self.len[i] > 0 else 0.0
        t = min(max(t, 0.0), self.len[i])
        return self.ax[i] + t * self.tx[i], self.ay[i] + t * self.ty[i]


def reward(state, agent_positions, ref_path, parent_s: float, params: MctsParams, cursor: PathCursor | None = None):
    """Per-step reward and the new path projection ``s``.

    Progress is the arc-length gain of the path projection since the parent
    state; ``dev`` is the lateral distance to the path; ``d_min`` is the
    centre distance to the nearest predicted agent.
    """
    if cursor is None:
        s, dev, _ = ref_path.project(state[:2])
    else:
        s, dev, _ = cursor.project(state[0], state[1])
    r = params.w_progress * (s - parent_s) - params.w_dev * dev
    pos = np.asarray(agent_positions, dtype=float).reshape(-1, 2)
    if len(pos):
        d_min = float(np.min(np.hypot(pos[:, 0] - state[0], pos[:, 1] - state[1])))
        r -= params.w_soft * max(0.0, params.d_soft - d_min)
        if d_min < params.d_col:
            r -= params.w_col
    return r, s


class Confinement:
    """Grid rectangle plus no-go polygons packed for the compiled search."""

    def __init__(self, bounds, polygons=()):
        self.bounds = np.asarray(bounds, dtype=float)
        polys = [np.asarray(p, dtype=float).reshape(-1, 2) for p in polygons]
        self.poly_xy = np.vstack(polys) if polys else np.zeros((0, 2))
        self.poly_off = np.cumsum([0] + [len(p) for p in polys]).astype(np.int64)
        self.poly_box = (
            np.array([[*p.min(axis=0), *p.max(axis=0)] for p in polys]) if polys else np.zeros((0, 4))
        )

    @classmethod
    def from_terrain(cls, terrain) -> "Confinement":
        return cls(terrain.bounds, terrain.no_go)

    def blocked(self, x: float, y: float) -> bool:
        return bool(_k.blocked(self.bounds, self.poly_xy, self.poly_off, self.poly_box, float(x), float(y)))


_NO_CONFINE = Confinement((-math.inf, -math.inf, math.inf, math.inf))


@dataclass
class PlanDiagnostics:
    visits: list[int]
    values: list[float]
    chosen: int
    actions: list[tuple[float, float]] = field(default_factory=list)


def _cursor_array(cursor: PathCursor) -> np.ndarray:
    scale = getattr(cursor, "scale", [1.0] * len(cursor.ax))
    return np.array([cursor.ax, cursor.ay, cursor.tx, cursor.ty, cursor.len, cursor.s0, scale], dtype=float)


def plan(
    robot_state,
    tracks,
    ref_path: ReferencePath,
    predictor,
    params: MctsParams = MctsParams(),
    seed: int = 0,
    progress: float | None = None,
    s_limit: float | None = None,
    pursuit: PursuitParams = PursuitParams(),
    allow_turn_in_place: bool = True,
    confinement: Confinement | None = None,
    stop_radius: float = 0.0,
) -> tuple[tuple[float, float], PlanDiagnostics]:
    """Choose one action for the robot state ``(x, y, heading, speed)``.

    ``tracks`` are confirmed track snapshots. States outside ``confinement``
    are scored like a collision. Predictors flagged ``robot_conditioned =
    False`` are sampled once per plan (sample ``i`` feeds iteration ``i``);
    others are queried per iteration with seed ``(seed, i)`` and the
    branch's robot trajectory. Rollouts stop within ``stop_radius`` of the
    point at ``s_limit``.
    """
    actions = [tuple(map(float, a)) for a in params.actions]
    if not allow_turn_in_place:
        actions = [a for a in actions if not (a[0] == 0.0 and a[1] != 0.0)]
    if not actions:
        raise EmptyActionSet("no admissible actions")
    H, dt = params.depth, params.dt_plan
    state0 = tuple(float(v) for v in robot_state[:3]) + (float(robot_state[3]) if len(robot_state) > 3 else 0.0,)
    if progress is None:
        progress = ref_path.project(state0[:2])[0]
    limit = ref_path.total_length if s_limit is None else min(s_limit, ref_path.total_length)
    reach = H * dt * pursuit.v_max + pursuit.lookahead + 2.0
    cursor = PathCursor(ref_path, progress - reach, min(limit, progress + reach))
    cur = _cursor_array(cursor)
    v_lim = max(pursuit.v_max, max(a[0] for a in actions))
    w_lim = max(pursuit.omega_max, max(abs(a[1]) for a in actions))
    conf = confinement if confinement is not None else _NO_CONFINE
    confine = confinement is not None

    track_pos = np.array([t.position for t in tracks], dtype=float).reshape(-1, 2)
    track_vel = np.array([t.velocity for t in tracks], dtype=float).reshape(-1, 2)
    n_act = len(actions)
    N = params.iterations + 1
    child = np.full((N, n_act), -1, dtype=np.int64)
    nchild = np.zeros(N, dtype=np.int64)
    nvis = np.zeros(N, dtype=np.int64)
    wsum = np.zeros(N)
    nst = np.zeros((N, 4))
    ns = np.zeros(N)
    ndev = np.zeros(N)
    nblk = np.zeros(N, dtype=np.bool_)
    n_nodes = np.ones(1, dtype=np.int64)
    nst[0] = state0
    ns[0], ndev[0] = _k.cursor_project(cur, cursor.s_lo, cursor.s_hi, state0[0], state0[1])
    act = np.array(actions, dtype=float)
    pp = np.array([pursuit.lookahead, pursuit.v_max, pursuit.v_min, pursuit.omega_max, pursuit.tip_angle,
                   pursuit.curvature_gain, pursuit.slow_radius, stop_radius])
    creep = not allow_turn_in_place
    weights = np.array([params.w_progress, params.w_dev, params.w_soft, params.w_col])
    common = (child, nchild, nvis, wsum, nst, ns, ndev, nblk, n_nodes, act, H, dt, v_lim, w_lim, params.ucb_c,
              cur, cursor.s_lo, cursor.s_hi, limit, pp, creep, confine,
              conf.bounds, conf.poly_xy, conf.poly_off, conf.poly_box)
    if len(track_pos) == 0:
        samples = np.zeros((params.iterations, H, 0, 2))
        _k.search(*common, samples, weights, params.d_soft, params.d_col, params.discount)
    elif not getattr(predictor, "robot_conditioned", True):
        req = PredictionRequest(track_pos, track_vel, np.array([state0[:3]]), H, params.iterations, seed, dt)
        samples = np.ascontiguousarray(predictor(req), dtype=float)
        _k.search(*common, samples, weights, params.d_soft, params.d_col, params.discount)
    else:
        branch = np.zeros(H + 1, dtype=np.int64)
        traj = np.zeros((H + 1, 4))
        ss = np.zeros(H + 1)
        devs = np.zeros(H + 1)
        blk = np.zeros(H + 1, dtype=np.bool_)
        for it in range(params.iterations):
            depth = _k.descend(*common, branch, traj, ss, devs, blk)
            req = PredictionRequest(track_pos, track_vel, traj[:, :3].copy(), H, 1, (seed, it), dt)
            sample = np.ascontiguousarray(predictor(req)[0], dtype=float)
            _k.backup(nvis, wsum, branch, depth, traj, ss, devs, blk, sample, H, weights,
                      params.d_soft, params.d_col, params.discount)

    kids = child[0]
    visits = [int(nvis[kids[a]]) if kids[a] >= 0 else 0 for a in range(n_act)]
    values = [float(wsum[kids[a]] / nvis[kids[a]]) if kids[a] >= 0 and nvis[kids[a]] else -math.inf
              for a in range(n_act)]
    chosen = max(range(n_act), key=lambda a: (visits[a], values[a], -a))
    return actions[chosen], PlanDiagnostics(visits=visits, values=values, chosen=chosen, actions=actions)
