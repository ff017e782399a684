"""Ground-truth moving individuals driven by ORCA reciprocal collision avoidance.

Each agent keeps the velocity closest to its preferred velocity inside the
intersection of half-planes built from truncated velocity obstacles, solved
with the incremental 2D linear program (and a 3D fallback minimising the
worst penetration when the half-planes have no common point).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigInvalid

GOAL_TOLERANCE = 0.3
DEADLOCK_EPS = 1e-3
_LP_EPS = 1e-5


@dataclass(frozen=True)
class AgentState:
    id: int
    position: tuple[float, float]
    velocity: tuple[float, float] = (0.0, 0.0)
    radius: float = 0.4
    pref_speed: float = 1.3
    max_speed: float = 1.6
    goals: tuple[tuple[float, float], ...] = ()
    loop: bool = False
    goal_index: int = 0
    spawn_time: float = 0.0
    group: str = ""
    avoids_robot: bool = True

    def __post_init__(self):
        if not self.radius > 0:
            raise ConfigInvalid(f"agent {self.id}: radius must be positive")
        if self.pref_speed > self.max_speed:
            raise ConfigInvalid(f"agent {self.id}: pref_speed exceeds max_speed")

    @property
    def current_goal(self):
        if 0 <= self.goal_index < len(self.goals):
            return self.goals[self.goal_index]
        return None


@dataclass(frozen=True)
class OrcaParams:
    time_horizon: float = 2.0
    neighbor_dist: float = 10.0
    responsibility: float = 0.5
    heading_noise: float = 0.0

    def __post_init__(self):
        if not self.time_horizon > 0:
            raise ConfigInvalid("time_horizon must be positive")
        if not 0.0 < self.responsibility <= 1.0:
            raise ConfigInvalid("responsibility must lie in (0, 1]")


@dataclass(frozen=True)
class Disc:
    """A moving circular body another agent must avoid."""

    position: tuple[float, float]
    velocity: tuple[float, float]
    radius: float
    reciprocal: bool = True
    id: int = -1


def advance_goal(agent: AgentState) -> AgentState:
    """Step the script past every goal already within tolerance."""
    if not agent.goals:
        return agent
    idx = agent.goal_index
    n = len(agent.goals)
    for _ in range(n):
        if idx >= n:
            break
        gx, gy = agent.goals[idx]
        if math.hypot(gx - agent.position[0], gy - agent.position[1]) > GOAL_TOLERANCE:
            break
        if idx == n - 1:
            if agent.loop:
                idx = 0
            else:
                break
        else:
            idx += 1
    if idx != agent.goal_index:
        return replace(agent, goal_index=idx)
    return agent


def preferred_velocity(agent: AgentState, dt: float | None = None) -> tuple[float, float]:
    goal = agent.current_goal
    if goal is None:
        return (0.0, 0.0)
    dx = goal[0] - agent.position[0]
    dy = goal[1] - agent.position[1]
    dist = math.hypot(dx, dy)
    if dist <= GOAL_TOLERANCE:
        return (0.0, 0.0)
    speed = agent.pref_speed
    if dt is not None and dt > 0:
        speed = min(speed, dist / dt)
    return (dx / dist * speed, dy / dist * speed)


# -- linear programs (lines are [px, py, dx, dy]; the feasible side is left of d) ---


def _det(ax, ay, bx, by):
    return ax * by - ay * bx


def _lp1(lines, no, radius, opt, direction_opt):
    px, py, dx, dy = lines[no]
    dot = px * dx + py * dy
    disc = dot * dot + radius * radius - (px * px + py * py)
    if disc < 0.0:
        return None
    sq = math.sqrt(disc)
    t_left = -dot - sq
    t_right = -dot + sq
    for i in range(no):
        qx, qy, ex, ey = lines[i]
        denom = _det(dx, dy, ex, ey)
        numer = _det(ex, ey, px - qx, py - qy)
        if abs(denom) <= _LP_EPS:
            if numer < 0.0:
                return None
            continue
        t = numer / denom
        if denom >= 0.0:
            t_right = min(t_right, t)
        else:
            t_left = max(t_left, t)
        if t_left > t_right:
            return None
    if direction_opt:
        if opt[0] * dx + opt[1] * dy > 0.0:
            t = t_right
        else:
            t = t_left
    else:
        t = dx * (opt[0] - px) + dy * (opt[1] - py)
        if t < t_left:
            t = t_left
        elif t > t_right:
            t = t_right
    return (px + t * dx, py + t * dy)


def _lp2(lines, radius, opt, direction_opt):
    if direction_opt:
        result = (opt[0] * radius, opt[1] * radius)
    elif opt[0] * opt[0] + opt[1] * opt[1] > radius * radius:
        n = math.hypot(opt[0], opt[1])
        result = (opt[0] / n * radius, opt[1] / n * radius)
    else:
        result = (opt[0], opt[1])
    for i, (px, py, dx, dy) in enumerate(lines):
        if _det(dx, dy, px - result[0], py - result[1]) > 0.0:
            nxt = _lp1(lines, i, radius, opt, direction_opt)
            if nxt is None:
                return i, result
            result = nxt
    return len(lines), result


def _lp3(lines, begin, radius, result):
    distance = 0.0
    for i in range(begin, len(lines)):
        px, py, dx, dy = lines[i]
        if _det(dx, dy, px - result[0], py - result[1]) > distance:
            proj = []
            for j in range(i):
                qx, qy, ex, ey = lines[j]
                determinant = _det(dx, dy, ex, ey)
                if abs(determinant) <= _LP_EPS:
                    if dx * ex + dy * ey > 0.0:
                        continue
                    point = (0.5 * (px + qx), 0.5 * (py + qy))
                else:
                    s = _det(ex, ey, px - qx, py - qy) / determinant
                    point = (px + s * dx, py + s * dy)
                wx, wy = ex - dx, ey - dy
                wn = math.hypot(wx, wy)
                proj.append([point[0], point[1], wx / wn, wy / wn])
            fail, cand = _lp2(proj, radius, (-dy, dx), True)
            if fail >= len(proj):
                result = cand
            distance = _det(dx, dy, px - result[0], py - result[1])
    return result


def orca_lines(agent: AgentState, neighbors, params: OrcaParams, dt: float) -> list[list[float]]:
    """Half-plane constraints induced by every neighbour disc within range."""
    inv_tau = 1.0 / params.time_horizon
    ax, ay = agent.position
    vx, vy = agent.velocity
    lines = []
    near = []
    for nb in neighbors:
        rx = nb.position[0] - ax
        ry = nb.position[1] - ay
        d2 = rx * rx + ry * ry
        if d2 <= params.neighbor_dist * params.neighbor_dist:
            near.append((d2, nb.id, rx, ry, nb))
    near.sort(key=lambda t: (t[0], t[1]))
    for d2, _, rx, ry, nb in near:
        rvx = vx - nb.velocity[0]
        rvy = vy - nb.velocity[1]
        r = agent.radius + nb.radius
        r2 = r * r
        if d2 > r2:
            wx = rvx - inv_tau * rx
            wy = rvy - inv_tau * ry
            w2 = wx * wx + wy * wy
            dot1 = wx * rx + wy * ry
            if dot1 < 0.0 and dot1 * dot1 > r2 * w2:
                wl = math.sqrt(w2)
                ux_, uy_ = wx / wl, wy / wl
                dx, dy = uy_, -ux_
                ux = (r * inv_tau - wl) * ux_
                uy = (r * inv_tau - wl) * uy_
            else:
                leg = math.sqrt(d2 - r2)
                if _det(rx, ry, wx, wy) > 0.0:
                    dx = (rx * leg - ry * r) / d2
                    dy = (rx * r + ry * leg) / d2
                else:
                    dx = -(rx * leg + ry * r) / d2
                    dy = -(-rx * r + ry * leg) / d2
                dot2 = rvx * dx + rvy * dy
                ux = dot2 * dx - rvx
                uy = dot2 * dy - rvy
        else:
            inv_dt = 1.0 / dt
            wx = rvx - inv_dt * rx
            wy = rvy - inv_dt * ry
            wl = math.hypot(wx, wy)
            if wl == 0.0:
                wx, wy, wl = 0.0, -1.0, 1.0
            ux_, uy_ = wx / wl, wy / wl
            dx, dy = uy_, -ux_
            ux = (r * inv_dt - wl) * ux_
            uy = (r * inv_dt - wl) * uy_
        share = params.responsibility if nb.reciprocal else 1.0
        lines.append([vx + share * ux, vy + share * uy, dx, dy])
    return lines


def orca_velocity(agent: AgentState, neighbors, params: OrcaParams, dt: float, pref=None) -> tuple[float, float]:
    """Collision-avoiding velocity for one agent given frozen neighbour discs."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    if pref is None:
        pref = preferred_velocity(agent, dt)
    lines = orca_lines(agent, neighbors, params, dt)
    if not lines:
        sp = math.hypot(*pref)
        if sp > agent.max_speed:
            return (pref[0] / sp * agent.max_speed, pref[1] / sp * agent.max_speed)
        return (float(pref[0]), float(pref[1]))
    fail, result = _lp2(lines, agent.max_speed, pref, False)
    if fail < len(lines):
        result = _lp3(lines, fail, agent.max_speed, result)
    sp = math.hypot(*result)
    if sp > agent.max_speed:
        result = (result[0] / sp * agent.max_speed, result[1] / sp * agent.max_speed)
    return result


def _biased_pref(agent: AgentState, pref, noise: float) -> tuple[float, float]:
    px, py = pref
    sp = math.hypot(px, py)
    if sp == 0.0:
        return pref
    if noise:
        c, s = math.cos(noise), math.sin(noise)
        px, py = c * px - s * py, s * px + c * py
    # same-sense lateral nudge, magnitude keyed to id, so symmetric encounters resolve
    k = DEADLOCK_EPS * (1.0 + (agent.id * 0.6180339887) % 1.0)
    return (px - k * py / sp, py + k * px / sp)


def agent_disc(agent: AgentState) -> Disc:
    return Disc(agent.position, agent.velocity, agent.radius, True, agent.id)


def step_crowd(
    agents,
    robot_disc: Disc | None,
    params: OrcaParams,
    dt: float,
    rng: np.random.Generator | None = None,
    now: float = 0.0,
) -> list[AgentState]:
    """Advance every spawned agent one synchronous step.

    Velocities are computed from the frozen pre-step state, then all
    positions integrate. Agents with ``spawn_time > now`` are passed through
    untouched.
    """
    if not 0.0 < dt <= 0.5:
        raise ValueError("dt must lie in (0, 0.5]")
    agents = list(agents)
    if not agents:
        return []
    active = [advance_goal(a) if a.spawn_time <= now else a for a in agents]
    live = [a for a in active if a.spawn_time <= now]
    noise = {}
    if params.heading_noise > 0 and rng is not None:
        ids = sorted(a.id for a in live)
        draws = rng.normal(0.0, params.heading_noise, len(ids))
        noise = dict(zip(ids, draws.tolist()))
    discs = [agent_disc(a) for a in live]
    if robot_disc is not None:
        robot_disc = replace(robot_disc, reciprocal=False)
    new_vel = {}
    for a in live:
        neighbors = [d for d in discs if d.id != a.id]
        if robot_disc is not None and a.avoids_robot:
            neighbors.append(robot_disc)
        pref = preferred_velocity(a, dt)
        pref = _biased_pref(a, pref, noise.get(a.id, 0.0))
        new_vel[a.id] = orca_velocity(a, neighbors, params, dt, pref=pref)
    out = []
    for a in active:
        if a.id in new_vel:
            vx, vy = new_vel[a.id]
            a = replace(a, velocity=(vx, vy), position=(a.position[0] + vx * dt, a.position[1] + vy * dt))
        out.append(a)
    return out
