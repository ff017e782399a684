"""Compiled inner loops of the tree search.

The tree lives in flat arrays (one row per node, at most one node expanded
per iteration). Each kernel mirrors a plain-Python counterpart elsewhere in
the package, and the tests check them against each other.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

_TWO_PI = 2.0 * math.pi
_BOUNDS_EPS = 1e-9


@njit(cache=True)
def wrap(a):
    return (a + math.pi) % _TWO_PI - math.pi


@njit(cache=True)
def step(x, y, h, action_v, action_w, dt, v_max, w_max):
    v = min(max(action_v, 0.0), v_max)
    w = min(max(action_w, -w_max), w_max)
    h2 = wrap(h + w * dt)
    return x + v * dt * math.cos(h2), y + v * dt * math.sin(h2), h2, v


@njit(cache=True)
def cursor_project(cur, s_lo, s_hi, x, y):
    """cur rows: ax, ay, tx, ty, len, s0, scale."""
    best_d = math.inf
    best_s = 0.0
    for i in range(cur.shape[1]):
        ax = cur[0, i]
        ay = cur[1, i]
        tx = cur[2, i]
        ty = cur[3, i]
        L = cur[4, i]
        s0 = cur[5, i]
        sc = cur[6, i]
        t = (x - ax) * tx + (y - ay) * ty
        if t < 0.0:
            t = 0.0
        elif t > L:
            t = L
        s = s0 + t * sc if L > 0 else s0
        if s < s_lo or s > s_hi:
            s = min(max(s, s_lo), s_hi)
            t = (s - s0) / sc if L > 0 else 0.0
            t = min(max(t, 0.0), L)
        px = ax + t * tx
        py = ay + t * ty
        d = math.hypot(x - px, y - py)
        if d < best_d:
            best_d = d
            best_s = s
    return best_s, best_d


@njit(cache=True)
def cursor_point(cur, s_lo, s_hi, s):
    s = min(max(s, s_lo), s_hi)
    n = cur.shape[1]
    i = n - 1
    for k in range(n):
        if k + 1 == n or cur[5, k + 1] > s:
            i = k
            break
    L = cur[4, i]
    t = (s - cur[5, i]) / cur[6, i] if L > 0 else 0.0
    t = min(max(t, 0.0), L)
    return cur[0, i] + t * cur[2, i], cur[1, i] + t * cur[3, i]


@njit(cache=True)
def pursuit(x, y, h, tgt_x, tgt_y, remaining, lookahead, v_max, v_min, w_max, tip, gain, slow_r, creep):
    alpha = wrap(math.atan2(tgt_y - y, tgt_x - x) - h)
    turn = math.copysign(w_max, alpha) if alpha != 0 else w_max
    if abs(alpha) > tip:
        if creep:
            return v_min, turn
        return 0.0, turn
    kappa = 2.0 * math.sin(alpha) / lookahead
    v = v_max * max(0.0, 1.0 - gain * abs(kappa))
    v = min(v, max(v_min, v_max * remaining / slow_r))
    v = max(v, v_min)
    omega = v * kappa
    if abs(omega) > w_max:
        omega = math.copysign(w_max, omega)
        v = w_max / abs(kappa)
    return v, omega


@njit(cache=True)
def blocked(bounds, poly_xy, poly_off, poly_box, x, y):
    if (x < bounds[0] - _BOUNDS_EPS or x > bounds[2] + _BOUNDS_EPS
            or y < bounds[1] - _BOUNDS_EPS or y > bounds[3] + _BOUNDS_EPS):
        return True
    for p in range(poly_off.shape[0] - 1):
        if x < poly_box[p, 0] or y < poly_box[p, 1] or x > poly_box[p, 2] or y > poly_box[p, 3]:
            continue
        a = poly_off[p]
        b = poly_off[p + 1]
        hits = 0
        for i in range(a, b):
            j = i + 1 if i + 1 < b else a
            x0 = poly_xy[i, 0]
            y0 = poly_xy[i, 1]
            x1 = poly_xy[j, 0]
            y1 = poly_xy[j, 1]
            if (y0 > y) != (y1 > y):
                xc = x0 + (y - y0) * (x1 - x0) / (y1 - y0)
                if x < xc:
                    hits += 1
        if hits % 2 == 1:
            return True
    return False


@njit(cache=True)
def descend(
    child, nchild, nvis, wsum, nst, ns, ndev, nblk, n_nodes,
    actions, H, dt, v_lim, w_lim, ucb_c,
    cur, s_lo, s_hi, limit,
    pp, creep, confine, bounds, poly_xy, poly_off, poly_box,
    branch, traj, ss, devs, blk,
):
    """Select by UCT, expand one untried action, roll out to depth H.

    Fills ``branch`` with the tree path (returns its depth) and
    ``traj/ss/devs/blk`` with the full H+1 step trajectory. ``pp`` packs the
    pursuit constants: lookahead, v_max, v_min, w_max, tip, gain, slow_r,
    stop_r. Rollouts halt once within ``stop_r`` of the point at ``limit``,
    as the robot does on reaching an objective.
    """
    n_act = actions.shape[0]
    node = 0
    depth = 0
    branch[0] = 0
    while depth < H and nchild[node] == n_act:
        log_n = math.log(nvis[node])
        best = -1
        best_u = -math.inf
        for a in range(n_act):
            ch = child[node, a]
            u = wsum[ch] / nvis[ch] + ucb_c * math.sqrt(log_n / nvis[ch])
            if u > best_u:
                best = ch
                best_u = u
        node = best
        depth += 1
        branch[depth] = node
    if depth < H:
        a = nchild[node]
        x, y, h, v = step(nst[node, 0], nst[node, 1], nst[node, 2], actions[a, 0], actions[a, 1],
                          dt, v_lim, w_lim)
        s, d = cursor_project(cur, s_lo, s_hi, x, y)
        k = n_nodes[0]
        n_nodes[0] = k + 1
        nst[k, 0] = x
        nst[k, 1] = y
        nst[k, 2] = h
        nst[k, 3] = v
        ns[k] = s
        ndev[k] = d
        nblk[k] = blocked(bounds, poly_xy, poly_off, poly_box, x, y) if confine else False
        child[node, a] = k
        nchild[node] = a + 1
        node = k
        depth += 1
        branch[depth] = k
    for i in range(depth + 1):
        nd = branch[i]
        traj[i, 0] = nst[nd, 0]
        traj[i, 1] = nst[nd, 1]
        traj[i, 2] = nst[nd, 2]
        traj[i, 3] = nst[nd, 3]
        ss[i] = ns[nd]
        devs[i] = ndev[nd]
        blk[i] = nblk[nd]
    x = traj[depth, 0]
    y = traj[depth, 1]
    h = traj[depth, 2]
    s = ss[depth]
    gx, gy = cursor_point(cur, s_lo, s_hi, limit)
    for i in range(depth + 1, H + 1):
        if math.hypot(x - gx, y - gy) <= pp[7]:
            cv, cw = 0.0, 0.0
        else:
            tx, ty = cursor_point(cur, s_lo, s_hi, min(s + pp[0], limit))
            cv, cw = pursuit(x, y, h, tx, ty, max(0.0, limit - s), pp[0], pp[1], pp[2], pp[3], pp[4], pp[5],
                             pp[6], creep)
        x, y, h, v = step(x, y, h, cv, cw, dt, v_lim, w_lim)
        s, d = cursor_project(cur, s_lo, s_hi, x, y)
        traj[i, 0] = x
        traj[i, 1] = y
        traj[i, 2] = h
        traj[i, 3] = v
        ss[i] = s
        devs[i] = d
        blk[i] = blocked(bounds, poly_xy, poly_off, poly_box, x, y) if confine else False
    return depth


@njit(cache=True)
def backup(nvis, wsum, branch, depth, traj, ss, devs, blk, sample, H, weights, d_soft, d_col, gamma):
    """Score the trajectory against one agent sample (H, n, 2) and back up returns.

    ``weights`` = (w_progress, w_dev, w_soft, w_col).
    """
    n = sample.shape[1]
    G = 0.0
    for k in range(H - 1, -1, -1):
        r = weights[0] * (ss[k + 1] - ss[k]) - weights[1] * devs[k + 1]
        if n > 0:
            dmin = math.inf
            for j in range(n):
                dx = sample[k, j, 0] - traj[k + 1, 0]
                dy = sample[k, j, 1] - traj[k + 1, 1]
                d = math.sqrt(dx * dx + dy * dy)
                if d < dmin:
                    dmin = d
            r -= weights[2] * max(0.0, d_soft - dmin)
            if dmin < d_col:
                r -= weights[3]
        if blk[k + 1]:
            r -= weights[3]
        G = r + gamma * G
        if k < depth:
            nd = branch[k + 1]
            nvis[nd] += 1
            wsum[nd] += G
    nvis[0] += 1


@njit(cache=True)
def search(
    child, nchild, nvis, wsum, nst, ns, ndev, nblk, n_nodes,
    actions, H, dt, v_lim, w_lim, ucb_c,
    cur, s_lo, s_hi, limit,
    pp, creep, confine, bounds, poly_xy, poly_off, poly_box,
    samples, weights, d_soft, d_col, gamma,
):
    """All iterations against pre-drawn samples (iterations, H, n, 2)."""
    branch = np.zeros(H + 1, dtype=np.int64)
    traj = np.zeros((H + 1, 4))
    ss = np.zeros(H + 1)
    devs = np.zeros(H + 1)
    blk = np.zeros(H + 1, dtype=np.bool_)
    for it in range(samples.shape[0]):
        depth = descend(child, nchild, nvis, wsum, nst, ns, ndev, nblk, n_nodes,
                        actions, H, dt, v_lim, w_lim, ucb_c, cur, s_lo, s_hi, limit,
                        pp, creep, confine, bounds, poly_xy, poly_off, poly_box,
                        branch, traj, ss, devs, blk)
        backup(nvis, wsum, branch, depth, traj, ss, devs, blk, samples[it], H, weights, d_soft, d_col, gamma)
