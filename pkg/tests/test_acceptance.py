"""End-to-end acceptance checks, one test per criterion.

Each test prints a single ``criterion N: PASS|FAIL`` line with the measured
values next to the pinned tolerance, then asserts.
"""

import dataclasses
import math
import time

import numpy as np
import pytest

from conftest import ramp_terrain, scenario_path
from fieldnav.cli import simulate_files, sweep_files
from fieldnav.crowd import GOAL_TOLERANCE, AgentState, OrcaParams, step_crowd
from fieldnav.mission import solve_tour, tour_cost
from fieldnav.roadmap import build_prm, shortest_path
from fieldnav.sim import generate_crossing_agents, load_config, run_trial
from fieldnav.telemetry import ModeTotals, closest_agent_histogram, records_to_csv
from fieldnav.terrain import EnergyParams, edge_energy
from oracles import brute_force_tour, floyd_warshall

BUNDLED = ["flat_empty", "ramp_energy", "crossing_agents", "blind_spot_incident", "paper_analogue"]
ANALOGUE_SEEDS = range(10)


@pytest.fixture
def report(capsys):
    def emit(n, ok, detail):
        with capsys.disabled():
            print(f"\ncriterion {n}: {'PASS' if ok else 'FAIL'} - {detail}")
        assert ok, f"criterion {n}: {detail}"

    return emit


@pytest.fixture(scope="module")
def analogue():
    cfg = load_config(scenario_path("paper_analogue"))
    runs, times = {}, {}
    for s in ANALOGUE_SEEDS:
        t0 = time.perf_counter()
        runs[s] = run_trial(cfg, s)
        times[s] = time.perf_counter() - t0
    return cfg, runs, times


def rising_edge_oracle(values, thr):
    """Number of entries into the set {v < thr}, written without state flags."""
    inside = [v < thr for v in values]
    return sum(1 for i, b in enumerate(inside) if b and (i == 0 or not inside[i - 1]))


# -- 1 -----------------------------------------------------------------------------------


def test_criterion_1_atsp_matches_brute_force(report):
    rng = np.random.default_rng(1)
    t0 = time.perf_counter()
    worst, checked = 0.0, 0
    for k in range(200):
        n = 3 + k % 6  # waypoints; the matrix adds home
        # integer costs keep every tour sum exact, so equality is meaningful
        c = rng.integers(1, 1000, (n + 1, n + 1)).astype(float)
        np.fill_diagonal(c, 0.0)
        best, _ = brute_force_tour(c)
        t = solve_tour(c)
        worst = max(worst, abs(t.total_cost - best))
        checked += t.total_cost == best and tour_cost(c, t.order) == best
    elapsed = time.perf_counter() - t0
    report(1, checked == 200 and elapsed < 30.0,
           f"{checked}/200 exact optima (max |diff| {worst:g}), {elapsed:.1f} s (limit 30 s)")


# -- 2 -----------------------------------------------------------------------------------


def test_criterion_2_shortest_paths_match_floyd_warshall(report):
    rng = np.random.default_rng(2)
    worst, pairs, max_nodes = 0.0, 0, 0
    for k in range(50):
        t = ramp_terrain(60, 40, grade=float(rng.uniform(-0.1, 0.1)), slip=float(rng.uniform(0.0, 0.2)))
        wps = [tuple(rng.uniform(2, 58, 1)) + tuple(rng.uniform(2, 38, 1)) for _ in range(int(rng.integers(2, 6)))]
        rm = build_prm(t, EnergyParams(), wps, n_samples=int(rng.integers(10, 55)), k=int(rng.integers(3, 9)),
                       seed=k)
        assert rm.n_nodes <= 60
        max_nodes = max(max_nodes, rm.n_nodes)
        arcs = [(i, j, c[0]) for i, nb in enumerate(rm.edges) for j, c in nb.items()]
        fw = floyd_warshall(rm.n_nodes, arcs)
        for a in range(rm.n_nodes):
            for b in range(rm.n_nodes):
                if a == b or not math.isfinite(fw[a, b]):
                    continue
                _, cost = shortest_path(rm, a, b)
                worst = max(worst, abs(cost - fw[a, b]) / max(fw[a, b], 1e-300))
                pairs += 1
    report(2, worst <= 1e-9 and pairs > 0,
           f"{pairs} pairs over 50 roadmaps (<= {max_nodes} nodes), max rel error {worst:.2e} (tol 1e-9)")


# -- 3 -----------------------------------------------------------------------------------


def _run_crowd(agents, max_steps=2000, dt=0.1):
    worst_gap = math.inf
    for k in range(max_steps):
        agents = step_crowd(agents, None, OrcaParams(), dt, now=k * dt)
        for i in range(len(agents)):
            for j in range(i + 1, len(agents)):
                a, b = agents[i], agents[j]
                d = math.hypot(a.position[0] - b.position[0], a.position[1] - b.position[1])
                worst_gap = min(worst_gap, d - a.radius - b.radius)
        if all(_at_goal(a) for a in agents):
            break
    return worst_gap, all(_at_goal(a) for a in agents)


def _at_goal(a):
    g = a.goals[-1]
    return math.hypot(a.position[0] - g[0], a.position[1] - g[1]) <= GOAL_TOLERANCE + 1e-9


def _crossing(seed):
    rng = np.random.default_rng(seed)
    while True:
        n = int(rng.integers(2, 9))
        out = []
        for i in range(n):
            th = rng.uniform(0, 2 * math.pi)
            r = rng.uniform(6, 10)
            p = (r * math.cos(th), r * math.sin(th))
            g = (-p[0] + rng.uniform(-2, 2), -p[1] + rng.uniform(-2, 2))
            out.append(AgentState(i, p, pref_speed=float(rng.uniform(0.8, 1.4)), max_speed=1.6, goals=(g,)))
        pts = [a.position for a in out] + [a.goals[0] for a in out]
        sep = min(math.hypot(p[0] - q[0], p[1] - q[1]) for i, p in enumerate(pts) for q in pts[i + 1:])
        if sep >= 1.0:  # starts and goals must be placeable without overlap
            return out


def test_criterion_3_orca_safety(report):
    circle = []
    for i in range(8):
        th = 2 * math.pi * i / 8
        p = (10 * math.cos(th), 10 * math.sin(th))
        circle.append(AgentState(i, p, goals=((-p[0], -p[1]),)))
    results = [_run_crowd(circle)] + [_run_crowd(_crossing(1000 + s)) for s in range(20)]
    gap = min(r[0] for r in results)
    reached = sum(r[1] for r in results)
    report(3, gap >= -0.05 and reached == 21,
           f"min surface gap {gap:.3f} m (slack -0.05 m), {reached}/21 scenarios with every agent at its goal")


# -- 4 -----------------------------------------------------------------------------------


def test_criterion_4_failsafe_stops(report):
    cfg = load_config(scenario_path("crossing_agents"))
    d_fs = cfg.switch.d_failsafe
    close, moving, edges_ok, near = 0, 0, 0, 0
    runs = 0
    # full stack as bundled, then the same crossings with walkers that do not yield
    for reactive in (True, False):
        for seed in range(50):
            agents = generate_crossing_agents(cfg.agent_generator, seed)
            if not reactive:
                agents = [dataclasses.replace(a, avoids_robot=False) for a in agents]
            res = run_trial(cfg.with_overrides(agents=agents, agent_generator=None), seed)
            for r in res.records:
                if r.closest_agent < d_fs:
                    close += 1
                    moving += r.v_overall > 0.0
            walk = [r.closest_agent for r in res.records]
            edges_ok += res.summary.near_collision_count == rising_edge_oracle(walk, d_fs)
            near += res.summary.near_collision_count
            runs += 1
    report(4, moving == 0 and edges_ok == runs,
           f"{close} ticks inside {d_fs} m over {runs} trials, {moving} with motion; "
           f"rising-edge count agrees in {edges_ok}/{runs} ({near} near-collisions)")


# -- 5 -----------------------------------------------------------------------------------


def test_criterion_5_blind_spot_regression(report):
    cfg = load_config(scenario_path("blind_spot_incident"))
    assert not cfg.pursuit.blind_spot_guard and cfg.tracker.decay_blind == cfg.tracker.decay_visible
    fixed = cfg.with_overrides(pursuit=dataclasses.replace(cfg.pursuit, blind_spot_guard=True),
                               tracker=dataclasses.replace(cfg.tracker, decay_blind=0.05))
    incident = run_trial(cfg).summary.min_closest_agent
    mitigated = [run_trial(fixed, s).summary.min_closest_agent for s in range(25)]
    report(5, incident < 1.5 and min(mitigated) >= 1.5,
           f"guard off, uniform decay: min {incident:.2f} m (< 1.5); "
           f"guard on, slow blind decay: min {min(mitigated):.2f} m over 25 seeds (>= 1.5)")


# -- 6 -----------------------------------------------------------------------------------


def test_criterion_6_efficiency_ordering(report, analogue):
    _, runs, _ = analogue
    tot = ModeTotals()
    for res in runs.values():
        tot = tot + ModeTotals.from_records(res.records)
    v_dyn = tot.v_sum["Dynamic"] / tot.ticks["Dynamic"]
    v_lt = tot.v_sum["LongTerm"] / tot.ticks["LongTerm"]
    ratio_lt = tot.v2g_sum["LongTerm"] / tot.v_sum["LongTerm"]
    away_dyn = tot.away_ticks["Dynamic"] / tot.ticks["Dynamic"]
    away_lt = tot.away_ticks["LongTerm"] / tot.ticks["LongTerm"]
    ok = v_dyn / v_lt < 0.8 and ratio_lt >= 0.9 and away_dyn >= 3 * away_lt
    report(6, ok,
           f"(a) v Dynamic {v_dyn:.2f} / LongTerm {v_lt:.2f} = {v_dyn / v_lt:.2f} (< 0.8); "
           f"(b) LongTerm v2goal/v {ratio_lt:.3f} (>= 0.9); "
           f"(c) away fraction Dynamic {away_dyn:.3f} vs LongTerm {away_lt:.4f} (>= 3x) "
           f"over {len(runs)} seeds")


# -- 7 -----------------------------------------------------------------------------------


def _overlap_scenario():
    """Straight transect with the corridor example built in.

    P stands 1 m off the path (corridor trigger well beyond r_agent), Q stands
    7 m off it (no trigger), R trails the robot inside its rear blind spot.
    """
    cfg = load_config(scenario_path("crossing_agents"))
    p = AgentState(0, (50.0, 51.0), goals=((50.0, 51.0),), avoids_robot=False)
    q = AgentState(1, (30.0, 57.0), goals=((30.0, 57.0),), avoids_robot=False)
    r = AgentState(2, (15.0, 50.0), goals=((30.0, 50.0),), pref_speed=1.5, max_speed=1.6, spawn_time=6.0,
                   avoids_robot=False)
    return cfg.with_overrides(agents=[p, q, r], agent_generator=None)


def test_criterion_7_mode_behaviour(report, analogue):
    cfg, runs, _ = analogue
    r_agent = cfg.switch.r_agent
    built = _overlap_scenario()
    built_run = run_trial(built, 0)
    streams = [res.records for res in runs.values()] + [built_run.records]
    # a confirmed track inside r_agent always hands the robot to the dynamic planner
    # (or to the failsafe stop, which outranks it)
    owned = [r.mode for recs in streams for r in recs if r.closest_track <= r_agent]
    missed = sum(m not in ("Dynamic", "Failsafe") for m in owned)
    recs = built_run.records
    dyn_far = sum(1 for r in recs if r.mode == "Dynamic" and r.closest_agent > built.switch.r_agent)
    lt_near = sum(1 for r in recs if r.mode == "LongTerm" and r.closest_agent < built.switch.r_agent)
    h = closest_agent_histogram(recs)
    shared = sorted(set(h.get("Dynamic", {})) & set(h.get("LongTerm", {})))
    fracs = [res.summary.dynamic_fraction for res in runs.values()]
    tot = sum(len(res.records) for res in runs.values())
    dyn = sum(1 for res in runs.values() for r in res.records if r.mode == "Dynamic")
    pooled = dyn / tot
    ok = missed == 0 and dyn_far > 0 and lt_near > 0 and shared and 0.03 <= pooled <= 0.25
    report(7, ok,
           f"{missed}/{len(owned)} tracked-within-r_agent ticks outside Dynamic/Failsafe; "
           f"built scenario: {dyn_far} Dynamic ticks beyond r_agent, {lt_near} LongTerm ticks below it, "
           f"shared bins {shared}; Dynamic fraction {100 * pooled:.1f}% "
           f"(per seed {100 * min(fracs):.1f}-{100 * max(fracs):.1f}%, band 3-25%)")


# -- 8 -----------------------------------------------------------------------------------


def test_criterion_8_projection_bound(report, analogue):
    _, runs, _ = analogue
    streams = {f"paper_analogue/{s}": res.records for s, res in runs.items()}
    for name in BUNDLED[:-1]:
        streams[name] = run_trial(load_config(scenario_path(name))).records
    ticks = sum(len(v) for v in streams.values())
    bad = sum(1 for v in streams.values() for r in v if abs(r.v2goal) > r.v_overall + 1e-9)
    report(8, bad == 0 and ticks > 0, f"{ticks - bad}/{ticks} ticks with |v2goal| <= v_overall across "
                                      f"{len(streams)} runs of {len(BUNDLED)} bundled scenarios")


# -- 9 -----------------------------------------------------------------------------------


def test_criterion_9_energy_model(report):
    cfg = load_config(scenario_path("ramp_energy"))
    t, p = cfg.terrain, cfg.energy
    assert p.regen_factor > 0
    up = edge_energy(t, p, (20.0, 30.0), (30.0, 30.0))
    flat = edge_energy(t, p, (25.0, 25.0), (25.0, 35.0))
    down = edge_energy(t, p, (30.0, 30.0), (20.0, 30.0))
    ordered = up > flat > down
    res = run_trial(cfg)
    rm = res.roadmap
    dry = dataclasses.replace(t, slip=np.zeros_like(t.slip))
    wet = dataclasses.replace(t, slip=np.full_like(t.slip, 0.3))
    edges = [(rm.nodes[i], rm.nodes[j]) for i, nb in enumerate(rm.edges) for j in nb]
    rises = sum(edge_energy(wet, p, a, b) > edge_energy(dry, p, a, b) for a, b in edges)
    gap = abs((cfg.battery_wh - res.final_state.battery) - math.fsum(res.drains))
    report(9, ordered and rises == len(edges) and gap <= 1e-6,
           f"up {up:.0f} J > flat {flat:.0f} J > down {down:.0f} J: {ordered}; "
           f"slip 0 -> 0.3 raises {rises}/{len(edges)} edges; drain gap {gap:.1e} Wh (tol 1e-6)")


# -- 10 ----------------------------------------------------------------------------------


def test_criterion_10_determinism(report, analogue, tmp_path):
    cfg, runs, _ = analogue
    same = 0
    for name in BUNDLED:
        out = tmp_path / name
        if name == "paper_analogue":
            first = records_to_csv(runs[cfg.seed].records)  # the fixture already ran the scenario seed
        else:
            first = records_to_csv(run_trial(load_config(scenario_path(name))).records)
        simulate_files(scenario_path(name), out, quiet=True)
        same += (out / "telemetry.csv").read_text() == first
    seeds = list(range(8))
    sweep_files(scenario_path("flat_empty"), seeds, tmp_path / "w1", workers=1, quiet=True)
    sweep_files(scenario_path("flat_empty"), seeds, tmp_path / "w8", workers=8, quiet=True)
    files = sorted(p.relative_to(tmp_path / "w1") for p in (tmp_path / "w1").rglob("*")
                   if p.is_file() and p.name != "manifest.json" and p.parent.name.startswith("seed_"))
    identical = sum((tmp_path / "w1" / f).read_bytes() == (tmp_path / "w8" / f).read_bytes() for f in files)
    report(10, same == len(BUNDLED) and identical == len(files) and len(files) >= 8 * 5,
           f"{same}/{len(BUNDLED)} bundled scenarios byte-identical on rerun; "
           f"sweep 1 vs 8 workers: {identical}/{len(files)} per-seed files identical")


# -- 11 ----------------------------------------------------------------------------------


def test_criterion_11_trial_protocol(report, analogue):
    cfg, runs, times = analogue
    sizes = [len(s) for s in cfg.waypoint_sets]
    ok_sets = len(sizes) == 3 and all(5 <= n <= 8 for n in sizes) and cfg.repeat_sets
    problems = []
    for s, res in runs.items():
        order = [t["set"] for t in res.tours]
        if order != [k % 3 for k in range(len(order))] or len(order) <= 3:
            problems.append(f"seed {s}: set order {order}")
        if res.end_reason != "reserve_reached" or res.final_state.battery > cfg.reserve_wh:
            problems.append(f"seed {s}: ended by {res.end_reason}")
        if not all(t["complete"] for t in res.tours):
            problems.append(f"seed {s}: incomplete tour")
        sprays = res.spray_events()
        for tour in res.tours:
            got = sorted(e["waypoint"] for e in sprays if tour["start"] <= e["t"] <= tour["end"])
            if got != sorted(w for w in tour["order"] if w >= 0):
                problems.append(f"seed {s}: set {tour['set']} sprays {got}")
    slow = max(times.values())
    report(11, ok_sets and not problems and slow < 120.0,
           f"sets of {sizes} waypoints cycled; {len(runs)} seeds end at a set boundary on the reserve "
           f"with one spray per waypoint{'; ' + '; '.join(problems) if problems else ''}; "
           f"slowest run {slow:.1f} s (limit 120 s)")
