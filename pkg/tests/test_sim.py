import dataclasses
import json
import math

import pytest

from conftest import flat_terrain, scenario_path
from fieldnav.controller import ModeKind
from fieldnav.crowd import AgentState
from fieldnav.errors import ConfigInvalid, UntraversableWaypoint
from fieldnav.sim import (
    AgentGenerator,
    config_from_dict,
    energy_update,
    generate_crossing_agents,
    load_config,
    run_trial,
)
from fieldnav.telemetry import records_to_csv
from fieldnav.terrain import EnergyParams, edge_energy

FLAT = load_config(scenario_path("flat_empty"))


@pytest.fixture(scope="module")
def flat_run():
    return run_trial(FLAT, 0)


def test_flat_empty_is_pure_long_term(flat_run):
    modes = {r.mode for r in flat_run.records}
    assert ModeKind.DYNAMIC.value not in modes and ModeKind.FAILSAFE.value not in modes
    # outside the dwell at the weed every tick is long-term
    moving = [r for r in flat_run.records if r.mode != ModeKind.TASK_DWELL.value]
    assert all(r.mode == ModeKind.LONG_TERM.value for r in moving)
    assert len(flat_run.spray_events()) == 1
    end = flat_run.final_state
    assert math.hypot(end.x - FLAT.home[0], end.y - FLAT.home[1]) <= FLAT.switch.r_waypoint
    assert flat_run.end_reason == "sets_exhausted" and flat_run.tours[0]["complete"]


def test_duration_is_ticks_times_dt(flat_run):
    s = flat_run.summary
    assert s.duration == len(flat_run.records) * FLAT.dt
    assert s.ticks == len(flat_run.records)


def test_drain_is_sum_of_tick_drains(flat_run):
    used = FLAT.battery_wh - flat_run.final_state.battery
    assert used == pytest.approx(math.fsum(flat_run.drains), rel=1e-12)
    assert flat_run.summary.energy_used_wh == pytest.approx(used, rel=1e-12)
    batt = [r.battery for r in flat_run.records]
    assert all(b1 <= b0 for b0, b1 in zip(batt, batt[1:]))


def test_identical_seed_identical_telemetry(flat_run):
    again = run_trial(FLAT, 0)
    assert records_to_csv(again.records) == records_to_csv(flat_run.records)


def test_energy_update_examples():
    t = flat_terrain()
    p = EnergyParams(idle_power=150.0)
    b, d = energy_update(10.0, (5.0, 5.0), (5.0, 5.0), t, p, ModeKind.LONG_TERM, 0.1)
    assert d == pytest.approx(0.004167, abs=1e-6) and b == pytest.approx(10.0 - d)
    assert energy_update(10.0, (5.0, 5.0), (6.0, 5.0), t, p, ModeKind.LONG_TERM, 0.0) == (10.0, 0.0)
    _, moving = energy_update(10.0, (5.0, 5.0), (5.1, 5.0), t, p, ModeKind.LONG_TERM, 0.1)
    assert moving >= d
    assert moving == pytest.approx((edge_energy(t, p, (5.0, 5.0), (5.1, 5.0)) + 15.0) / 3600.0)
    _, spray = energy_update(10.0, (5.0, 5.0), (5.0, 5.0), t, p, ModeKind.TASK_DWELL, 0.1, spray_power=60.0)
    assert spray == pytest.approx((15.0 + 6.0) / 3600.0)


def test_battery_for_one_and_a_half_tours_stops_at_set_boundary(flat_run):
    tour_wh = math.fsum(flat_run.drains)
    # independent estimate: planned tour energy plus idle and spray over the run time
    est = (flat_run.tours[0]["cost"] + FLAT.energy.idle_power * flat_run.summary.duration
           + FLAT.spray_power_w * FLAT.switch.t_spray) / 3600.0
    assert tour_wh == pytest.approx(est, rel=0.1)
    cfg = FLAT.with_overrides(repeat_sets=True, battery_wh=1.5 * tour_wh, reserve_wh=0.6 * tour_wh)
    res = run_trial(cfg, 0)
    assert res.end_reason == "reserve_reached"
    assert len(res.tours) == 1 and res.tours[0]["complete"]
    assert res.final_state.battery <= cfg.reserve_wh


def test_battery_runs_flat_mid_tour():
    cfg = FLAT.with_overrides(battery_wh=0.5)
    res = run_trial(cfg, 0)
    assert res.end_reason == "exhausted"
    # records carry the post-tick battery: only the last one is at or below zero
    assert res.records[-1].battery <= 0.0 < res.records[-2].battery
    assert res.final_state.battery == res.records[-1].battery


def test_never_enters_no_go_with_traffic():
    # a pond between home and the weed, and pedestrians crossing near it
    pond = [(17.0, 16.0), (23.0, 16.0), (23.0, 24.0), (17.0, 24.0)]
    t = flat_terrain(40, 40, slip=0.05, no_go=[pond])
    gen = AgentGenerator(count=3, center=(20.0, 20.0), spread=6.0, half_width=10.0, spawn_window=(2.0, 10.0))
    cfg = FLAT.with_overrides(terrain=t, agent_generator=gen, roadmap=dataclasses.replace(FLAT.roadmap, n_samples=150))
    for seed in range(3):
        res = run_trial(cfg, seed)
        assert res.tours[0]["complete"]
        pts = [(r.x, r.y) for r in res.records]
        assert not any(t.in_no_go(pts))
        assert all(t.contains(pts))


def test_skips_unreachable_waypoint():
    # second weed sealed inside a no-go ring: reachable nodes cannot connect to it
    ring = [(28.0, 8.0), (36.0, 8.0), (36.0, 9.0), (28.0, 9.0)]
    walls = [ring, [(28.0, 1.0), (36.0, 1.0), (36.0, 2.0), (28.0, 2.0)],
             [(28.0, 1.0), (29.0, 1.0), (29.0, 9.0), (28.0, 9.0)], [(35.0, 1.0), (36.0, 1.0), (36.0, 9.0), (35.0, 9.0)]]
    t = flat_terrain(40, 40, slip=0.05, no_go=walls)
    cfg = FLAT.with_overrides(terrain=t, waypoint_sets=[[(30.0, 20.0), (32.0, 5.0)]])
    res = run_trial(cfg, 0)
    kinds = [e["kind"] for e in res.warnings]
    assert "waypoint_skipped" in kinds
    assert len(res.spray_events()) == 1 and res.tours[0]["complete"]


def test_tour_sprays_each_waypoint_once():
    cfg = FLAT.with_overrides(waypoint_sets=[[(30.0, 20.0), (30.0, 30.0), (15.0, 32.0)]], max_duration=600.0)
    res = run_trial(cfg, 0)
    assert res.tours[0]["complete"]
    sprayed = sorted(e["waypoint"] for e in res.spray_events())
    assert sprayed == [0, 1, 2]


def test_config_errors(tmp_path):
    doc = json.loads(scenario_path("flat_empty").read_text())
    with pytest.raises(ConfigInvalid):
        config_from_dict({**doc, "dt": 0.5})
    with pytest.raises(ConfigInvalid):
        config_from_dict({**doc, "battery_wh": 10.0, "reserve_wh": 20.0})
    with pytest.raises(ConfigInvalid):
        config_from_dict({**doc, "bogus": 1})
    with pytest.raises(ConfigInvalid):
        config_from_dict({**doc, "waypoint_sets": [[[1, 1]] * 13]})
    with pytest.raises(ConfigInvalid):
        config_from_dict({k: v for k, v in doc.items() if k != "home"})
    with pytest.raises(ConfigInvalid):
        FLAT.with_overrides(agents=[AgentState(1, (0, 0)), AgentState(1, (2, 2))])
    with pytest.raises(UntraversableWaypoint):
        t = flat_terrain(40, 40, no_go=[[(5.0, 15.0), (15.0, 15.0), (15.0, 25.0), (5.0, 25.0)]])
        run_trial(FLAT.with_overrides(terrain=t), 0)


def test_failsafe_ticks_do_not_move():
    # a walker that ignores the robot (crossing seed 11) forces a failsafe stop
    cfg = load_config(scenario_path("crossing_agents"))
    agents = [dataclasses.replace(a, avoids_robot=False) for a in generate_crossing_agents(cfg.agent_generator, 11)]
    res = run_trial(cfg.with_overrides(agents=agents, agent_generator=None), 11)
    stopped = [r for r in res.records if r.mode == ModeKind.FAILSAFE.value]
    assert stopped
    assert all(r.v_overall == 0.0 and r.v2goal == 0.0 for r in stopped)
    assert res.summary.near_collision_count >= 1
