"""Deterministic trial engine.

A trial plans one energy-optimal tour per waypoint set, then runs a fixed
tick pipeline until the tour closes at home:

    sense -> update_tracks -> select_mode -> command -> failsafe override
    -> integrate robot -> step_crowd -> energy update -> StepRecord

Agents step after the robot, so the robot reacts to last tick's agents and
the agents react to the robot's current motion. Sets are visited in the
configured sequence (optionally cycling) until the battery reaches the
reserve at a set boundary or runs flat mid-set.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .controller import (
    Mode,
    ModeKind,
    PursuitParams,
    SwitchParams,
    failsafe_check,
    select_mode,
    track_path,
)
from .crowd import AgentState, Disc, OrcaParams, step_crowd
from .errors import ConfigInvalid, NoPath, UntraversableWaypoint
from .local_planner import Confinement, MctsParams, plan, simulate_step
from .mission import ReferencePath, Tour, solve_tour, stitch_reference_path
from .perception import SensorModel, Tracker, TrackerParams, in_blind_spot, sense
from .prediction import PredictorParams, get_predictor
from .roadmap import CostMatrix, Roadmap, build_prm, goal_cost_matrix
from .telemetry import StepRecord, SummaryParams, TrialSummary, summarize
from .terrain import CostOverrides, EnergyParams, TerrainMap, edge_energy, terrain_from_dict

MAX_DT = 0.2


# -- configuration -------------------------------------------------------------------


@dataclass(frozen=True)
class RoadmapParams:
    n_samples: int = 500
    k: int = 8
    seed: int | None = None


@dataclass(frozen=True)
class RobotParams:
    radius: float = 0.6
    heading: float | None = None


@dataclass(frozen=True)
class AgentGenerator:
    """Seeded crossing traffic: agents walk across the reference path."""

    count: int = 4
    center: tuple[float, float] = (50.0, 50.0)
    spread: float = 20.0
    half_width: float = 15.0
    axis: float = 0.0
    spawn_window: tuple[float, float] = (0.0, 20.0)
    speed_range: tuple[float, float] = (0.9, 1.4)
    seed_offset: int = 0


@dataclass
class ScenarioConfig:
    name: str
    terrain: TerrainMap
    home: tuple[float, float]
    waypoint_sets: list[list[tuple[float, float]]]
    dt: float = 0.1
    seed: int = 0
    energy: EnergyParams = field(default_factory=EnergyParams)
    overrides: CostOverrides | None = None
    set_sequence: list[int] | None = None
    repeat_sets: bool = False
    max_tours: int = 1000
    agents: list[AgentState] = field(default_factory=list)
    agent_generator: AgentGenerator | None = None
    orca: OrcaParams = field(default_factory=OrcaParams)
    sensor: SensorModel = field(default_factory=SensorModel)
    tracker: TrackerParams = field(default_factory=TrackerParams)
    predictor: str = "cv"
    predictor_params: PredictorParams = field(default_factory=PredictorParams)
    mcts: MctsParams = field(default_factory=MctsParams)
    switch: SwitchParams = field(default_factory=SwitchParams)
    pursuit: PursuitParams = field(default_factory=PursuitParams)
    roadmap: RoadmapParams = field(default_factory=RoadmapParams)
    robot: RobotParams = field(default_factory=RobotParams)
    battery_wh: float = 1000.0
    reserve_wh: float = 0.0
    herbicide_l: float = 10.0
    spray_l_per_weed: float = 0.05
    spray_power_w: float = 60.0
    max_duration: float = 3600.0
    leg_timeout: float = 120.0

    def __post_init__(self):
        if not 0.0 < self.dt <= MAX_DT:
            raise ConfigInvalid(f"dt must lie in (0, {MAX_DT}]")
        if not self.battery_wh > self.reserve_wh >= 0.0:
            raise ConfigInvalid("need battery_wh > reserve_wh >= 0")
        if self.herbicide_l < 0 or self.spray_l_per_weed < 0:
            raise ConfigInvalid("herbicide quantities must be nonnegative")
        if not self.waypoint_sets:
            raise ConfigInvalid("at least one waypoint set is required")
        for i, s in enumerate(self.waypoint_sets):
            if not 1 <= len(s) <= 12:
                raise ConfigInvalid(f"waypoint set {i} must hold 1..12 points, has {len(s)}")
        seq = self.sequence
        if any(not 0 <= k < len(self.waypoint_sets) for k in seq):
            raise ConfigInvalid("set_sequence refers to a missing waypoint set")
        if self.max_duration <= 0:
            raise ConfigInvalid("max_duration must be positive")
        get_predictor(self.predictor)
        ids = [a.id for a in self.agents]
        if len(set(ids)) != len(ids):
            raise ConfigInvalid("agent ids must be unique")

    @property
    def sequence(self) -> list[int]:
        if self.set_sequence is None:
            return list(range(len(self.waypoint_sets)))
        return list(self.set_sequence)

    def with_overrides(self, **changes) -> "ScenarioConfig":
        return dataclasses.replace(self, **changes)


def _build(cls, doc, section: str, rename: dict | None = None, convert: dict | None = None):
    if doc is None:
        return cls()
    if not isinstance(doc, dict):
        raise ConfigInvalid(f"{section}: expected an object")
    doc = dict(doc)
    for src, dst in (rename or {}).items():
        if src in doc:
            doc[dst] = doc.pop(src)
    for key, fn in (convert or {}).items():
        if key in doc:
            doc[key] = fn(doc[key])
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(doc) - names)
    if unknown:
        raise ConfigInvalid(f"{section}: unknown keys {unknown}")
    try:
        return cls(**doc)
    except ConfigInvalid as exc:
        raise ConfigInvalid(f"{section}: {exc}") from None
    except (TypeError, ValueError) as exc:
        raise ConfigInvalid(f"{section}: {exc}") from None


def _point(v, what: str) -> tuple[float, float]:
    try:
        x, y = v
        return (float(x), float(y))
    except (TypeError, ValueError):
        raise ConfigInvalid(f"{what}: expected [x, y], got {v!r}") from None


def _deg_to_rad(v):
    return math.radians(float(v))


def _parse_agents(docs) -> list[AgentState]:
    if not isinstance(docs, list):
        raise ConfigInvalid("agents: expected a list")
    out = []
    allowed = {"id", "start", "goals", "loop", "radius", "pref_speed", "max_speed", "spawn_time", "group", "avoids_robot"}
    for i, d in enumerate(docs):
        if not isinstance(d, dict):
            raise ConfigInvalid(f"agents[{i}]: expected an object")
        unknown = sorted(set(d) - allowed)
        if unknown:
            raise ConfigInvalid(f"agents[{i}]: unknown keys {unknown}")
        if "start" not in d:
            raise ConfigInvalid(f"agents[{i}]: missing start")
        try:
            out.append(
                AgentState(
                    id=int(d.get("id", i)),
                    position=_point(d["start"], f"agents[{i}].start"),
                    radius=float(d.get("radius", 0.4)),
                    pref_speed=float(d.get("pref_speed", 1.3)),
                    max_speed=float(d.get("max_speed", 1.6)),
                    goals=tuple(_point(g, f"agents[{i}].goals") for g in d.get("goals", [])),
                    loop=bool(d.get("loop", False)),
                    spawn_time=float(d.get("spawn_time", 0.0)),
                    group=str(d.get("group", "")),
                    avoids_robot=bool(d.get("avoids_robot", True)),
                )
            )
        except ConfigInvalid as exc:
            raise ConfigInvalid(f"agents[{i}]: {exc}") from None
    return out


TOP_LEVEL_KEYS = {
    "name", "description", "terrain", "home", "waypoint_sets", "dt", "seed", "energy", "cost_overrides",
    "set_sequence", "repeat_sets", "max_tours", "agents", "agent_generator", "orca", "sensor", "tracker",
    "predictor", "mcts", "switch", "pursuit", "roadmap", "robot", "battery_wh", "reserve_wh",
    "herbicide_l", "spray_l_per_weed", "spray_power_w", "max_duration", "leg_timeout",
}


def config_from_dict(doc: dict, base_dir: Path | None = None) -> ScenarioConfig:
    """Validate a scenario document and build the typed configuration."""
    if not isinstance(doc, dict):
        raise ConfigInvalid("scenario must be a JSON object")
    unknown = sorted(set(doc) - TOP_LEVEL_KEYS)
    if unknown:
        raise ConfigInvalid(f"unknown top-level keys {unknown}")
    for key in ("terrain", "home", "waypoint_sets"):
        if key not in doc:
            raise ConfigInvalid(f"missing required key {key!r}")
    terrain = terrain_from_dict(doc["terrain"], base_dir)
    energy = _build(EnergyParams, doc.get("energy"), "energy")
    overrides = None
    if doc.get("cost_overrides"):
        p = Path(doc["cost_overrides"])
        if base_dir is not None and not p.is_absolute():
            p = base_dir / p
        overrides = CostOverrides.load(p)
    sets = doc["waypoint_sets"]
    if not isinstance(sets, list):
        raise ConfigInvalid("waypoint_sets: expected a list of point lists")
    waypoint_sets = [[_point(p, f"waypoint_sets[{i}]") for p in s] for i, s in enumerate(sets)]
    pred = doc.get("predictor", "cv")
    pred_params = PredictorParams()
    if isinstance(pred, dict):
        pred = dict(pred)
        name = pred.pop("name", "cv")
        orca_doc = pred.pop("orca", None)
        pred_params = _build(PredictorParams, pred, "predictor")
        if orca_doc is not None:
            pred_params = dataclasses.replace(pred_params, orca=_build(OrcaParams, orca_doc, "predictor.orca"))
        pred = name
    mcts_doc = doc.get("mcts")
    mcts = _build(MctsParams, mcts_doc, "mcts",
                  convert={"actions": lambda a: tuple((float(v), float(w)) for v, w in a)})
    pursuit = _build(PursuitParams, doc.get("pursuit"), "pursuit", rename={"tip_angle_deg": "tip_angle"},
                     convert={"tip_angle_deg": _deg_to_rad})
    sensor = _build(SensorModel, doc.get("sensor"), "sensor", rename={"fov_deg": "fov_angle"},
                    convert={"fov_deg": _deg_to_rad})
    robot = _build(RobotParams, doc.get("robot"), "robot")
    gen = doc.get("agent_generator")
    generator = None
    if gen is not None:
        generator = _build(AgentGenerator, gen, "agent_generator",
                           convert={"center": tuple, "spawn_window": tuple, "speed_range": tuple})
    kwargs = dict(
        name=str(doc.get("name", "scenario")),
        terrain=terrain,
        home=_point(doc["home"], "home"),
        waypoint_sets=waypoint_sets,
        energy=energy,
        overrides=overrides,
        agents=_parse_agents(doc.get("agents", [])),
        agent_generator=generator,
        orca=_build(OrcaParams, doc.get("orca"), "orca"),
        sensor=sensor,
        tracker=_build(TrackerParams, doc.get("tracker"), "tracker"),
        predictor=str(pred),
        predictor_params=pred_params,
        mcts=mcts,
        switch=_build(SwitchParams, doc.get("switch"), "switch"),
        pursuit=pursuit,
        roadmap=_build(RoadmapParams, doc.get("roadmap"), "roadmap"),
        robot=robot,
    )
    for key, conv in (("dt", float), ("seed", int), ("repeat_sets", bool), ("max_tours", int),
                      ("battery_wh", float), ("reserve_wh", float), ("herbicide_l", float),
                      ("spray_l_per_weed", float), ("spray_power_w", float), ("max_duration", float),
                      ("leg_timeout", float)):
        if key in doc:
            try:
                kwargs[key] = conv(doc[key])
            except (TypeError, ValueError):
                raise ConfigInvalid(f"{key}: cannot convert {doc[key]!r}") from None
    if "set_sequence" in doc and doc["set_sequence"] is not None:
        kwargs["set_sequence"] = [int(k) for k in doc["set_sequence"]]
    return ScenarioConfig(**kwargs)


def load_config(path) -> ScenarioConfig:
    path = Path(path)
    return config_from_dict(json.loads(path.read_text()), base_dir=path.parent)


def config_hash(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def generate_crossing_agents(gen: AgentGenerator, seed: int, first_id: int = 0) -> list[AgentState]:
    """Agents crossing a corridor around ``gen.center`` perpendicular to ``gen.axis``."""
    rng = np.random.default_rng([int(seed), 7919, int(gen.seed_offset)])
    c, s = math.cos(gen.axis), math.sin(gen.axis)
    out = []
    for i in range(gen.count):
        along = rng.uniform(-gen.spread, gen.spread)
        side = 1.0 if rng.random() < 0.5 else -1.0
        skew = rng.uniform(-0.3, 0.3) * gen.half_width
        speed = rng.uniform(*gen.speed_range)
        t0 = rng.uniform(*gen.spawn_window)
        a = (along - skew, -side * gen.half_width)
        b = (along + skew, side * gen.half_width)

        def world(p):
            return (gen.center[0] + c * p[0] - s * p[1], gen.center[1] + s * p[0] + c * p[1])

        out.append(
            AgentState(
                id=first_id + i,
                position=world(a),
                pref_speed=speed,
                max_speed=max(1.6, speed),
                goals=(world(b),),
                spawn_time=t0,
                group="crossing",
            )
        )
    return out


# -- runtime state -------------------------------------------------------------------


@dataclass
class RobotState:
    x: float
    y: float
    heading: float
    speed: float
    battery: float
    herbicide: float
    objective: int = 0
    progress: float = 0.0

    @property
    def pose(self) -> tuple[float, float, float]:
        return (self.x, self.y, self.heading)


def energy_update(battery: float, prev_xy, xy, terrain: TerrainMap, params: EnergyParams, mode, dt: float,
                  spray_power: float = 0.0, overrides: CostOverrides | None = None) -> tuple[float, float]:
    """Return ``(battery', drain)`` in Wh for one tick."""
    if dt <= 0:
        return battery, 0.0
    move = 0.0
    if prev_xy[0] != xy[0] or prev_xy[1] != xy[1]:
        move = edge_energy(terrain, params, prev_xy, xy, overrides)
    kind = mode.kind if isinstance(mode, Mode) else ModeKind(mode)
    joules = move + params.idle_power * dt + (spray_power * dt if kind == ModeKind.TASK_DWELL else 0.0)
    drain = joules / 3600.0
    return battery - drain, drain


@dataclass
class TrialResult:
    records: list[StepRecord]
    summary: TrialSummary
    events: list[dict]
    tours: list[dict]
    end_reason: str
    roadmap: Roadmap | None
    drains: list[float]
    final_state: RobotState

    @property
    def warnings(self) -> list[dict]:
        return [e for e in self.events if e.get("kind") in ("waypoint_skipped", "objective_timeout", "no_path")]

    def spray_events(self) -> list[dict]:
        return [e for e in self.events if e["kind"] == "spray"]


def _rng_streams(seed: int):
    ss = np.random.SeedSequence(int(seed))
    sense_ss, crowd_ss, plan_ss = ss.spawn(3)
    return (
        np.random.default_rng(sense_ss),
        np.random.default_rng(crowd_ss),
        int(plan_ss.generate_state(1, dtype=np.uint32)[0]),
    )


def _plan_seed(base: int, tick: int) -> int:
    return (base * 1_000_003 + tick) % (2**63)


def build_roadmap(config: ScenarioConfig, seed: int | None = None) -> Roadmap:
    """One PRM over home plus every waypoint of every set (node 0 is home)."""
    seed = config.seed if seed is None else int(seed)
    if not config.terrain.traversable(np.asarray([config.home]))[0]:
        raise UntraversableWaypoint(-1, config.home)
    all_wps = [config.home] + [p for s in config.waypoint_sets for p in s]
    rm_seed = seed if config.roadmap.seed is None else config.roadmap.seed
    return build_prm(config.terrain, config.energy, all_wps, config.roadmap.n_samples, config.roadmap.k,
                     rm_seed, config.overrides)


def plan_mission(config: ScenarioConfig, roadmap: Roadmap, set_index: int, events: list[dict], t: float):
    """Cost matrix, tour and reference path for one waypoint set.

    Unreachable waypoints are dropped with a warning event; the result is
    ``None`` when nothing in the set can be reached.
    """
    n_set = len(config.waypoint_sets[set_index])
    base = 1 + sum(len(s) for s in config.waypoint_sets[:set_index])
    keep = list(range(n_set))
    node_ids = [0] + [base + i for i in keep]
    costs = goal_cost_matrix(roadmap, node_ids)
    c = costs.costs
    bad = [i for i in range(1, len(node_ids)) if not (math.isfinite(c[0, i]) and math.isfinite(c[i, 0]))]
    for i in bad:
        events.append({"t": t, "kind": "waypoint_skipped", "set": set_index, "waypoint": keep[i - 1],
                       "reason": "unreachable from home"})
    if bad:
        keep = [keep[i - 1] for i in range(1, len(node_ids)) if i not in bad]
        if not keep:
            return None
        node_ids = [0] + [base + i for i in keep]
        costs = goal_cost_matrix(roadmap, node_ids)
    tour = solve_tour(costs, home=0)
    ref = stitch_reference_path(roadmap, costs, tour, config.terrain)
    # tour entries refer to positions in node_ids; map back to set-local waypoint ids
    labels = [-1] + keep
    return costs, tour, ref, [labels[k] for k in tour.order]


def run_trial(
    config: ScenarioConfig,
    seed: int | None = None,
    on_record: Callable[[StepRecord], None] | None = None,
    keep_records: bool = True,
) -> TrialResult:
    seed = config.seed if seed is None else int(seed)
    terrain = config.terrain
    dt = config.dt
    sw, pp = config.switch, config.pursuit
    roadmap = build_roadmap(config, seed)
    sense_rng, crowd_rng, plan_base = _rng_streams(seed)
    predictor_fn = get_predictor(config.predictor)
    pred_params = config.predictor_params

    def predictor(req):
        return predictor_fn(req, pred_params)

    predictor.robot_conditioned = getattr(predictor_fn, "robot_conditioned", True)

    agents = list(config.agents)
    if config.agent_generator is not None:
        first = max((a.id for a in agents), default=-1) + 1
        agents += generate_crossing_agents(config.agent_generator, seed, first)
    agents.sort(key=lambda a: a.id)
    tracker = Tracker(config.sensor, config.tracker)

    confinement = Confinement.from_terrain(terrain)
    blocked = confinement.blocked

    robot = RobotState(config.home[0], config.home[1], 0.0, 0.0, config.battery_wh, config.herbicide_l)
    heading_set = config.robot.heading is not None
    if heading_set:
        robot.heading = float(config.robot.heading)
    mode = Mode(ModeKind.LONG_TERM, 0.0)
    records: list[StepRecord] = []
    drains: list[float] = []
    events: list[dict] = []
    tours: list[dict] = []
    tick = 0
    end_reason = "sets_exhausted"
    replan_every = max(1, int(round(config.mcts.dt_plan / dt)))
    seq = config.sequence
    seq_pos = 0
    n_tours = 0

    def now() -> float:
        return tick * dt

    running = True
    while running:
        if seq_pos >= len(seq):
            if not config.repeat_sets:
                end_reason = "sets_exhausted"
                break
            seq_pos = 0
        if n_tours >= config.max_tours:
            end_reason = "max_tours"
            break
        if robot.battery <= config.reserve_wh:
            end_reason = "reserve_reached"
            events.append({"t": now(), "kind": "reserve_reached", "battery": robot.battery})
            break
        set_index = seq[seq_pos]
        seq_pos += 1
        planned = plan_mission(config, roadmap, set_index, events, now())
        if planned is None:
            continue
        costs, tour, ref, labels = planned
        n_tours += 1
        tours.append({"set": set_index, "order": labels, "cost": tour.total_cost, "length": ref.total_length,
                      "start": now()})
        events.append({"t": now(), "kind": "tour_start", "set": set_index, "order": labels,
                       "cost": tour.total_cost})
        if not heading_set and ref.total_length > 0 and len(ref.points) > 1 and n_tours == 1:
            d = ref.points[1] - ref.points[0]
            robot.heading = math.atan2(d[1], d[0])
        leg = 0
        robot.progress = 0.0
        dwell = 0.0
        leg_start = now()
        held_action = None
        since_plan = replan_every
        total = ref.total_length
        complete = False
        while leg < ref.n_legs:
            s_obj = float(ref.arc[ref.stops[leg + 1]])
            obj_pt = ref.points[ref.stops[leg + 1]]
            home_leg = leg == ref.n_legs - 1
            xy = (robot.x, robot.y)
            if home_leg and math.hypot(xy[0] - obj_pt[0], xy[1] - obj_pt[1]) <= sw.r_waypoint:
                complete = True
                break
            if now() - leg_start > config.leg_timeout:
                events.append({"t": now(), "kind": "objective_timeout", "set": set_index, "leg": leg,
                               "waypoint": labels[leg + 1]})
                if home_leg:
                    break
                leg += 1
                robot.progress = s_obj
                leg_start = now()
                dwell = 0.0
                continue
            if now() >= config.max_duration:
                end_reason = "timeout"
                running = False
                break
            t = now()
            pose = robot.pose
            live = [a for a in agents if a.spawn_time <= t]
            closest = min((math.hypot(a.position[0] - xy[0], a.position[1] - xy[1]) for a in live),
                          default=math.inf)
            detections = sense(pose, agents, config.sensor, sense_rng, now=t)
            tracker.update(detections, pose, dt, t)
            confirmed = tracker.confirmed()
            closest_track = min((math.hypot(tr.position[0] - xy[0], tr.position[1] - xy[1]) for tr in confirmed),
                                default=math.inf)
            prev_kind = mode.kind
            mode = select_mode(mode, xy, confirmed, ref, robot.progress, sw, t,
                               objective=None if home_leg else obj_pt, dwell_elapsed=dwell)
            if mode.kind != prev_kind:
                events.append({"t": t, "kind": "mode", "from": prev_kind.value, "to": mode.kind.value})
            blind = any(in_blind_spot(pose, tr.position, config.sensor) for tr in confirmed)
            limit = min(s_obj, total)
            prog = min(robot.progress, total - 1e-9)
            if mode.kind == ModeKind.DYNAMIC:
                allow_tip = not (pp.blind_spot_guard and blind)
                stale = held_action is not None and not allow_tip and held_action[0] == 0.0 and held_action[1] != 0.0
                if held_action is None or since_plan >= replan_every or prev_kind != ModeKind.DYNAMIC or stale:
                    held_action, _ = plan((robot.x, robot.y, robot.heading, robot.speed), confirmed, ref,
                                          predictor, config.mcts, _plan_seed(plan_base, tick), prog, limit, pp,
                                          allow_tip, confinement, sw.r_waypoint)
                    since_plan = 0
                cmd = held_action
                since_plan += 1
            else:
                held_action = None
                if mode.kind == ModeKind.LONG_TERM:
                    cmd = track_path(pose, ref, prog, pp, limit, blind)
                else:
                    cmd = (0.0, 0.0)
            if failsafe_check(xy, confirmed, detections, sw):
                cmd = (0.0, 0.0)
            nx, ny, nh, nv = simulate_step((robot.x, robot.y, robot.heading, robot.speed), cmd, dt,
                                           pp.v_max, pp.omega_max)
            if blocked(nx, ny):
                nx, ny, nv = robot.x, robot.y, 0.0
            vx, vy = (nx - robot.x) / dt, (ny - robot.y) / dt
            robot_disc = Disc((nx, ny), (vx, vy), config.robot.radius, False, -1)
            agents = step_crowd(agents, robot_disc, config.orca, dt, crowd_rng, now=t)
            spraying = mode.kind == ModeKind.TASK_DWELL
            robot.battery, drain = energy_update(robot.battery, xy, (nx, ny), terrain, config.energy, mode, dt,
                                                 config.spray_power_w, config.overrides)
            drains.append(drain)
            # telemetry for this tick, measured against the leg being driven
            lo, hi = ref.leg_range(leg)
            s_here, dev, seg = ref.project(xy, lo, hi)
            speed = math.hypot(vx, vy)
            if len(ref.points) > 1:
                seg = min(seg, len(ref.points) - 2)
                d = ref.points[seg + 1] - ref.points[seg]
                v2g = (vx * d[0] + vy * d[1]) / math.hypot(d[0], d[1])
                v2g = float(max(-speed, min(speed, v2g)))
            else:
                v2g = 0.0
            rec = StepRecord(t, robot.x, robot.y, robot.heading, speed, v2g, mode.kind.value, closest, dev,
                             robot.battery, leg, closest_track)
            if keep_records:
                records.append(rec)
            if on_record is not None:
                on_record(rec)
            robot.x, robot.y, robot.heading, robot.speed = nx, ny, nh, nv
            tick += 1
            # progress along the current leg only ever moves forward
            win_hi = min(robot.progress + sw.lookahead_window, s_obj)
            s_new = ref.project((nx, ny), min(robot.progress, win_hi), win_hi)[0]
            robot.progress = min(max(robot.progress, s_new), s_obj)
            if spraying:
                dwell += dt
                if dwell >= sw.t_spray - 1e-9:
                    used = min(config.spray_l_per_weed, robot.herbicide)
                    robot.herbicide -= used
                    events.append({"t": now(), "kind": "spray", "set": set_index, "waypoint": labels[leg + 1],
                                   "point": [float(obj_pt[0]), float(obj_pt[1])], "litres": used})
                    if used < config.spray_l_per_weed:
                        events.append({"t": now(), "kind": "herbicide_empty"})
                    leg += 1
                    dwell = 0.0
                    robot.progress = s_obj
                    leg_start = now()
            if robot.battery <= 0.0:
                end_reason = "exhausted"
                events.append({"t": now(), "kind": "exhausted", "set": set_index, "leg": leg})
                running = False
                break
        if not running:
            break
        tours[-1]["end"] = now()
        tours[-1]["complete"] = complete
        if complete:
            events.append({"t": now(), "kind": "tour_complete", "set": set_index, "battery": robot.battery})
    summary = summarize(records, SummaryParams(dt, sw.d_failsafe, sw.t_clear, config.battery_wh))
    return TrialResult(records, summary, events, tours, end_reason, roadmap, drains, robot)
