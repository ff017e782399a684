import json

import numpy as np
import pytest

from conftest import scenario_path
from fieldnav.cli import aggregate, flatten, main, parse_seeds
from fieldnav.sim import config_hash
from oracles import brute_force_tour

FLAT_DOC = json.loads(scenario_path("flat_empty").read_text())

# a weed sealed inside four no-go walls: traversable itself, unreachable from home
SEALED = [
    [[28, 8], [36, 8], [36, 9], [28, 9]],
    [[28, 1], [36, 1], [36, 2], [28, 2]],
    [[28, 1], [29, 1], [29, 9], [28, 9]],
    [[35, 1], [36, 1], [36, 9], [35, 9]],
]


def write_scenario(tmp_path, **changes):
    doc = {**FLAT_DOC, **changes}
    p = tmp_path / "scen.json"
    p.write_text(json.dumps(doc))
    return p


def test_plan_two_waypoints_matches_brute_force(tmp_path, capsys):
    scen = write_scenario(tmp_path, waypoint_sets=[[[30, 20], [20, 34]]])
    out = tmp_path / "plan"
    assert main(["plan", "--scenario", str(scen), "--out", str(out)]) == 0
    assert "home" in capsys.readouterr().out
    tour = json.loads((out / "tour.json").read_text())[0]
    assert len(tour["order"]) == 4 and tour["order"][0] == tour["order"][-1] == -1
    c = np.array(tour["cost_matrix"])
    assert tour["cost"] == pytest.approx(brute_force_tour(c)[0], rel=1e-12)
    for name in ("roadmap.json", "refpath.json", "manifest.json"):
        assert (out / name).exists()


def test_plan_deterministic(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["plan", "--scenario", "flat_empty", "--out", str(a), "--quiet"]) == 0
    assert main(["plan", "--scenario", "flat_empty", "--out", str(b), "--quiet"]) == 0
    for name in ("roadmap.json", "tour.json", "refpath.json"):
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_malformed_json_exit_2_with_position(tmp_path, capsys):
    p = tmp_path / "bad.json"
    p.write_text('{\n  "name": "x",\n  "dt": 0.1,,\n}')
    assert main(["plan", "--scenario", str(p), "--out", str(tmp_path / "o")]) == 2
    err = capsys.readouterr().err
    assert ":3:" in err and "invalid JSON" in err


def test_invalid_config_exit_2(tmp_path):
    scen = write_scenario(tmp_path, dt=1.0)
    assert main(["simulate", "--scenario", str(scen), "--out", str(tmp_path / "o"), "--quiet"]) == 2


def test_unreachable_waypoint_exit_3(tmp_path):
    terrain = {"generator": {**FLAT_DOC["terrain"]["generator"], "no_go": SEALED}}
    scen = write_scenario(tmp_path, terrain=terrain, waypoint_sets=[[[30, 20], [32, 5]]])
    assert main(["plan", "--scenario", str(scen), "--out", str(tmp_path / "o"), "--quiet"]) == 3


def test_unwritable_out_exit_4(tmp_path):
    blocker = tmp_path / "afile"
    blocker.write_text("not a directory")
    assert main(["simulate", "--scenario", "flat_empty", "--out", str(blocker / "x"), "--quiet"]) == 4
    assert main(["simulate", "--scenario", str(tmp_path / "missing.json"), "--out", str(tmp_path / "o")]) == 4


def test_simulate_writes_artifacts_and_manifest(tmp_path):
    out = tmp_path / "sim"
    src = scenario_path("flat_empty")
    before = src.read_bytes()
    assert main(["simulate", "--scenario", str(src), "--out", str(out), "--quiet"]) == 0
    man = json.loads((out / "manifest.json").read_text())
    assert man["seeds"] == [FLAT_DOC["seed"]]
    assert man["config_hash"] == config_hash(src)
    for rel in man["artifacts"]:
        assert (out / rel).exists()
    assert {"telemetry.csv", "summary.json", "events.json", "tour.json", "roadmap.json"} <= set(man["artifacts"])
    assert src.read_bytes() == before
    assert not list(out.glob("*.tmp"))


def test_summarize_matches_simulate(tmp_path):
    out = tmp_path / "sim"
    assert main(["simulate", "--scenario", "flat_empty", "--out", str(out), "--quiet"]) == 0
    assert main(["summarize", "--telemetry", str(out / "telemetry.csv"), "--scenario", "flat_empty",
                 "--out", str(tmp_path / "re"), "--quiet"]) == 0
    a = json.loads((out / "summary.json").read_text())
    b = json.loads((tmp_path / "re" / "summary.json").read_text())
    assert a == b


def test_sweep_three_seeds(tmp_path):
    out = tmp_path / "sw"
    assert main(["sweep", "--scenario", "flat_empty", "--seeds", "1-3", "--out", str(out), "--quiet"]) == 0
    assert sorted(p.name for p in out.iterdir() if p.is_dir()) == ["seed_1", "seed_2", "seed_3"]
    agg = json.loads((out / "aggregate.json").read_text())
    sums = [flatten(json.loads((out / f"seed_{s}" / "summary.json").read_text())) for s in (1, 2, 3)]
    for key in ("duration", "energy_used_wh", "distance"):
        vals = [s[key] for s in sums]
        assert agg["fields"][key]["mean"] == pytest.approx(sum(vals) / 3, rel=1e-12)
        assert agg["fields"][key]["n"] == 3


def test_identical_seeds_zero_spread():
    s = {"a": 1.5, "b": {"c": 2.0, "d": None}, "e": "text", "f": True}
    agg = aggregate([s, s, s])
    assert agg["a"] == {"mean": 1.5, "std": 0.0, "n": 3}
    assert agg["b.c"]["std"] == 0.0
    assert agg["b.d"] == {"mean": None, "std": None, "n": 0}
    assert "e" not in agg and "f" not in agg


def test_aggregate_hand_mean():
    agg = aggregate([{"x": 1.0}, {"x": 2.0}, {"x": 6.0}])
    assert agg["x"]["mean"] == 3.0
    assert agg["x"]["std"] == pytest.approx(np.sqrt(((1 - 3) ** 2 + (2 - 3) ** 2 + (6 - 3) ** 2) / 3))


def test_parse_seeds():
    assert parse_seeds("1,2,5") == [1, 2, 5]
    assert parse_seeds("1-3,7") == [1, 2, 3, 7]
    with pytest.raises(Exception):
        parse_seeds("3-1")
    with pytest.raises(Exception):
        parse_seeds("a")


def test_list_bundled(capsys):
    assert main(["list"]) == 0
    names = capsys.readouterr().out.split()
    assert {"flat_empty", "ramp_energy", "crossing_agents", "blind_spot_incident", "paper_analogue"} <= set(names)
