"""Command-line entry point: plan, simulate, summarize and sweep."""

from __future__ import annotations

import argparse
import json
import math
import os
import re
import sys
import tempfile
from concurrent.futures import ProcessPoolExecutor
from importlib import resources
from pathlib import Path

import numpy as np

from . import __version__
from .errors import ConfigInvalid, Disconnected, FieldNavError, NoPath, UntraversableWaypoint
from .mission import solve_tour, stitch_reference_path
from .roadmap import goal_cost_matrix
from .sim import build_roadmap, config_hash, load_config, run_trial
from .telemetry import SummaryParams, read_csv, records_to_csv, summarize, write_plot_data

EXIT_OK, EXIT_CONFIG, EXIT_NOPATH, EXIT_IO = 0, 2, 3, 4


class CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


def bundled_scenarios() -> list[str]:
    root = resources.files("fieldnav") / "scenarios"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".json"))


def resolve_scenario(name: str) -> Path:
    """A path on disk, or the name of a bundled scenario (with or without ``.json``)."""
    p = Path(name)
    if p.exists():
        return p
    stem = p.name[:-5] if p.name.endswith(".json") else p.name
    if p.parent == Path(".") and stem in bundled_scenarios():
        return Path(str(resources.files("fieldnav") / "scenarios" / f"{stem}.json"))
    raise CliError(EXIT_IO, f"scenario not found: {name}")


def _load(path: Path):
    try:
        return load_config(path)
    except json.JSONDecodeError as exc:
        raise CliError(EXIT_CONFIG, f"{path}:{exc.lineno}:{exc.colno}: invalid JSON: {exc.msg}") from None
    except (ConfigInvalid, UntraversableWaypoint, ValueError, TypeError, KeyError) as exc:
        raise CliError(EXIT_CONFIG, f"{path}: invalid scenario: {exc}") from None
    except OSError as exc:
        raise CliError(EXIT_IO, f"{path}: {exc}") from None


def _atomic_write(path: Path, text: str) -> None:
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _dump(obj) -> str:
    return json.dumps(_clean(obj), indent=2, sort_keys=True) + "\n"


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, np.generic):
        obj = obj.item()
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    return obj


def _prepare_out(out: Path) -> Path:
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write_probe"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot write to {out}: {exc}") from None
    return out


def _manifest(scenario: Path, seeds, out: Path, artifacts: list[Path]) -> dict:
    return {
        "scenario": str(scenario),
        "config_hash": config_hash(scenario),
        "seeds": list(seeds),
        "out_dir": str(out),
        "artifacts": sorted(str(p.relative_to(out)) for p in artifacts),
        "version": __version__,
    }


# -- plan --------------------------------------------------------------------------


def plan_files(scenario: Path, out: Path, seed: int | None = None, quiet: bool = False) -> list[Path]:
    cfg = _load(scenario)
    _prepare_out(out)
    try:
        roadmap = build_roadmap(cfg, seed)
        tours, refs = [], []
        base = 1
        for k, wps in enumerate(cfg.waypoint_sets):
            ids = [0] + list(range(base, base + len(wps)))
            base += len(wps)
            costs = goal_cost_matrix(roadmap, ids)
            bad = np.argwhere(~np.isfinite(costs.costs))
            if len(bad):
                i, j = (int(v) for v in bad[0])
                raise NoPath(ids[i], ids[j])
            tour = solve_tour(costs, home=0)
            ref = stitch_reference_path(roadmap, costs, tour, cfg.terrain)
            labels = [-1] + list(range(len(wps)))
            order = [labels[i] for i in tour.order]
            tours.append({"set": k, "order": order, "cost": tour.total_cost, "length": ref.total_length,
                          "cost_matrix": costs.costs})
            refs.append({"set": k, "points": ref.points, "arc": ref.arc, "stops": ref.stops})
            if not quiet:
                print(f"set {k}: order {' -> '.join('home' if i < 0 else str(i) for i in order)}"
                      f"  energy {tour.total_cost:.1f} J  length {ref.total_length:.1f} m")
    except (NoPath, Disconnected) as exc:
        raise CliError(EXIT_NOPATH, str(exc)) from None
    except UntraversableWaypoint as exc:
        raise CliError(EXIT_CONFIG, str(exc)) from None
    written = []
    try:
        for name, doc in (("roadmap.json", roadmap.to_dict()), ("tour.json", tours), ("refpath.json", refs)):
            _atomic_write(out / name, _dump(doc))
            written.append(out / name)
        _atomic_write(out / "manifest.json", _dump(_manifest(scenario, [cfg.seed if seed is None else seed],
                                                             out, written)))
    except OSError as exc:
        raise CliError(EXIT_IO, str(exc)) from None
    return written


# -- simulate ----------------------------------------------------------------------


def simulate_files(scenario: Path, out: Path, seed: int | None = None, quiet: bool = False,
                   manifest: bool = True) -> dict:
    cfg = _load(scenario)
    seed = cfg.seed if seed is None else int(seed)
    _prepare_out(out)
    try:
        result = run_trial(cfg, seed=seed)
    except (NoPath, Disconnected) as exc:
        raise CliError(EXIT_NOPATH, str(exc)) from None
    except UntraversableWaypoint as exc:
        raise CliError(EXIT_CONFIG, str(exc)) from None
    written = []
    try:
        docs = (
            ("telemetry.csv", records_to_csv(result.records)),
            ("summary.json", _dump(result.summary.to_dict())),
            ("events.json", _dump({"end_reason": result.end_reason, "events": result.events})),
            ("tour.json", _dump(result.tours)),
            ("roadmap.json", _dump(result.roadmap.to_dict())),
        )
        for name, text in docs:
            _atomic_write(out / name, text)
            written.append(out / name)
        written += write_plot_data(result.records, out / "plots")
        if manifest:
            _atomic_write(out / "manifest.json", _dump(_manifest(scenario, [seed], out, written)))
    except OSError as exc:
        raise CliError(EXIT_IO, str(exc)) from None
    s = result.summary
    if not quiet:
        fr = ", ".join(f"{k} {100 * v:.1f}%" for k, v in sorted(s.mode_time_fractions.items()))
        print(f"seed {seed}: {result.end_reason} after {s.duration:.1f} s, {len(result.tours)} tours, "
              f"{len(result.spray_events())} sprays, {s.energy_used_wh:.1f} Wh")
        print(f"  modes: {fr}")
        print(f"  min closest agent {s.min_closest_agent:.2f} m, near collisions {s.near_collision_count}, "
              f"interactions {s.interaction_count}")
        for w in result.warnings:
            print(f"  warning: {w}", file=sys.stderr)
    return result.summary.to_dict()


# -- summarize ---------------------------------------------------------------------


def summarize_file(telemetry: Path, out: Path, scenario: Path | None = None, quiet: bool = False) -> dict:
    params = SummaryParams()
    if scenario is not None:
        cfg = _load(scenario)
        params = SummaryParams(cfg.dt, cfg.switch.d_failsafe, cfg.switch.t_clear, cfg.battery_wh)
    try:
        records = read_csv(telemetry)
    except OSError as exc:
        raise CliError(EXIT_IO, f"{telemetry}: {exc}") from None
    except (ValueError, KeyError, TypeError) as exc:
        raise CliError(EXIT_CONFIG, f"{telemetry}: malformed telemetry: {exc}") from None
    summary = summarize(records, params)
    _prepare_out(out)
    try:
        _atomic_write(out / "summary.json", _dump(summary.to_dict()))
        write_plot_data(records, out / "plots")
    except OSError as exc:
        raise CliError(EXIT_IO, str(exc)) from None
    if not quiet:
        print(json.dumps(summary.to_dict(), indent=2, sort_keys=True))
    return summary.to_dict()


# -- sweep -------------------------------------------------------------------------


def parse_seeds(text: str) -> list[int]:
    """``1,2,5`` or ``1-8`` or a mix such as ``1-3,7``."""
    seeds: list[int] = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        m = re.fullmatch(r"(\d+)-(\d+)", part)
        if m:
            lo, hi = int(m.group(1)), int(m.group(2))
            if hi < lo:
                raise argparse.ArgumentTypeError(f"empty seed range {part!r}")
            seeds.extend(range(lo, hi + 1))
        elif part.isdigit():
            seeds.append(int(part))
        else:
            raise argparse.ArgumentTypeError(f"bad seed {part!r}")
    if not seeds:
        raise argparse.ArgumentTypeError("no seeds given")
    return seeds


def flatten(doc: dict, prefix: str = "") -> dict[str, float]:
    flat = {}
    for k, v in doc.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            flat.update(flatten(v, key + "."))
        elif isinstance(v, (int, float)) and not isinstance(v, bool):
            flat[key] = float(v)
        elif v is None:
            flat[key] = math.nan
    return flat


def aggregate(summaries: list[dict]) -> dict:
    """Mean and population std of every numeric summary field across trials.

    Fields missing or non-finite in some trials are averaged over the rest;
    ``n`` records how many trials contributed.
    """
    flats = [flatten(s) for s in summaries]
    keys = sorted(set().union(*flats)) if flats else []
    out = {}
    for k in keys:
        vals = np.array([f[k] for f in flats if k in f and math.isfinite(f[k])], dtype=float)
        if len(vals):
            out[k] = {"mean": float(vals.mean()), "std": float(vals.std()), "n": int(len(vals))}
        else:
            out[k] = {"mean": None, "std": None, "n": 0}
    return out


def _sweep_one(job):
    scenario, out, seed = job
    return seed, simulate_files(Path(scenario), Path(out), seed, quiet=True, manifest=False)


def sweep_files(scenario: Path, seeds: list[int], out: Path, workers: int = 1, quiet: bool = False) -> dict:
    _load(scenario)
    _prepare_out(out)
    jobs = [(str(scenario), str(out / f"seed_{s}"), s) for s in seeds]
    if workers <= 1:
        results = [_sweep_one(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_sweep_one, jobs))
    results.sort(key=lambda r: seeds.index(r[0]))
    agg = {"seeds": seeds, "fields": aggregate([r[1] for r in results])}
    written = [out / f"seed_{s}" / name for s in seeds
               for name in ("telemetry.csv", "summary.json", "events.json", "tour.json", "roadmap.json")]
    try:
        _atomic_write(out / "aggregate.json", _dump(agg))
        written.append(out / "aggregate.json")
        _atomic_write(out / "manifest.json", _dump(_manifest(scenario, seeds, out, written)))
    except OSError as exc:
        raise CliError(EXIT_IO, str(exc)) from None
    if not quiet:
        f = agg["fields"]
        for key in ("mode_time_fractions.Dynamic", "min_closest_agent", "near_collision_count", "energy_used_wh"):
            if key in f and f[key]["mean"] is not None:
                print(f"{key}: {f[key]['mean']:.4g} +/- {f[key]['std']:.3g} (n={f[key]['n']})")
    return agg


# -- argument parsing --------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="fieldnav", description="Energy-aware weeding-robot navigation simulator.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, seed=True):
        p.add_argument("--scenario", required=True, help="scenario JSON path or bundled scenario name")
        p.add_argument("--out", required=True, type=Path, help="output directory")
        p.add_argument("--quiet", action="store_true")
        if seed:
            p.add_argument("--seed", type=int, default=None, help="trial seed (default: the scenario's)")

    common(sub.add_parser("plan", help="build roadmap and tours only"))
    common(sub.add_parser("simulate", help="run one full trial"))
    p = sub.add_parser("summarize", help="recompute a summary from a telemetry CSV")
    p.add_argument("--telemetry", required=True, type=Path)
    p.add_argument("--scenario", default=None, help="scenario for dt and thresholds (optional)")
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--quiet", action="store_true")
    p = sub.add_parser("sweep", help="run several seeds and aggregate")
    common(p, seed=False)
    p.add_argument("--seeds", required=True, type=parse_seeds, help="e.g. 1,2,3 or 1-8")
    p.add_argument("--workers", type=int, default=1)
    sub.add_parser("list", help="list bundled scenarios")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "list":
            print("\n".join(bundled_scenarios()))
        elif args.command == "plan":
            plan_files(resolve_scenario(args.scenario), args.out, args.seed, args.quiet)
        elif args.command == "simulate":
            simulate_files(resolve_scenario(args.scenario), args.out, args.seed, args.quiet)
        elif args.command == "summarize":
            scen = resolve_scenario(args.scenario) if args.scenario else None
            summarize_file(args.telemetry, args.out, scen, args.quiet)
        elif args.command == "sweep":
            sweep_files(resolve_scenario(args.scenario), args.seeds, args.out, args.workers, args.quiet)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except FieldNavError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
