"""Per-tick telemetry rows and the trial-level evaluation metrics."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .mission import ReferencePath

MODES = ("LongTerm", "Dynamic", "Failsafe", "TaskDwell")


@dataclass(slots=True)
class StepRecord:
    """One tick: state at tick start plus the motion applied during the tick."""

    t: float
    x: float
    y: float
    heading: float
    v_overall: float
    v2goal: float
    mode: str
    closest_agent: float
    deviation: float
    battery: float
    tour_leg: int
    closest_track: float = math.inf

    def __post_init__(self):
        if self.v_overall < 0:
            raise ValueError("v_overall must be nonnegative")
        if abs(self.v2goal) > self.v_overall + 1e-9:
            raise ValueError(f"|v2goal|={abs(self.v2goal)} exceeds v_overall={self.v_overall}")


CSV_COLUMNS = [f.name for f in fields(StepRecord)]


def _fmt(v) -> str:
    if isinstance(v, str):
        return v
    if isinstance(v, (int, np.integer)) and not isinstance(v, bool):
        return str(int(v))
    v = float(v)
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return repr(v)  # shortest text that round-trips exactly


def record_row(rec: StepRecord) -> list[str]:
    return [_fmt(getattr(rec, c)) for c in CSV_COLUMNS]


class CsvTelemetryWriter:
    """Incremental CSV writer; rows go out as they are produced."""

    def __init__(self, path):
        self.path = Path(path)
        self._fh = open(self.path, "w", newline="", encoding="utf-8")
        self._w = csv.writer(self._fh, lineterminator="\n")
        self._w.writerow(CSV_COLUMNS)

    def write(self, rec: StepRecord) -> None:
        self._w.writerow(record_row(rec))

    def close(self) -> None:
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def records_to_csv(records) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in records:
        w.writerow(record_row(r))
    return buf.getvalue()


def read_csv(path) -> list[StepRecord]:
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            kw = {}
            for f in fields(StepRecord):
                v = row[f.name]
                if f.name == "mode":
                    kw[f.name] = v
                elif f.name == "tour_leg":
                    kw[f.name] = int(v)
                else:
                    kw[f.name] = float(v)
            out.append(StepRecord(**kw))
    return out


# -- per-tick geometry ---------------------------------------------------------------


def _leg_window(ref_path: ReferencePath, leg: int | None) -> tuple[float, float]:
    if leg is None or ref_path.n_legs <= 0:
        return 0.0, ref_path.total_length
    leg = min(max(leg, 0), ref_path.n_legs - 1)
    return ref_path.leg_range(leg)


def v2goal(velocity, ref_path: ReferencePath, pose, leg: int | None = None) -> float:
    """Signed speed along the path tangent at the point of the leg nearest ``pose``."""
    lo, hi = _leg_window(ref_path, leg)
    if len(ref_path.points) < 2:
        return 0.0
    _, _, seg = ref_path.project(pose[:2], lo, hi)
    seg = min(seg, len(ref_path.points) - 2)
    d = ref_path.points[seg + 1] - ref_path.points[seg]
    n = math.hypot(d[0], d[1])
    return (float(velocity[0]) * d[0] + float(velocity[1]) * d[1]) / n


def deviation(pose, ref_path: ReferencePath, leg: int | None = None) -> float:
    lo, hi = _leg_window(ref_path, leg)
    return ref_path.project(pose[:2], lo, hi)[1]


def closest_agent_histogram(records, bin: float = 0.5, max_d: float = 8.0) -> dict[str, dict[float, float]]:
    """Per-mode percentage of ticks with the nearest agent in each distance bin."""
    counts: dict[str, dict[int, int]] = {}
    for r in records:
        d = r.closest_agent
        if not d <= max_d:
            continue
        b = min(int(d // bin), int(math.ceil(max_d / bin)) - 1)
        counts.setdefault(r.mode, {}).setdefault(b, 0)
        counts[r.mode][b] += 1
    out = {}
    for mode in sorted(counts):
        total = sum(counts[mode].values())
        out[mode] = {round(b * bin, 9): 100.0 * c / total for b, c in sorted(counts[mode].items())}
    return out


# -- summary ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SummaryParams:
    dt: float = 0.1
    d_failsafe: float = 1.5
    t_clear: float = 2.0
    initial_battery: float | None = None


@dataclass
class ModeTotals:
    """Count/sum statistics per mode; adding two equals summarising the concatenation."""

    ticks: dict[str, int] = field(default_factory=dict)
    v_sum: dict[str, float] = field(default_factory=dict)
    v2g_sum: dict[str, float] = field(default_factory=dict)
    away_ticks: dict[str, int] = field(default_factory=dict)
    away_motion: dict[str, float] = field(default_factory=dict)
    dev_sum: dict[str, float] = field(default_factory=dict)

    @classmethod
    def from_records(cls, records) -> "ModeTotals":
        t = cls()
        for r in records:
            m = r.mode
            t.ticks[m] = t.ticks.get(m, 0) + 1
            t.v_sum[m] = t.v_sum.get(m, 0.0) + r.v_overall
            t.v2g_sum[m] = t.v2g_sum.get(m, 0.0) + r.v2goal
            away = r.v2goal <= 0.0
            t.away_ticks[m] = t.away_ticks.get(m, 0) + int(away)
            t.away_motion[m] = t.away_motion.get(m, 0.0) + (r.v_overall if away else 0.0)
            t.dev_sum[m] = t.dev_sum.get(m, 0.0) + r.deviation
        return t

    def __add__(self, other: "ModeTotals") -> "ModeTotals":
        def merge(a, b):
            out = dict(a)
            for k, v in b.items():
                out[k] = out.get(k, 0) + v
            return out

        return ModeTotals(
            merge(self.ticks, other.ticks),
            merge(self.v_sum, other.v_sum),
            merge(self.v2g_sum, other.v2g_sum),
            merge(self.away_ticks, other.away_ticks),
            merge(self.away_motion, other.away_motion),
            merge(self.dev_sum, other.dev_sum),
        )


@dataclass
class TrialSummary:
    duration: float
    ticks: int
    distance: float
    mode_time_fractions: dict[str, float]
    avg_v_overall: dict[str, float]
    avg_v2goal: dict[str, float]
    v2goal_ratio: dict[str, float]
    away_fraction: dict[str, float]
    away_motion_fraction: dict[str, float]
    near_collision_count: int
    interaction_count: int
    min_closest_agent: float
    min_closest_by_mode: dict[str, float]
    avg_closest_dynamic_tick: float
    avg_closest_per_interaction: float
    deviation_stats: dict[str, dict[str, float]]
    energy_used_wh: float

    @property
    def dynamic_fraction(self) -> float:
        return self.mode_time_fractions.get("Dynamic", 0.0)

    def to_dict(self) -> dict:
        return _json_safe(asdict(self))


def _json_safe(obj):
    if isinstance(obj, dict):
        return {str(k): _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    if isinstance(obj, np.floating):
        return _json_safe(float(obj))
    return obj


def rising_edges(values, threshold: float) -> int:
    count, below = 0, False
    for v in values:
        now = v < threshold
        if now and not below:
            count += 1
        below = now
    return count


def interaction_episodes(records, dt: float, t_clear: float) -> list[tuple[int, int]]:
    """Index spans [start, end] of Dynamic/Failsafe activity, merging gaps shorter than ``t_clear``."""
    spans: list[list[int]] = []
    for i, r in enumerate(records):
        if r.mode not in ("Dynamic", "Failsafe"):
            continue
        if spans and spans[-1][1] == i - 1:
            spans[-1][1] = i
        elif spans and (i - spans[-1][1] - 1) * dt < t_clear - 1e-9:
            spans[-1][1] = i
        else:
            spans.append([i, i])
    return [(a, b) for a, b in spans]


def summarize(records, params: SummaryParams = SummaryParams()) -> TrialSummary:
    records = list(records)
    n = len(records)
    dt = params.dt
    tot = ModeTotals.from_records(records)
    fractions = {m: c / n for m, c in sorted(tot.ticks.items())} if n else {}
    avg_v = {m: tot.v_sum[m] / c for m, c in tot.ticks.items()}
    avg_g = {m: tot.v2g_sum[m] / c for m, c in tot.ticks.items()}
    ratio = {m: (tot.v2g_sum[m] / tot.v_sum[m] if tot.v_sum[m] > 0 else math.nan) for m in tot.ticks}
    away = {m: tot.away_ticks[m] / c for m, c in tot.ticks.items()}
    away_motion = {m: (tot.away_motion[m] / tot.v_sum[m] if tot.v_sum[m] > 0 else 0.0) for m in tot.ticks}

    closest = [r.closest_agent for r in records]
    by_mode_min: dict[str, float] = {}
    dev_by_mode: dict[str, list[float]] = {}
    for r in records:
        by_mode_min[r.mode] = min(by_mode_min.get(r.mode, math.inf), r.closest_agent)
        dev_by_mode.setdefault(r.mode, []).append(r.deviation)
    dev_stats = {}
    for m, vals in sorted(dev_by_mode.items()):
        a = np.asarray(vals)
        dev_stats[m] = {
            "mean": float(a.mean()),
            "median": float(np.median(a)),
            "p95": float(np.percentile(a, 95)),
            "max": float(a.max()),
        }
    dyn_close = [r.closest_agent for r in records if r.mode == "Dynamic" and math.isfinite(r.closest_agent)]
    episodes = interaction_episodes(records, dt, params.t_clear)
    ep_min = [min(records[i].closest_agent for i in range(a, b + 1)) for a, b in episodes]
    ep_min = [d for d in ep_min if math.isfinite(d)]
    if params.initial_battery is not None and n:
        energy = params.initial_battery - records[-1].battery
    elif n:
        energy = records[0].battery - records[-1].battery
    else:
        energy = 0.0
    return TrialSummary(
        duration=n * dt,
        ticks=n,
        distance=sum(r.v_overall for r in records) * dt,
        mode_time_fractions=fractions,
        avg_v_overall=avg_v,
        avg_v2goal=avg_g,
        v2goal_ratio=ratio,
        away_fraction=away,
        away_motion_fraction=away_motion,
        near_collision_count=rising_edges(closest, params.d_failsafe),
        interaction_count=len(episodes),
        min_closest_agent=min(closest) if closest else math.inf,
        min_closest_by_mode=by_mode_min,
        avg_closest_dynamic_tick=float(np.mean(dyn_close)) if dyn_close else math.nan,
        avg_closest_per_interaction=float(np.mean(ep_min)) if ep_min else math.nan,
        deviation_stats=dev_stats,
        energy_used_wh=energy,
    )


def write_plot_data(records, out_dir, bin: float = 0.5, max_d: float = 8.0) -> list[Path]:
    """Two-column text files for the closest-agent, deviation and speed figures."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    hist = closest_agent_histogram(records, bin, max_d)
    for mode, bins in hist.items():
        p = out_dir / f"closest_hist_{mode}.txt"
        p.write_text("".join(f"{b:.3f} {pct:.6f}\n" for b, pct in bins.items()))
        written.append(p)
    by_mode: dict[str, list[StepRecord]] = {}
    for r in records:
        by_mode.setdefault(r.mode, []).append(r)
    for mode, rows in sorted(by_mode.items()):
        p = out_dir / f"deviation_{mode}.txt"
        p.write_text("".join(f"{_fmt(r.t)} {_fmt(r.deviation)}\n" for r in rows))
        written.append(p)
        p = out_dir / f"speeds_{mode}.txt"
        p.write_text("".join(f"{_fmt(r.v_overall)} {_fmt(r.v2goal)}\n" for r in rows))
        written.append(p)
    return written


def dump_summary(summary: TrialSummary, path) -> None:
    Path(path).write_text(json.dumps(summary.to_dict(), indent=2, sort_keys=True))
