"""Command-line entry point: single mission runs, batch seed sweeps, and
run-report / trace emission.

Runs execute in simulated time (a 3-minute mission takes seconds of CPU);
`--realtime` paces ticks against the wall clock for demonstration replays.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
import time
from pathlib import Path

from .fsm import run_machine
from .mission import MissionContext, build_firefight_mission
from .world import (ScenarioParseError, ScenarioValidationError, default_scenario,
                    dump_scenario, load_scenario, scenario_to_dict)


class PacedContext:
    """Wraps MissionContext.step with wall-clock pacing."""

    def __init__(self, ctx, factor):
        self._ctx = ctx
        self._factor = factor

    def __getattr__(self, name):
        return getattr(self._ctx, name)

    def step(self, dt):
        self._ctx.step(dt)
        time.sleep(dt / self._factor)


def _load(scenario_path):
    if scenario_path is None:
        return default_scenario()
    try:
        text = Path(scenario_path).read_text()
    except OSError as e:
        raise IOError(f"cannot read scenario {scenario_path}: {e}") from e
    return load_scenario(text)


def _apply_overrides(sc, args):
    if getattr(args, "seed", None) is not None:
        sc.seed = args.seed
    if getattr(args, "no_fine_align", False):
        sc.fine_alignment_enabled = False
    if getattr(args, "waypoints", None):
        sc.waypoint_source = {"hand": "hand_set", "extracted": "extracted"}[args.waypoints]
    return sc


def execute(scenario):
    """Run one mission; returns (report dict, events, context)."""
    table = build_firefight_mission(scenario)
    ctx = MissionContext(scenario)
    final, events = run_machine(table, ctx,
                                max_time_s=scenario.mission.global_timeout_s)
    report = build_report(scenario, final, events, ctx)
    return report, events, ctx


def build_report(scenario, final, events, ctx):
    """Pure projection of the event log and ledger into the run report."""
    duration = events[-1].t if events else 0.0
    targets = []
    ext_times = {ti: t for (t, ti) in ctx.ledger.extinguish_events}
    for i, t in enumerate(scenario.targets):
        targets.append({
            "index": i,
            "liters_through": round(ctx.ledger.through_for(i), 6),
            "extinguished": t.extinguished,
            "extinguish_time_s": round(ext_times[i], 2) if i in ext_times else None,
        })
    return {
        "outcome": final,
        "duration_s": round(duration, 2),
        "liters_ejected": round(ctx.ledger.liters_ejected, 6),
        "tank_remaining_l": round(ctx.pump.tank_remaining, 6),
        "targets": targets,
        "all_extinguished": bool(scenario.targets) and all(
            t.extinguished for t in scenario.targets),
        "detections": ctx.detections,
        "waypoints_completed": dict(ctx.waypoints_completed),
        "seed": scenario.seed,
        "waypoint_source": scenario.waypoint_source,
        "fine_alignment_enabled": scenario.fine_alignment_enabled,
        "event_count": len(events),
    }


def write_run_outputs(out_dir, report, events, ctx):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    lines = ["t,state,outcome"]
    for e in events:
        lines.append(f"{e.t:.2f},{e.state},{e.outcome}")
    (out / "events.csv").write_text("\n".join(lines) + "\n")
    rows = ["t,true_x,true_y,true_heading,est_x,est_y,est_heading"]
    for s in ctx.trajectory:
        rows.append(
            f"{s.t:.2f},{s.true_pose.x:.6f},{s.true_pose.y:.6f},{s.true_pose.heading:.6f},"
            f"{s.est_pose.x:.6f},{s.est_pose.y:.6f},{s.est_pose.heading:.6f}")
    (out / "trajectory.csv").write_text("\n".join(rows) + "\n")
    return out / "report.json"


def cmd_run(args):
    sc = _apply_overrides(_load(args.scenario), args)
    table = build_firefight_mission(sc)
    ctx = MissionContext(sc)
    if args.dump_frames:
        ctx.dump_dir = Path(args.out) / "frames"
        ctx.dump_dir.mkdir(parents=True, exist_ok=True)
    run_ctx = PacedContext(ctx, args.realtime) if args.realtime else ctx
    final, events = run_machine(table, run_ctx,
                                max_time_s=sc.mission.global_timeout_s)
    report = build_report(sc, final, events, ctx)
    path = write_run_outputs(args.out, report, events, ctx)
    print(f"outcome={report['outcome']} duration={report['duration_s']}s "
          f"through={sum(t['liters_through'] for t in report['targets']):.3f}L "
          f"-> {path}")
    return 0


def run_seed(scenario_text_or_none, seed, overrides):
    """One batch element: independent scenario instance per seed."""
    sc = (load_scenario(scenario_text_or_none) if scenario_text_or_none
          else default_scenario())
    sc.seed = seed
    if overrides.get("no_fine_align"):
        sc.fine_alignment_enabled = False
    if overrides.get("waypoints"):
        sc.waypoint_source = {"hand": "hand_set",
                              "extracted": "extracted"}[overrides["waypoints"]]
    report, events, ctx = execute(sc)
    return report, events, ctx


def _median(values):
    v = sorted(values)
    n = len(v)
    if n == 0:
        return None
    return v[n // 2] if n % 2 else 0.5 * (v[n // 2 - 1] + v[n // 2])


def aggregate_reports(reports):
    """Fold per-seed reports into the batch summary."""
    n = len(reports)
    successes = [r for r in reports if r.get("all_extinguished")]
    durations = [r["duration_s"] for r in successes]
    through = [sum(t["liters_through"] for t in r["targets"]) for r in reports]
    failures = [r["seed"] for r in reports if "error" in r]
    return {
        "runs": n,
        "success_rate": len(successes) / n if n else 0.0,
        "median_duration_s": _median(durations),
        "median_liters_through": _median(through),
        "per_seed_errors": failures,
    }


def cmd_batch(args):
    try:
        a, b = args.seeds.split("..")
        seeds = list(range(int(a), int(b) + 1))
    except ValueError:
        print(f"error: bad seed range {args.seeds!r}, expected a..b", file=sys.stderr)
        return 2
    if not seeds:
        print("error: empty seed range", file=sys.stderr)
        return 2
    text = Path(args.scenario).read_text() if args.scenario else None
    overrides = {"no_fine_align": args.no_fine_align, "waypoints": args.waypoints}
    out = Path(args.out)
    reports = []
    for seed in seeds:
        try:
            report, events, ctx = run_seed(text, seed, overrides)
            write_run_outputs(out / f"seed_{seed:04d}", report, events, ctx)
        except Exception as e:      # keep batch running; record the failure
            report = {"seed": seed, "error": str(e)}
            (out / f"seed_{seed:04d}").mkdir(parents=True, exist_ok=True)
            (out / f"seed_{seed:04d}" / "error.txt").write_text(str(e) + "\n")
        reports.append(report)
    summary = aggregate_reports(reports)
    out.mkdir(parents=True, exist_ok=True)
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    print(json.dumps(summary, indent=2, sort_keys=True))
    return 0


def cmd_print_scenario(args):
    print(dump_scenario(_load(args.scenario)))
    return 0


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="firesim",
        description="Deterministic firefighting-UGV mission simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one mission")
    p_run.add_argument("--scenario", default=None, help="scenario JSON path (default: built-in)")
    p_run.add_argument("--seed", type=int, default=None)
    p_run.add_argument("--out", required=True, help="output directory")
    p_run.add_argument("--no-fine-align", action="store_true")
    p_run.add_argument("--waypoints", choices=("hand", "extracted"), default=None)
    p_run.add_argument("--dump-frames", action="store_true")
    p_run.add_argument("--realtime", type=float, default=0.0,
                       help="pace the simulation at this multiple of real time")
    p_run.set_defaults(func=cmd_run)

    p_batch = sub.add_parser("batch", help="run a seed sweep")
    p_batch.add_argument("--scenario", default=None)
    p_batch.add_argument("--seeds", required=True, help="inclusive range a..b")
    p_batch.add_argument("--out", required=True)
    p_batch.add_argument("--no-fine-align", action="store_true")
    p_batch.add_argument("--waypoints", choices=("hand", "extracted"), default=None)
    p_batch.set_defaults(func=cmd_batch)

    p_show = sub.add_parser("print-scenario", help="dump the resolved scenario JSON")
    p_show.add_argument("--scenario", default=None)
    p_show.set_defaults(func=cmd_print_scenario)

    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (IOError, OSError) as e:
        print(f"io error: {e}", file=sys.stderr)
        return 1
    except (ScenarioParseError, ScenarioValidationError) as e:
        print(f"scenario error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
