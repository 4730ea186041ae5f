"""Command-line entry point.

Subcommands:

* ``run``           — execute a scenario sweep and write the report bundle
* ``replay``        — check an event log for deterministic reproducibility
* ``serve-monitor`` — expose the monitoring HTTP endpoints, optionally
  driving a live paced run or replaying a recorded metrics file

Exit codes: 0 success, 1 configuration error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .errors import AsyncFedError, ScenarioError
from .experiment import ExperimentSpec, run_experiment
from .monitor import MonitorService, build_app, load_metrics_jsonl
from .scenario import load_scenario
from .simulation import LiveRun, load_events_jsonl, replay_check, run_scenario


def _parse_list(raw: str) -> list[str]:
    return [item.strip() for item in raw.split(",") if item.strip()]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="asyncfed")
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="run a scenario sweep")
    run_p.add_argument("--scenario", required=True, type=Path)
    run_p.add_argument("--strategy", default="asyn2f",
                       help="comma-separated subset of asyn2f,fedavg,mstep_kafl")
    run_p.add_argument("--lr", default=None,
                       help="comma-separated subset of fixed,sync_decay,async_decay "
                            "(default: the scenario's regime)")
    run_p.add_argument("--seeds", default=None,
                       help="comma-separated seed list (default: the scenario's seed)")
    run_p.add_argument("--out", required=True, type=Path)
    run_p.add_argument("--target", type=float, default=None,
                       help="accuracy target for time-to-target columns")

    replay_p = sub.add_parser("replay", help="re-run a scenario and compare event logs")
    replay_p.add_argument("--log", required=True, type=Path)
    replay_p.add_argument("--scenario", type=Path, default=None)
    replay_p.add_argument("--seed", type=int, default=None)

    serve_p = sub.add_parser("serve-monitor", help="serve the monitoring endpoints")
    serve_p.add_argument("--port", type=int, default=8000)
    serve_p.add_argument("--host", default="127.0.0.1")
    serve_p.add_argument("--scenario", type=Path, default=None,
                         help="drive a live run while serving")
    serve_p.add_argument("--pace", type=float, default=50.0,
                         help="simulated time units per wall second for live runs")
    serve_p.add_argument("--replay", type=Path, default=None,
                         help="preload a recorded metrics JSON-lines file")
    serve_p.add_argument("--metrics-jsonl", type=Path, default=None,
                         help="persist ingested metrics to this file")
    return parser


def cmd_run(args) -> int:
    scenario = load_scenario(args.scenario)
    strategies = tuple(_parse_list(args.strategy))
    regimes = tuple(_parse_list(args.lr)) if args.lr else (scenario.train.lr_regime,)
    seeds = tuple(int(s) for s in _parse_list(args.seeds)) if args.seeds else (scenario.seed,)
    spec = ExperimentSpec(
        scenario=scenario,
        strategies=strategies,
        lr_regimes=regimes,
        seeds=seeds,
        out_dir=args.out,
        target_accuracy=args.target,
    )
    cells = run_experiment(spec)
    print(f"wrote {args.out}/summary.csv")
    for cell in cells:
        ttt = cell.median_time_to_target
        extra = "" if ttt is None else f"  time-to-target={ttt:g}"
        print(f"  {cell.strategy:<12} {cell.lr_regime:<12} {cell.summary}{extra}")
    return 0


def cmd_replay(args) -> int:
    recorded = load_events_jsonl(args.log.read_text())
    if args.scenario is None:
        print(f"{args.log}: {len(recorded)} events, parses cleanly")
        return 0
    scenario = load_scenario(args.scenario)
    if args.seed is not None:
        scenario.seed = args.seed
    result = run_scenario(scenario)
    if replay_check(recorded, result.events):
        print(f"MATCH: {len(recorded)} events reproduced exactly")
        return 0
    print(
        f"MISMATCH: recorded {len(recorded)} events, reproduced {len(result.events)}",
        file=sys.stderr,
    )
    return 2


def cmd_serve_monitor(args) -> int:
    import uvicorn

    monitor = MonitorService(jsonl_path=args.metrics_jsonl)
    if args.replay is not None:
        for event in load_metrics_jsonl(args.replay):
            monitor.ingest(event)
    live = None
    if args.scenario is not None:
        scenario = load_scenario(args.scenario)
        live = LiveRun(scenario, monitor, pace=args.pace).start()
        print(f"live run started (pace {args.pace} sim units/s)")
    app = build_app(monitor)
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    if live is not None:
        live.join(timeout=1.0)
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "run":
            return cmd_run(args)
        if args.command == "replay":
            return cmd_replay(args)
        if args.command == "serve-monitor":
            return cmd_serve_monitor(args)
        parser.error(f"unknown command {args.command!r}")
    except ScenarioError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 1
    except AsyncFedError as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
