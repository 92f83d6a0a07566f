"""Command-line entry point.

Exit codes: 0 success, 1 validation failure, 2 runtime error.
"""

from __future__ import annotations

import argparse
import json
import logging
import signal
import socket
import sys
import threading
from dataclasses import fields
from pathlib import Path

from .engine import EngineConfig, Objective, fitness, forecast, log_to_ndjson, run
from .scenario import (
    FIXTURES,
    ScenarioError,
    event_from_dict,
    fixture_text,
    load_fixture,
    load_scenario,
    parse_scenario,
)
from .scheduler import make_scheduler
from .twin import TwinState, state_from_dict

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2


def _engine_config(path) -> EngineConfig:
    if path is None:
        return EngineConfig()
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    known = {f.name for f in fields(EngineConfig)}
    unknown = set(doc) - known
    if unknown:
        raise ScenarioError("unknown-field", f"unknown engine config fields {sorted(unknown)}")
    return EngineConfig(**doc)


def cmd_validate(args) -> int:
    try:
        text = Path(args.scenario).read_text(encoding="utf-8")
        parse_scenario(text)
    except ScenarioError as e:
        issues = e.issues or []
        print(json.dumps({"valid": False, "code": e.code, "line": e.line, "path": e.path,
                          "message": str(e),
                          "issues": [vars(i) for i in issues]}, indent=2))
        return EXIT_INVALID
    print(json.dumps({"valid": True, "issues": []}))
    return EXIT_OK


def cmd_simulate(args) -> int:
    scenario = load_scenario(args.scenario)
    config = _engine_config(args.config)
    sched = make_scheduler(args.scheduler, agent_timeout=args.agent_timeout)
    try:
        result = run(scenario, sched, config)
    finally:
        if hasattr(sched, "close"):
            sched.close()
    if args.log:
        Path(args.log).write_text(log_to_ndjson(result.log), encoding="utf-8")
    out = result.report.to_dict()
    out["fitness"] = fitness(result.report, Objective())
    print(json.dumps(out, indent=2))
    return EXIT_OK


def cmd_train(args) -> int:
    from .training import TrainingConfig, save_result, train_population, warm_start

    if args.fixtures:
        batch = [load_fixture(n) for n in args.fixtures]
    else:
        batch = [load_scenario(p) for p in args.scenarios]
    initial = ()
    if args.warm_start:
        with open(args.warm_start, encoding="utf-8") as fh:
            initial = warm_start(json.load(fh))
    cfg = TrainingConfig(
        scenarios=tuple(batch), generations=args.generations, population_size=args.population,
        elite_count=args.elites, mutation_sigma=args.sigma, seed=args.seed,
        engine=_engine_config(args.config), workers=args.workers, initial=initial,
    )
    result = train_population(cfg)
    save_result(args.out, result, cfg)
    print(json.dumps({"best": result.best.to_dict(), "best_fitness": result.best_fitness,
                      "evaluations": result.evaluations, "out": str(args.out)}, indent=2))
    return EXIT_OK


def _load_state(path) -> TwinState:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    if "clock" in doc:
        return state_from_dict(doc)
    return parse_scenario(json.dumps(doc)).twin()


def cmd_forecast(args) -> int:
    state = _load_state(args.input)
    events = []
    if args.events:
        with open(args.events, encoding="utf-8") as fh:
            doc = json.load(fh)
        items = doc["events"] if isinstance(doc, dict) else doc
        events = [event_from_dict(e, f"events[{i}]") for i, e in enumerate(items)]
    sched = make_scheduler(args.scheduler)
    report = forecast(state, events, args.horizon, sched, _engine_config(args.config))
    print(report.to_json(), end="")
    return EXIT_OK


def _addr(s: str) -> tuple[str, int]:
    host, _, port = s.rpartition(":")
    return host or "127.0.0.1", int(port)


def _tcp_lines(addr):
    srv = socket.create_server(_addr(addr))
    while True:
        conn, _ = srv.accept()
        with conn, conn.makefile("r", encoding="utf-8") as fh:
            yield from fh


def cmd_serve(args) -> int:
    from .manager import LiveManager, QueryServer, run_live_loop, topology_from_doc

    with open(args.topology, encoding="utf-8") as fh:
        nodes, links = topology_from_doc(json.load(fh))
    sched = make_scheduler(args.scheduler)
    out = sys.stdout

    def sink(rec):
        out.write(json.dumps(rec) + "\n")
        out.flush()

    if args.log and args.resume and Path(args.log).exists():
        mgr = LiveManager.recover(args.log, sched, sink=sink)
    else:
        mgr = LiveManager(nodes, links, sched, log_path=args.log, sink=sink)
    server = None
    if args.listen:
        server = QueryServer(_addr(args.listen), mgr)
        server.start()
        logging.getLogger(__name__).info("query API on %s:%d", *server.server_address[:2])
    stop = threading.Event()
    for sig in (signal.SIGINT, signal.SIGTERM):
        signal.signal(sig, lambda *_: stop.set())
    source = sys.stdin if args.ingest == "stdin" else _tcp_lines(args.ingest)
    reason = run_live_loop(mgr, source, cadence_ms=args.cadence, stop=stop)
    if server is not None:
        server.shutdown()
    return EXIT_OK if not reason.startswith("sink-failure") else EXIT_RUNTIME


def cmd_fixtures(args) -> int:
    sys.stdout.write(fixture_text(args.name))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="continuum-twin", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="check a scenario document")
    p.add_argument("scenario")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("simulate", help="run a scenario and print the KPI report")
    p.add_argument("scenario")
    p.add_argument("--scheduler", default="first_fit",
                   help="first_fit | best_fit | weighted | <weights.json> | agent:<command>")
    p.add_argument("--config", help="engine config JSON")
    p.add_argument("--log", help="write the decision log (NDJSON) here")
    p.add_argument("--agent-timeout", type=float, default=1.0)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("train", help="population-based weight training")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--fixtures", nargs="+", choices=FIXTURES)
    src.add_argument("--scenarios", nargs="+")
    p.add_argument("--generations", type=int, default=20)
    p.add_argument("--population", type=int, default=16)
    p.add_argument("--elites", type=int, default=4)
    p.add_argument("--sigma", type=float, default=0.1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--config", help="engine config JSON")
    p.add_argument("--warm-start", help="seed generation 0 from a saved result")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("forecast", help="what-if run from a scenario topology or a snapshot")
    p.add_argument("input", help="scenario document or /snapshot JSON")
    p.add_argument("--events", help="JSON list of hypothetical events")
    p.add_argument("--horizon", type=int, required=True)
    p.add_argument("--scheduler", default="first_fit")
    p.add_argument("--config")
    p.set_defaults(func=cmd_forecast)

    p = sub.add_parser("serve", help="live manager loop")
    p.add_argument("--topology", required=True)
    p.add_argument("--scheduler", default="first_fit")
    p.add_argument("--listen", help="host:port for the query API")
    p.add_argument("--ingest", default="stdin", help="stdin or host:port to listen on")
    p.add_argument("--log", help="append-only decision/ingest log")
    p.add_argument("--resume", action="store_true", help="replay an existing --log first")
    p.add_argument("--cadence", type=int, default=1000, help="wall ms between scheduler calls")
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("fixtures", help="use-case fixtures")
    fsub = p.add_subparsers(dest="fixtures_command", required=True)
    e = fsub.add_parser("export")
    e.add_argument("name", choices=FIXTURES)
    e.set_defaults(func=cmd_fixtures)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ScenarioError as e:
        print(f"invalid input: {e}", file=sys.stderr)
        return EXIT_INVALID
    except (OSError, ValueError, KeyError, RuntimeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
