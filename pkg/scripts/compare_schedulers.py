#!/usr/bin/env python3
"""Run every built-in scheduler over the fixtures (and optional extra
scenarios or weight files) and print a KPI table."""

from __future__ import annotations

import argparse
import time

from continuum_twin.engine import EngineConfig, Objective, fitness, run
from continuum_twin.scenario import FIXTURES, load_fixture, load_scenario
from continuum_twin.scheduler import make_scheduler

COLUMNS = ("done", "mean_ms", "p95_ms", "viol", "energy_wh", "util", "migr", "fitness", "wall_s")


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--scenarios", nargs="*", default=[], help="extra scenario files")
    ap.add_argument("--schedulers", nargs="+", default=["first_fit", "best_fit", "weighted"],
                    help="scheduler specs, including trained weight files")
    ap.add_argument("--interval", type=int, default=10_000, help="reschedule tick in ms (0 = off)")
    args = ap.parse_args(argv)

    config = EngineConfig(reschedule_interval=args.interval or None)
    batch = [load_fixture(n) for n in FIXTURES] + [load_scenario(p) for p in args.scenarios]
    print(f"{'scenario':<14}{'scheduler':<22}" + "".join(f"{c:>11}" for c in COLUMNS))
    for scen in batch:
        for spec in args.schedulers:
            start = time.perf_counter()
            r = run(scen, make_scheduler(spec), config).report
            wall = time.perf_counter() - start
            row = (f"{r.jobs_completed}/{r.jobs_arrived}", f"{r.mean_response:.0f}", str(r.p95_response),
                   str(r.latency_violation_count), f"{r.energy_wh:.2f}", f"{r.mean_cpu_utilization:.3f}",
                   str(r.migrations), f"{fitness(r, Objective()):.4f}", f"{wall:.3f}")
            print(f"{scen.name:<14}{spec[-21:]:<22}" + "".join(f"{c:>11}" for c in row))
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
