"""Virtual training environment: drives scenarios through the twin in virtual time.

At each virtual instant the order is fixed: scenario events, then internal
completions (transfer ends, compute ends), then the reschedule tick, then the
scheduler call. The scheduler is called after each scenario-event batch and
at each tick.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, fields
from typing import Iterable, Optional, Sequence

from .scenario import Scenario, ScenarioError, validate_events, validate_scenario
from .scheduler import Decision, Delay, Migrate, NoOp, Place, Scheduler
from .twin import (
    ACTIVE_PHASES,
    COMPLETED,
    QUEUED,
    RUNNING,
    TRANSFERRING,
    NodeSpec,
    ScenarioEvent,
    Snapshot,
    TwinError,
    TwinState,
    UnknownId,
    node_power,
)

MS_PER_HOUR = 3_600_000


@dataclass(frozen=True)
class EngineConfig:
    reschedule_interval: Optional[int] = 10_000  # None disables ticks
    strict_latency: bool = False
    horizon: Optional[int] = None  # None runs to exhaustion
    rng_seed: int = 0
    check_invariants: bool = False

    def __post_init__(self):
        if self.reschedule_interval is not None and self.reschedule_interval <= 0:
            raise ValueError("reschedule_interval must be > 0")
        if self.horizon is not None and self.horizon < 0:
            raise ValueError("horizon must be >= 0")


@dataclass(frozen=True)
class KPIReport:
    jobs_arrived: int = 0
    jobs_completed: int = 0
    jobs_failed: int = 0
    mean_response: float = 0.0
    p95_response: int = 0
    latency_violation_count: int = 0
    energy_wh: float = 0.0
    mean_cpu_utilization: float = 0.0
    migrations: int = 0
    restarts: int = 0
    makespan: int = 0
    decision_faults: int = 0
    horizon_ms: int = 0
    energy_upper_bound_wh: float = 0.0

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    @classmethod
    def from_dict(cls, d) -> "KPIReport":
        return cls(**{f.name: d[f.name] for f in fields(cls)})


@dataclass
class RunResult:
    state: TwinState
    report: KPIReport
    log: list
    decision_points: list


class CapacityInvariantError(AssertionError):
    pass


def log_to_ndjson(log: Iterable[dict]) -> str:
    return "".join(json.dumps(r, separators=(",", ":")) + "\n" for r in log)


# ---------------------------------------------------------------------------
# one decision point


def _apply(state: TwinState, d: Decision, actor: str, config: EngineConfig, seen: set):
    if isinstance(d, NoOp):
        state.log(actor, "no_op")
        return
    if not isinstance(d, (Place, Delay, Migrate)):
        raise _Malformed(f"not a decision: {d!r}")
    if d.job in seen:
        raise _Duplicate(f"second decision for {d.job} in one call")
    seen.add(d.job)
    if isinstance(d, Place):
        state.place_job(d.job, d.node, actor=actor, strict_latency=config.strict_latency)
    elif isinstance(d, Migrate):
        state.migrate_job(d.job, d.node, actor=actor, strict_latency=config.strict_latency)
    else:
        js = state.jobs.get(d.job)
        if js is None:
            raise UnknownId(f"unknown job {d.job!r}")
        if js.phase != QUEUED:
            raise _NotQueuedDelay(f"{d.job} is {js.phase}")
        state.log(actor, "delay", job=d.job)


class _Malformed(TwinError):
    code = "malformed"


class _Duplicate(TwinError):
    code = "duplicate-decision"


class _NotQueuedDelay(TwinError):
    code = "not-queued"


def step(state: TwinState, scheduler: Scheduler, config: EngineConfig = EngineConfig()) -> list:
    """Snapshot, decide, then validate and apply each decision in order.

    Rejected decisions are logged with ``outcome="rejected:<code>"`` and
    count as decision faults. Returns the applied decisions.
    """
    faults_before = getattr(scheduler, "faults", 0)
    decisions = scheduler.decide(state.snapshot())
    actor = getattr(scheduler, "name", type(scheduler).__name__)
    if getattr(scheduler, "faults", 0) > faults_before:
        # external agents fall back to all-delay; the fault itself is logged once
        state.log(actor, "fault", outcome="rejected:protocol",
                  data={"reason": scheduler.fault_log[-1]})
    applied = []
    seen: set = set()
    for d in decisions:
        try:
            _apply(state, d, actor, config, seen)
        except TwinError as e:
            state.log(actor, getattr(d, "kind", "unknown"), job=getattr(d, "job", None),
                      node=getattr(d, "node", None), outcome=f"rejected:{e.code}",
                      data={"reason": str(e)})
        else:
            applied.append(d)
    return applied


def complete_due(state: TwinState, t: int) -> None:
    """Finish transfers and computations that end exactly at ``t``, arrival order."""
    for js in list(state.live.values()):
        if js.phase == TRANSFERRING and js.transfer_ends == t:
            state.start_running(js.id)
        elif js.phase == RUNNING and js.run_started + js.remaining_work == t:
            state.release_job(js.id, COMPLETED)


def next_completion(state: TwinState) -> Optional[int]:
    best = None
    for js in state.live.values():
        t = js.next_transition()
        if t is not None and (best is None or t < best):
            best = t
    return best


def advance_to(state: TwinState, t: int) -> None:
    """Process internal completions up to and including ``t`` (no scheduling)."""
    while True:
        nc = next_completion(state)
        if nc is None or nc > t:
            break
        state.advance(nc)
        complete_due(state, nc)
    state.advance(t)


# ---------------------------------------------------------------------------
# main loop


def simulate(state: TwinState, events: Sequence[ScenarioEvent], scheduler: Scheduler,
             config: EngineConfig = EngineConfig(), until: Optional[int] = None) -> list[int]:
    """Run the loop in place until ``until`` (absolute) or exhaustion.

    Returns the decision-point timestamps. Appends an ``end`` record.
    """
    interval = config.reschedule_interval
    next_tick = (state.clock // interval + 1) * interval if interval else None
    i, n = 0, len(events)
    points: list[int] = []
    while True:
        cands = []
        if i < n:
            cands.append(events[i].time)
        nc = next_completion(state)
        if nc is not None:
            cands.append(nc)
        if next_tick is not None and (i < n or state.live):
            cands.append(next_tick)
        if not cands:
            break
        t = min(cands)
        if until is not None and t > until:
            break
        state.advance(t)
        batch = False
        while i < n and events[i].time == t:
            ev = events[i]
            try:
                state.apply_event(ev)
            except TwinError as e:
                state.log("scenario", ev.kind, outcome=f"rejected:{e.code}", data={"reason": str(e)})
            i += 1
            batch = True
        complete_due(state, t)
        tick = next_tick == t
        if tick:
            next_tick += interval
        applied = []
        if batch or tick:
            points.append(t)
            applied = step(state, scheduler, config)
            if config.check_invariants:
                bad = state.capacity_violations()
                if bad:
                    raise CapacityInvariantError(f"t={t}: " + "; ".join(bad))
        if i >= n and not state.active():
            if not state.live or next_tick is None:
                break
            if tick and not any(isinstance(d, (Place, Migrate)) for d in applied):
                break  # queue cannot make progress
    state.advance(until if until is not None else state.clock)
    state.log("engine", "end")
    return points


def run(scenario: Scenario, scheduler: Scheduler, config: EngineConfig = EngineConfig()) -> RunResult:
    issues = validate_scenario(scenario)
    if issues:
        raise ScenarioError(issues[0].code, issues[0].message, path=issues[0].path, issues=issues)
    state = scenario.twin()
    points = simulate(state, scenario.events, scheduler, config, until=config.horizon)
    report = compute_kpis(state.event_log, scenario.nodes)
    return RunResult(state, report, state.event_log, points)


def run_from(state: TwinState, events: Sequence[ScenarioEvent], scheduler: Scheduler,
             horizon: int, config: EngineConfig = EngineConfig()) -> KPIReport:
    """Run ``state`` in place for ``horizon`` ms and report on that window only."""
    start = state.snapshot()
    first = len(state.event_log)
    simulate(state, events, scheduler, config, until=state.clock + horizon)
    nodes = [ns.spec for ns in state.nodes.values()]
    return compute_kpis(state.event_log[first:], nodes, start=start)


def forecast(state: TwinState, hypothetical: Sequence[ScenarioEvent], horizon: int,
             scheduler: Scheduler, config: EngineConfig = EngineConfig()) -> KPIReport:
    """What-if run on a private clone; ``state`` is left untouched."""
    if horizon < 0:
        raise ScenarioError("malformed-timeline", "horizon must be >= 0")
    for ev in hypothetical:
        if not state.clock <= ev.time <= state.clock + horizon:
            raise ScenarioError("malformed-timeline",
                                f"event at {ev.time} outside [{state.clock}, {state.clock + horizon}]")
    nodes = [ns.spec for ns in state.nodes.values()]
    issues = validate_events(hypothetical, nodes, list(state.links.values()), start=state.clock,
                             known_jobs=frozenset(state.jobs), prefix="$.hypothetical")
    if issues:
        raise ScenarioError("malformed-timeline", issues[0].message, path=issues[0].path,
                            issues=issues)
    return run_from(state.clone(), list(hypothetical), scheduler, horizon, config)


# ---------------------------------------------------------------------------
# KPIs


def _p95(values: list[int]) -> int:
    if not values:
        return 0
    ordered = sorted(values)
    return ordered[math.ceil(0.95 * len(ordered)) - 1]


def compute_kpis(event_log: Sequence[dict], topology: Sequence[NodeSpec],
                 start: Optional[Snapshot] = None, end: Optional[int] = None) -> KPIReport:
    """Replay a run log into a report.

    Energy integrates piecewise-constant node power between record times.
    ``start`` supplies node and job state at the window start (defaults to the
    pristine topology at t=0). The window ends at the log's ``end`` record,
    else at ``end``, else at the last record.
    """
    if not event_log and start is None:
        return KPIReport()
    specs = {n.id: n for n in topology}
    up = dict.fromkeys(specs, True)
    bg = dict.fromkeys(specs, 0.0)
    used = {k: [0, 0, 0] for k in specs}
    demand: dict[str, tuple] = {}
    where: dict[str, Optional[str]] = {}
    arrival: dict[str, int] = {}
    violating: dict[str, bool] = {}
    t0 = 0
    if start is not None:
        t0 = start.clock
        for nid, ns in start.nodes.items():
            up[nid] = ns.up
            bg[nid] = ns.background_load
            used[nid] = [ns.cpu_m, ns.mem_mib, ns.storage_gib]
        for js in start.jobs.values():
            demand[js.id] = (js.spec.cpu_m, js.spec.mem_mib, js.spec.storage_gib)
            arrival[js.id] = js.spec.arrival
            where[js.id] = js.node if js.phase in ACTIVE_PHASES else None
            violating[js.id] = js.violation

    arrived = len(demand)
    completed = failed = migrations = restarts = faults = 0
    makespan = 0
    responses: list[int] = []
    energy_wms = 0.0
    cpu_util_ms = 0.0
    prev = t0
    end_rec = None

    def alloc(nid, jid, sign):
        d = demand[jid]
        u = used[nid]
        u[0] += sign * d[0]
        u[1] += sign * d[1]
        u[2] += sign * d[2]

    def integrate(dt):
        nonlocal energy_wms, cpu_util_ms
        if dt <= 0:
            return
        cap = busy = 0.0
        for nid, spec in specs.items():
            if not up[nid]:
                continue
            u = used[nid]
            frac = 0.0
            for val, c in zip(u, (spec.cpu_m, spec.mem_mib, spec.storage_gib)):
                if c > 0:
                    frac = max(frac, val / c)
            energy_wms += node_power(spec, min(1.0, frac + bg[nid])) * dt
            cap += spec.cpu_m
            busy += u[0]
        if cap > 0:
            cpu_util_ms += busy / cap * dt

    for rec in event_log:
        t = rec["t"]
        if t < prev:
            raise ValueError(f"malformed log: time {t} before {prev}")
        integrate(t - prev)
        prev = t
        action, outcome, job, node = rec["action"], rec["outcome"], rec["job"], rec["node"]
        if outcome.startswith("rejected"):
            if rec["actor"] != "scenario":
                faults += 1
            continue
        if action == "job_arrival":
            d = rec["data"]
            demand[job] = (d["cpu_m"], d["mem_mib"], d["storage_gib"])
            arrival[job] = t
            where[job] = None
            violating[job] = False
            arrived += 1
        elif action == "node_fail":
            up[node] = False
        elif action == "node_recover":
            up[node] = True
        elif action == "metric_update":
            bg[node] = rec["data"]["background_load"]
        elif action == "place":
            alloc(node, job, +1)
            where[job] = node
            violating[job] = rec["data"]["violation"]
        elif action == "migrate":
            alloc(rec["data"]["from"], job, -1)
            alloc(node, job, +1)
            where[job] = node
            violating[job] = rec["data"]["violation"]
            migrations += 1
        elif action == "release":
            alloc(where[job], job, -1)
            where[job] = None
            makespan = t
            if outcome == COMPLETED:
                completed += 1
                responses.append(t - arrival[job])
            else:
                failed += 1
        elif action == "evict":
            alloc(where[job], job, -1)
            where[job] = None
            violating[job] = False
            restarts += 1
        elif action == "end":
            end_rec = t
    if end_rec is not None:
        end = end_rec
    elif end is None:
        end = prev
    elif end > prev:
        integrate(end - prev)
    window = end - t0
    peak = sum(s.power_max_w for s in specs.values())
    return KPIReport(
        jobs_arrived=arrived,
        jobs_completed=completed,
        jobs_failed=failed,
        mean_response=sum(responses) / len(responses) if responses else 0.0,
        p95_response=_p95(responses),
        latency_violation_count=sum(violating.values()),
        energy_wh=energy_wms / MS_PER_HOUR,
        mean_cpu_utilization=cpu_util_ms / window if window > 0 else 0.0,
        migrations=migrations,
        restarts=restarts,
        makespan=makespan,
        decision_faults=faults,
        horizon_ms=window,
        energy_upper_bound_wh=peak * window / MS_PER_HOUR,
    )


@dataclass(frozen=True)
class Objective:
    alpha: float = 1.0  # throughput
    beta: float = 1.0  # response time
    gamma: float = 1.0  # energy
    delta: float = 1.0  # latency violations

    def __post_init__(self):
        if min(self.alpha, self.beta, self.gamma, self.delta) < 0:
            raise ValueError("objective weights must be >= 0")


def fitness(report: KPIReport, objective: Objective = Objective()) -> float:
    """Scalar to maximize: throughput minus normalized response, energy and violations."""
    o = objective
    value = 0.0
    if report.jobs_arrived > 0:
        value += o.alpha * report.jobs_completed / report.jobs_arrived
        value -= o.delta * report.latency_violation_count / report.jobs_arrived
    if report.horizon_ms > 0:
        value -= o.beta * report.mean_response / report.horizon_ms
    if report.energy_upper_bound_wh > 0:
        value -= o.gamma * report.energy_wh / report.energy_upper_bound_wh
    return value
