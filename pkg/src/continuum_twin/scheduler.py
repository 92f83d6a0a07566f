"""Scheduler decision contract, baseline heuristics and the weighted scorer.

A scheduler is any object with a ``name`` and a ``decide(snapshot)`` method
returning a list of decisions. Built-ins are pure functions of the snapshot.
"""

from __future__ import annotations

import json
from dataclasses import astuple, dataclass, fields
from typing import ClassVar, Iterable, Mapping, Optional, Protocol, Union

from .twin import QUEUED, RESOURCES, RUNNING, JobSpec, JobState, Snapshot, node_power


@dataclass(frozen=True)
class Place:
    job: str
    node: str
    kind: ClassVar[str] = "place"


@dataclass(frozen=True)
class Delay:
    job: str
    kind: ClassVar[str] = "delay"


@dataclass(frozen=True)
class Migrate:
    job: str
    node: str
    kind: ClassVar[str] = "migrate"


@dataclass(frozen=True)
class NoOp:
    kind: ClassVar[str] = "no_op"


Decision = Union[Place, Delay, Migrate, NoOp]


def decision_to_dict(d: Decision) -> dict:
    out = {"kind": d.kind}
    if not isinstance(d, NoOp):
        out["job"] = d.job
    if isinstance(d, (Place, Migrate)):
        out["node"] = d.node
    return out


def decision_from_dict(d: Mapping) -> Decision:
    """Decode a wire decision; raises ``ValueError`` on malformed input."""
    if not isinstance(d, dict):
        raise ValueError(f"decision must be an object, got {type(d).__name__}")
    kind = d.get("kind")
    expected = {"place": {"kind", "job", "node"}, "migrate": {"kind", "job", "node"},
                "delay": {"kind", "job"}, "no_op": {"kind"}}.get(kind)
    if expected is None:
        raise ValueError(f"unknown decision kind {kind!r}")
    if set(d) != expected or not all(isinstance(d[k], str) for k in expected):
        raise ValueError(f"malformed {kind} decision: {d!r}")
    if kind == "place":
        return Place(d["job"], d["node"])
    if kind == "migrate":
        return Migrate(d["job"], d["node"])
    if kind == "delay":
        return Delay(d["job"])
    return NoOp()


class Scheduler(Protocol):
    name: str

    def decide(self, snapshot: Snapshot) -> list[Decision]: ...


def job_order(jobs: Iterable[JobState]) -> list[JobState]:
    """Priority desc, arrival asc, id asc."""
    return sorted(jobs, key=lambda j: (-j.spec.priority, j.spec.arrival, j.spec.id))


class Infeasible(ValueError):
    pass


class _Planner:
    """Feasibility and scoring against a snapshot plus same-call reservations."""

    def __init__(self, snap: Snapshot):
        self.snap = snap
        self.reserved: dict[str, list] = {}
        self.node_ids = sorted(snap.nodes)

    def used(self, nid: str, r: int) -> float:
        ns = self.snap.nodes[nid]
        extra = self.reserved.get(nid)
        return ns.used(RESOURCES[r]) + (extra[r] if extra else 0)

    def reserve(self, job: JobSpec, nid: str):
        extra = self.reserved.setdefault(nid, [0, 0, 0])
        for i, r in enumerate(RESOURCES):
            extra[i] += job.demand(r)

    def feasible(self, job: JobSpec, nid: str, own: bool = False) -> bool:
        snap = self.snap
        ns = snap.nodes.get(nid)
        if ns is None or not ns.up or not snap.admits(job, ns.spec):
            return False
        if not own:
            for i, r in enumerate(RESOURCES):
                if self.used(nid, i) + job.demand(r) > ns.spec.capacity(r):
                    return False
        if snap.needs_source(job) and snap.resolve_source(job, nid) is None:
            return False
        return True

    def _fractions(self, job: JobSpec, nid: str, own: bool):
        """(mean leftover after, utilization before, utilization after)."""
        ns = self.snap.nodes[nid]
        left = 0.0
        before = after = 0.0
        for i, r in enumerate(RESOURCES):
            cap = ns.spec.capacity(r)
            if cap <= 0:
                continue
            base = self.used(nid, i) - (job.demand(r) if own else 0)
            post = base + job.demand(r)
            left += (cap - post) / cap
            before = max(before, base / cap)
            after = max(after, post / cap)
        bg = ns.background_load
        return (left / len(RESOURCES), min(1.0, before + bg), min(1.0, after + bg))

    def leftover(self, job: JobSpec, nid: str) -> float:
        return self._fractions(job, nid, False)[0]

    def score(self, job: JobSpec, nid: str, w: "WeightVector", own: bool = False) -> float:
        if not self.feasible(job, nid, own):
            raise Infeasible(f"{job.id} is not feasible on {nid}")
        total = w.w_fit + w.w_latency + w.w_energy + w.w_balance
        if total == 0:
            return 0.0
        spec = self.snap.nodes[nid].spec
        left, u0, u1 = self._fractions(job, nid, own)
        s_fit = 1.0 - left
        s_lat = 1.0
        if job.latency_bound_ms is not None:
            src = self.snap.resolve_source(job, nid)
            lat = self.snap.path_latency(nid, src)
            if job.latency_bound_ms > 0:
                s_lat = max(0.0, 1.0 - lat / job.latency_bound_ms)
            else:
                s_lat = 1.0 if lat == 0 else 0.0
        if spec.power_max_w > 0:
            marginal = node_power(spec, u1) - node_power(spec, u0)
            s_en = 1.0 - marginal / spec.power_max_w
        else:
            s_en = 1.0
        s_bal = 1.0 - u1
        return (w.w_fit * s_fit + w.w_latency * s_lat + w.w_energy * s_en
                + w.w_balance * s_bal) / total


# ---------------------------------------------------------------------------
# heuristics


def decide_first_fit(snapshot: Snapshot) -> list[Decision]:
    plan = _Planner(snapshot)
    out: list[Decision] = []
    for js in job_order(snapshot.queued()):
        for nid in plan.node_ids:
            if plan.feasible(js.spec, nid):
                plan.reserve(js.spec, nid)
                out.append(Place(js.id, nid))
                break
        else:
            out.append(Delay(js.id))
    return out


def decide_best_fit(snapshot: Snapshot) -> list[Decision]:
    plan = _Planner(snapshot)
    out: list[Decision] = []
    for js in job_order(snapshot.queued()):
        best = None
        for nid in plan.node_ids:
            if plan.feasible(js.spec, nid):
                left = plan.leftover(js.spec, nid)
                if best is None or left < best[0]:
                    best = (left, nid)
        if best is None:
            out.append(Delay(js.id))
        else:
            plan.reserve(js.spec, best[1])
            out.append(Place(js.id, best[1]))
    return out


@dataclass(frozen=True)
class WeightVector:
    w_fit: float = 0.25
    w_latency: float = 0.25
    w_energy: float = 0.25
    w_balance: float = 0.25
    theta: float = 0.2

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{f.name}={v} outside [0, 1]")

    def as_tuple(self) -> tuple:
        return astuple(self)

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, d: Mapping) -> "WeightVector":
        return cls(**{f.name: float(d[f.name]) for f in fields(cls) if f.name in d})


def score_weighted(snapshot: Snapshot, job: JobSpec, node_id: str, w: WeightVector) -> float:
    """Normalized weighted score in [0, 1]; raises :class:`Infeasible`."""
    return _Planner(snapshot).score(job, node_id, w)


def decide_weighted(snapshot: Snapshot, w: WeightVector) -> list[Decision]:
    plan = _Planner(snapshot)
    out: list[Decision] = []
    for js in job_order(snapshot.queued()):
        best = None
        for nid in plan.node_ids:
            if plan.feasible(js.spec, nid):
                s = plan.score(js.spec, nid, w)
                if best is None or s > best[0]:
                    best = (s, nid)
        if best is None:
            out.append(Delay(js.id))
        else:
            plan.reserve(js.spec, best[1])
            out.append(Place(js.id, best[1]))

    for js in snapshot.jobs.values():
        if js.phase != RUNNING or not js.spec.migratable:
            continue
        if not plan.feasible(js.spec, js.node, own=True):
            continue
        current = plan.score(js.spec, js.node, w, own=True)
        best = None
        for nid in plan.node_ids:
            # the job's data is shipped from its current node
            if (nid != js.node and plan.feasible(js.spec, nid)
                    and snapshot.network.route(js.node, nid) is not None):
                s = plan.score(js.spec, nid, w)
                if best is None or s > best[0]:
                    best = (s, nid)
        if best is not None and best[0] - current > w.theta:
            plan.reserve(js.spec, best[1])
            out.append(Migrate(js.id, best[1]))
    return out


class FirstFit:
    name = "first_fit"

    def decide(self, snapshot: Snapshot) -> list[Decision]:
        return decide_first_fit(snapshot)


class BestFit:
    name = "best_fit"

    def decide(self, snapshot: Snapshot) -> list[Decision]:
        return decide_best_fit(snapshot)


class Weighted:
    def __init__(self, weights: Optional[WeightVector] = None):
        self.weights = weights or WeightVector()
        self.name = "weighted"

    def decide(self, snapshot: Snapshot) -> list[Decision]:
        return decide_weighted(snapshot, self.weights)

    def __repr__(self):
        return f"Weighted({self.weights})"


BUILTINS = {"first_fit": FirstFit, "best_fit": BestFit, "weighted": Weighted}


def load_weights(path) -> WeightVector:
    """Weights from a JSON file: a bare vector or a training result document."""
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    if "best" in doc:
        doc = doc["best"]
    return WeightVector.from_dict(doc)


def make_scheduler(spec: str, agent_timeout: float = 1.0):
    """Resolve a scheduler name, a weights file, or ``agent:<command>``."""
    if spec in BUILTINS:
        return BUILTINS[spec]()
    if spec.startswith("agent:"):
        import shlex

        from .agent import AgentScheduler

        return AgentScheduler.spawn(shlex.split(spec[len("agent:"):]), timeout=agent_timeout)
    return Weighted(load_weights(spec))
