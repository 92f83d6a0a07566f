"""Scenario documents: strict JSON parsing, validation, synthesis and fixtures."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from importlib import resources
from typing import Any, Mapping, Optional, Sequence

from .rng import SplitMix64
from .twin import (
    TIERS,
    JobArrival,
    JobSpec,
    LinkChange,
    LinkSpec,
    MetricUpdate,
    NodeFail,
    NodeRecover,
    NodeSpec,
    ScenarioEvent,
    TwinState,
    link_key,
)

FIXTURES = ("intersection", "mri", "emergency")
EVENT_KINDS = ("job_arrival", "node_fail", "node_recover", "link_change", "metric_update")


class ScenarioError(ValueError):
    """Parse or validation failure with a machine-readable ``code``."""

    def __init__(self, code: str, message: str, line: Optional[int] = None,
                 path: str = "", issues: Sequence["Issue"] = ()):
        self.code = code
        self.line = line
        self.path = path
        self.issues = list(issues)
        where = f" (line {line})" if line is not None else (f" at {path}" if path else "")
        super().__init__(f"{code}: {message}{where}")


@dataclass(frozen=True)
class Issue:
    code: str
    path: str
    message: str


@dataclass(frozen=True)
class Scenario:
    name: str
    seed: int
    description: str
    nodes: tuple[NodeSpec, ...]
    links: tuple[LinkSpec, ...]
    events: tuple[ScenarioEvent, ...] = ()

    def twin(self) -> TwinState:
        return TwinState(self.nodes, self.links)

    @property
    def job_count(self) -> int:
        return sum(isinstance(e, JobArrival) for e in self.events)


# ---------------------------------------------------------------------------
# wire form


def event_to_dict(ev: ScenarioEvent) -> dict:
    d: dict[str, Any] = {"t": ev.time, "kind": ev.kind}
    if isinstance(ev, JobArrival):
        d.update(ev.job.to_dict())
    elif isinstance(ev, (NodeFail, NodeRecover)):
        d["node"] = ev.node
    elif isinstance(ev, LinkChange):
        d.update(a=ev.a, b=ev.b, latency_ms=ev.latency_ms, bandwidth_mbps=ev.bandwidth_mbps, up=ev.up)
    elif isinstance(ev, MetricUpdate):
        d.update(node=ev.node, background_load=ev.background_load)
    else:
        raise TypeError(f"not a scenario event: {ev!r}")
    return d


def scenario_to_dict(s: Scenario) -> dict:
    return {
        "name": s.name,
        "seed": s.seed,
        "description": s.description,
        "topology": {
            "nodes": [n.to_dict() for n in s.nodes],
            "links": [ln.to_dict() for ln in s.links],
        },
        "events": [event_to_dict(e) for e in s.events],
    }


def serialize_scenario(s: Scenario) -> str:
    return json.dumps(scenario_to_dict(s), indent=2, ensure_ascii=False) + "\n"


# field name -> (type check, required)
_INT = "int"
_NUM = "number"
_STR = "string"
_BOOL = "bool"
_OPT_STR = "string|null"
_OPT_INT = "int|null"
_STR_LIST = "list[string]"
_OBJ = "object"
_LIST = "list"

_TOP = {"name": (_STR, True), "seed": (_INT, True), "description": (_STR, True),
        "topology": (_OBJ, True), "events": (_LIST, True)}
_TOPOLOGY = {"nodes": (_LIST, True), "links": (_LIST, True)}
_NODE = {"id": (_STR, True), "tier": (_STR, True), "cpu_m": (_NUM, True), "mem_mib": (_NUM, True),
         "storage_gib": (_NUM, True), "power_idle_w": (_NUM, True), "power_max_w": (_NUM, True),
         "labels": (_OBJ, False)}
_LINK = {"a": (_STR, True), "b": (_STR, True), "latency_ms": (_INT, True),
         "bandwidth_mbps": (_NUM, True), "up": (_BOOL, False)}
_EVENT_BASE = {"t": (_INT, True), "kind": (_STR, True)}
_PAYLOAD = {
    "job_arrival": {
        "id": (_STR, True), "cpu_m": (_NUM, True), "mem_mib": (_NUM, True),
        "storage_gib": (_NUM, True), "duration_ms": (_INT, True), "data_mb": (_NUM, False),
        "data_source": (_OPT_STR, False), "latency_bound_ms": (_OPT_INT, False),
        "allowed_tiers": (_STR_LIST, False), "allowed_zones": (_STR_LIST, False),
        "priority": (_INT, False), "migratable": (_BOOL, False),
    },
    "node_fail": {"node": (_STR, True)},
    "node_recover": {"node": (_STR, True)},
    "link_change": {"a": (_STR, True), "b": (_STR, True), "latency_ms": (_INT, True),
                    "bandwidth_mbps": (_NUM, True), "up": (_BOOL, True)},
    "metric_update": {"node": (_STR, True), "background_load": (_NUM, True)},
}


def _type_ok(value, kind: str) -> bool:
    is_int = isinstance(value, int) and not isinstance(value, bool)
    if kind == _INT:
        return is_int
    if kind == _NUM:
        return is_int or (isinstance(value, float) and math.isfinite(value))
    if kind == _STR:
        return isinstance(value, str)
    if kind == _BOOL:
        return isinstance(value, bool)
    if kind == _OPT_STR:
        return value is None or isinstance(value, str)
    if kind == _OPT_INT:
        return value is None or is_int
    if kind == _STR_LIST:
        return isinstance(value, list) and all(isinstance(v, str) for v in value)
    if kind == _OBJ:
        return isinstance(value, dict)
    if kind == _LIST:
        return isinstance(value, list)
    raise AssertionError(kind)


def _check(obj, schema: Mapping, path: str):
    if not isinstance(obj, dict):
        raise ScenarioError("bad-type", "expected an object", path=path)
    for k in obj:
        if k not in schema:
            raise ScenarioError("unknown-field", f"unknown field {k!r}", path=path)
    for k, (kind, required) in schema.items():
        if k not in obj:
            if required:
                raise ScenarioError("missing-field", f"missing field {k!r}", path=path)
        elif not _type_ok(obj[k], kind):
            raise ScenarioError("bad-type", f"field {k!r} must be {kind}", path=f"{path}.{k}")


def event_from_dict(d: Mapping, path: str = "event") -> ScenarioEvent:
    """Strictly decode one wire event."""
    if not isinstance(d, dict):
        raise ScenarioError("bad-type", "expected an object", path=path)
    kind = d.get("kind")
    if kind not in _PAYLOAD:
        raise ScenarioError("unknown-kind", f"unknown event kind {kind!r}", path=path)
    _check(d, {**_EVENT_BASE, **_PAYLOAD[kind]}, path)
    t = d["t"]
    if kind == "job_arrival":
        return JobArrival(t, JobSpec.from_dict(d, arrival=t))
    if kind == "node_fail":
        return NodeFail(t, d["node"])
    if kind == "node_recover":
        return NodeRecover(t, d["node"])
    if kind == "link_change":
        return LinkChange(t, d["a"], d["b"], d["latency_ms"], d["bandwidth_mbps"], d["up"])
    return MetricUpdate(t, d["node"], d["background_load"])


def node_from_wire(d: Mapping, path: str = "node") -> NodeSpec:
    _check(d, _NODE, path)
    labels = d.get("labels", {})
    if not all(isinstance(v, str) for v in labels.values()):
        raise ScenarioError("bad-type", "labels must map strings to strings", path=f"{path}.labels")
    return NodeSpec(d["id"], d["tier"], d["cpu_m"], d["mem_mib"], d["storage_gib"],
                    d["power_idle_w"], d["power_max_w"], dict(labels))


def link_from_wire(d: Mapping, path: str = "link") -> LinkSpec:
    _check(d, _LINK, path)
    return LinkSpec(d["a"], d["b"], d["latency_ms"], d["bandwidth_mbps"], d.get("up", True))


def scenario_from_dict(doc: Any) -> Scenario:
    _check(doc, _TOP, "$")
    if doc["seed"] < 0 or doc["seed"] >= 1 << 64:
        raise ScenarioError("bad-type", "seed must be an unsigned 64-bit integer", path="$.seed")
    topo = doc["topology"]
    _check(topo, _TOPOLOGY, "$.topology")
    nodes = tuple(node_from_wire(n, f"$.topology.nodes[{i}]") for i, n in enumerate(topo["nodes"]))
    links = tuple(link_from_wire(n, f"$.topology.links[{i}]") for i, n in enumerate(topo["links"]))
    events = tuple(event_from_dict(e, f"$.events[{i}]") for i, e in enumerate(doc["events"]))
    return Scenario(doc["name"], doc["seed"], doc["description"], nodes, links, events)


def parse_scenario(text: str) -> Scenario:
    """Parse and validate a scenario document; raises :class:`ScenarioError`."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise ScenarioError("syntax", e.msg, line=e.lineno) from None
    s = scenario_from_dict(doc)
    issues = validate_scenario(s)
    if issues:
        first = issues[0]
        raise ScenarioError(first.code, first.message, path=first.path, issues=issues)
    return s


# ---------------------------------------------------------------------------
# validation


def validate_topology(nodes: Sequence[NodeSpec], links: Sequence[LinkSpec]) -> list[Issue]:
    issues: list[Issue] = []
    seen: set[str] = set()
    for i, n in enumerate(nodes):
        p = f"$.topology.nodes[{i}]"
        if n.id in seen:
            issues.append(Issue("duplicate-node-id", p, f"duplicate node id {n.id}"))
        seen.add(n.id)
        issues.extend(Issue(c, p, m) for c, m in n.issues())
    pairs: set[tuple] = set()
    for i, ln in enumerate(links):
        p = f"$.topology.links[{i}]"
        for end in (ln.a, ln.b):
            if end not in seen:
                issues.append(Issue("dangling-id", p, f"link endpoint {end} not in topology"))
        if ln.key in pairs:
            issues.append(Issue("duplicate-link", p, f"second link between {ln.a} and {ln.b}"))
        pairs.add(ln.key)
        issues.extend(Issue(c, p, m) for c, m in ln.issues())
    return issues


def validate_events(events: Sequence[ScenarioEvent], nodes: Sequence[NodeSpec],
                    links: Sequence[LinkSpec], start: int = 0,
                    known_jobs: frozenset = frozenset(), prefix: str = "$.events") -> list[Issue]:
    issues: list[Issue] = []
    node_ids = {n.id for n in nodes}
    zones = {n.zone for n in nodes if n.zone is not None}
    pairs = {ln.key for ln in links}
    job_ids = set(known_jobs)
    last = start
    for i, ev in enumerate(events):
        p = f"{prefix}[{i}]"
        if ev.time < last:
            issues.append(Issue("ordering-violation", p, f"time {ev.time} before {last}"))
        last = max(last, ev.time)
        if isinstance(ev, JobArrival):
            job = ev.job
            if job.id in job_ids:
                issues.append(Issue("duplicate-job-id", p, f"duplicate job id {job.id}"))
            job_ids.add(job.id)
            if job.data_source is not None and job.data_source not in node_ids | zones:
                issues.append(Issue("dangling-id", p, f"data_source {job.data_source} is neither a node nor a zone"))
            issues.extend(Issue(c, p, m) for c, m in job.issues())
        elif isinstance(ev, (NodeFail, NodeRecover, MetricUpdate)):
            if ev.node not in node_ids:
                issues.append(Issue("dangling-id", p, f"unknown node {ev.node}"))
            if isinstance(ev, MetricUpdate) and not 0 <= ev.background_load <= 1:
                issues.append(Issue("invalid-value", p, "background_load must be in [0, 1]"))
        elif isinstance(ev, LinkChange):
            if link_key(ev.a, ev.b) not in pairs:
                issues.append(Issue("dangling-id", p, f"unknown link {ev.a}-{ev.b}"))
            if ev.latency_ms < 0 or not ev.bandwidth_mbps > 0:
                issues.append(Issue("invalid-value", p, "latency_ms >= 0 and bandwidth_mbps > 0 required"))
    return issues


def validate_scenario(s: Scenario) -> list[Issue]:
    """All invariant breaches of ``s``; empty when the scenario is well formed."""
    return validate_topology(s.nodes, s.links) + validate_events(s.events, s.nodes, s.links)


# ---------------------------------------------------------------------------
# synthesis

# tier -> (cpu_m, mem_mib, storage_gib, power_idle_w, power_max_w, zone)
TIER_DEFAULTS = {
    "iot": (1000, 1024, 16, 2.0, 5.0, "site"),
    "edge": (8000, 16384, 256, 40.0, 120.0, "site"),
    "cloud": (32000, 131072, 4096, 150.0, 400.0, "cloud"),
    "hpc": (128000, 524288, 16384, 600.0, 1600.0, "hpc"),
}
# upper tier of a hop -> (latency_ms, bandwidth_mbps)
HOP_DEFAULTS = {"edge": (2, 100.0), "cloud": (20, 1000.0), "hpc": (10, 10000.0)}


@dataclass(frozen=True)
class SynthesisParams:
    n_iot: int = 4
    n_edge: int = 2
    n_cloud: int = 2
    n_hpc: int = 0
    job_count: int = 20
    arrival_rate: float = 1.0  # jobs per virtual second
    cpu_range: tuple = (100, 2000)
    mem_range: tuple = (128, 2048)
    storage_range: tuple = (0, 10)
    duration_range: tuple = (1000, 30000)
    data_range: tuple = (0, 50)
    latency_bound_prob: float = 0.3
    latency_bound_range: tuple = (5, 50)
    migratable_prob: float = 0.8
    failure_rate: float = 0.0  # node failures per virtual hour
    downtime_range: tuple = (5000, 60000)
    horizon: int = 600_000

    def issues(self) -> list[str]:
        out = []
        for name in ("n_iot", "n_edge", "n_cloud", "n_hpc", "job_count"):
            if getattr(self, name) < 0:
                out.append(f"{name} must be >= 0")
        for name in ("cpu_range", "mem_range", "storage_range", "duration_range", "data_range",
                     "latency_bound_range", "downtime_range"):
            lo, hi = getattr(self, name)
            if lo > hi or lo < 0:
                out.append(f"{name} must satisfy 0 <= min <= max")
        if self.duration_range[0] <= 0:
            out.append("duration_range must be positive")
        if self.downtime_range[0] <= 0:
            out.append("downtime_range must be positive")
        for name in ("arrival_rate", "failure_rate", "horizon"):
            if getattr(self, name) < 0:
                out.append(f"{name} must be >= 0")
        if 0 < self.arrival_rate < 1e-6:
            out.append("arrival_rate must be 0 (all at t=0) or >= 1e-6")
        if 0 < self.failure_rate < 1e-3:
            out.append("failure_rate must be 0 or >= 1e-3")
        for name in ("latency_bound_prob", "migratable_prob"):
            if not 0 <= getattr(self, name) <= 1:
                out.append(f"{name} must be in [0, 1]")
        if self.n_iot + self.n_edge + self.n_cloud + self.n_hpc == 0:
            out.append("topology needs at least one node")
        return out


def synthetic_topology(p: SynthesisParams) -> tuple[list[NodeSpec], list[LinkSpec]]:
    tiers: dict[str, list[NodeSpec]] = {}
    for tier, count in zip(TIERS, (p.n_iot, p.n_edge, p.n_cloud, p.n_hpc)):
        cpu, mem, sto, idle, peak, zone = TIER_DEFAULTS[tier]
        tiers[tier] = [NodeSpec(f"{tier}-{i:02d}", tier, cpu, mem, sto, idle, peak, {"zone": zone})
                       for i in range(count)]
    links: list[LinkSpec] = []
    present = [t for t in TIERS if tiers[t]]
    for lower, upper in zip(present, present[1:]):
        lat, bw = HOP_DEFAULTS[upper]
        ups = tiers[upper]
        if lower == "iot":
            for i, n in enumerate(tiers[lower]):
                links.append(LinkSpec(n.id, ups[i % len(ups)].id, lat, bw))
        else:
            for n in tiers[lower]:
                for u in ups:
                    links.append(LinkSpec(n.id, u.id, lat, bw))
    nodes = [n for t in TIERS for n in tiers[t]]
    return nodes, links


def generate_synthetic(p: SynthesisParams, seed: int, name: Optional[str] = None) -> Scenario:
    """Seeded synthetic scenario over a tiered chain topology."""
    problems = p.issues()
    if problems:
        raise ValueError("; ".join(problems))
    root = SplitMix64(seed)
    arrivals_rng = root.split("arrivals")
    demand_rng = root.split("demands")
    failure_rng = root.split("failures")
    nodes, links = synthetic_topology(p)
    iot = [n.id for n in nodes if n.tier == "iot"]

    timed: list[tuple[int, int, int, ScenarioEvent]] = []
    t = 0.0
    for k in range(p.job_count):
        if p.arrival_rate > 0:
            t += arrivals_rng.exponential(p.arrival_rate / 1000.0)
        at = math.ceil(t)
        source = demand_rng.choice(iot) if iot else None
        data = demand_rng.randint(*p.data_range) if source else 0
        bound = None
        if source is not None and demand_rng.random() < p.latency_bound_prob:
            bound = demand_rng.randint(*p.latency_bound_range)
        job = JobSpec(
            id=f"job-{k:04d}",
            arrival=at,
            cpu_m=demand_rng.randint(*p.cpu_range),
            mem_mib=demand_rng.randint(*p.mem_range),
            storage_gib=demand_rng.randint(*p.storage_range),
            duration_ms=demand_rng.randint(*p.duration_range),
            data_mb=data,
            data_source=source,
            latency_bound_ms=bound,
            migratable=demand_rng.random() < p.migratable_prob,
        )
        timed.append((at, 0, k, JobArrival(at, job)))

    if p.failure_rate > 0 and p.horizon > 0:
        down_until: dict[str, int] = {}
        ft = 0.0
        seq = 0
        while True:
            ft += failure_rng.exponential(p.failure_rate / 3_600_000.0)
            if ft >= p.horizon:
                break
            at = math.ceil(ft)
            node = failure_rng.choice(nodes).id
            downtime = failure_rng.randint(*p.downtime_range)
            if down_until.get(node, -1) >= at:
                continue
            down_until[node] = at + downtime
            timed.append((at, 1, seq, NodeFail(at, node)))
            timed.append((at + downtime, 1, seq + 1, NodeRecover(at + downtime, node)))
            seq += 2

    timed.sort(key=lambda x: x[:3])
    return Scenario(
        name=name or f"synthetic-{seed}",
        seed=seed,
        description="synthetic tiered continuum",
        nodes=tuple(nodes),
        links=tuple(links),
        events=tuple(e for *_, e in timed),
    )


# ---------------------------------------------------------------------------
# fixtures


def fixture_text(name: str) -> str:
    if name not in FIXTURES:
        raise KeyError(f"unknown fixture {name!r}; choose from {', '.join(FIXTURES)}")
    return resources.files(__package__).joinpath("fixtures", f"{name}.json").read_text("utf-8")


def load_fixture(name: str) -> Scenario:
    return parse_scenario(fixture_text(name))


def load_scenario(path) -> Scenario:
    with open(path, encoding="utf-8") as fh:
        return parse_scenario(fh.read())
