"""Digital-twin state model of a device-edge-cloud-HPC continuum.

The twin holds nodes, links and jobs in integer virtual milliseconds. All
mutations go through a single :class:`TwinState` owner; schedulers see frozen
:class:`Snapshot` copies.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field, replace
from fractions import Fraction
from types import MappingProxyType
from typing import ClassVar, Iterable, Mapping, Optional, Union

TIERS = ("iot", "edge", "cloud", "hpc")
RESOURCES = ("cpu_m", "mem_mib", "storage_gib")

QUEUED = "queued"
TRANSFERRING = "transferring"
RUNNING = "running"
COMPLETED = "completed"
FAILED = "failed"
ACTIVE_PHASES = (TRANSFERRING, RUNNING)


class TwinError(Exception):
    """Base class for rejected twin operations."""

    code = "twin-error"


class RejectedEvent(TwinError):
    code = "dangling-id"


class OrderingError(TwinError):
    code = "ordering"


class UnknownId(TwinError):
    code = "unknown-id"


class CapacityExceeded(TwinError):
    code = "capacity-exceeded"


class NodeDown(TwinError):
    code = "node-down"


class Unreachable(TwinError):
    code = "unreachable"


class NotQueued(TwinError):
    code = "not-queued"


class NotActive(TwinError):
    code = "not-active"


class ConstraintViolation(TwinError):
    """Tier/zone admission constraint or strict latency bound not met."""

    code = "constraint"


# ---------------------------------------------------------------------------
# specs


@dataclass(frozen=True)
class NodeSpec:
    id: str
    tier: str
    cpu_m: float
    mem_mib: float
    storage_gib: float
    power_idle_w: float
    power_max_w: float
    labels: Mapping[str, str] = field(default_factory=dict)

    def issues(self) -> list[tuple[str, str]]:
        out = []
        if self.tier not in TIERS:
            out.append(("invalid-value", f"node {self.id}: unknown tier {self.tier!r}"))
        if min(self.cpu_m, self.mem_mib, self.storage_gib) < 0:
            out.append(("invalid-value", f"node {self.id}: negative capacity"))
        if not self.power_max_w >= self.power_idle_w >= 0:
            out.append(("invalid-value", f"node {self.id}: need power_max_w >= power_idle_w >= 0"))
        return out

    @property
    def zone(self) -> Optional[str]:
        return self.labels.get("zone")

    def capacity(self, resource: str) -> float:
        return getattr(self, resource)

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "tier": self.tier,
            "cpu_m": self.cpu_m,
            "mem_mib": self.mem_mib,
            "storage_gib": self.storage_gib,
            "power_idle_w": self.power_idle_w,
            "power_max_w": self.power_max_w,
            "labels": dict(sorted(self.labels.items())),
        }


@dataclass(frozen=True)
class LinkSpec:
    a: str
    b: str
    latency_ms: int
    bandwidth_mbps: float
    up: bool = True

    def issues(self) -> list[tuple[str, str]]:
        out = []
        if self.a == self.b:
            out.append(("self-link", f"self-link on {self.a}"))
        if self.latency_ms < 0:
            out.append(("invalid-value", f"link {self.a}-{self.b}: latency_ms must be >= 0"))
        if not self.bandwidth_mbps > 0:
            out.append(("invalid-value", f"link {self.a}-{self.b}: bandwidth_mbps must be > 0"))
        return out

    @property
    def key(self) -> tuple[str, str]:
        return link_key(self.a, self.b)

    def to_dict(self) -> dict:
        return {
            "a": self.a,
            "b": self.b,
            "latency_ms": self.latency_ms,
            "bandwidth_mbps": self.bandwidth_mbps,
            "up": self.up,
        }


def link_key(a: str, b: str) -> tuple[str, str]:
    return (a, b) if a <= b else (b, a)


@dataclass(frozen=True)
class JobSpec:
    id: str
    arrival: int
    cpu_m: float
    mem_mib: float
    storage_gib: float
    duration_ms: int
    data_mb: float = 0
    data_source: Optional[str] = None
    latency_bound_ms: Optional[int] = None
    allowed_tiers: frozenset = frozenset()
    allowed_zones: frozenset = frozenset()
    priority: int = 0
    migratable: bool = True

    def issues(self) -> list[tuple[str, str]]:
        out = []
        if min(self.cpu_m, self.mem_mib, self.storage_gib, self.data_mb) < 0:
            out.append(("invalid-value", f"job {self.id}: negative demand"))
        if self.duration_ms <= 0:
            out.append(("invalid-value", f"job {self.id}: duration_ms must be > 0"))
        if self.latency_bound_ms is not None and self.data_source is None:
            out.append(("latency-bound-without-source",
                        f"job {self.id}: latency_bound_ms requires data_source"))
        if self.latency_bound_ms is not None and self.latency_bound_ms < 0:
            out.append(("invalid-value", f"job {self.id}: negative latency_bound_ms"))
        if self.priority < 0:
            out.append(("invalid-value", f"job {self.id}: priority must be >= 0"))
        bad_tiers = set(self.allowed_tiers) - set(TIERS)
        if bad_tiers:
            out.append(("invalid-value", f"job {self.id}: unknown tiers {sorted(bad_tiers)}"))
        return out

    def demand(self, resource: str) -> float:
        return getattr(self, resource)

    def to_dict(self) -> dict:
        """Wire payload, without the arrival time (carried by the event)."""
        return {
            "id": self.id,
            "cpu_m": self.cpu_m,
            "mem_mib": self.mem_mib,
            "storage_gib": self.storage_gib,
            "duration_ms": self.duration_ms,
            "data_mb": self.data_mb,
            "data_source": self.data_source,
            "latency_bound_ms": self.latency_bound_ms,
            "allowed_tiers": sorted(self.allowed_tiers),
            "allowed_zones": sorted(self.allowed_zones),
            "priority": self.priority,
            "migratable": self.migratable,
        }

    @classmethod
    def from_dict(cls, d: Mapping, arrival: int) -> "JobSpec":
        return cls(
            id=d["id"],
            arrival=arrival,
            cpu_m=d["cpu_m"],
            mem_mib=d["mem_mib"],
            storage_gib=d["storage_gib"],
            duration_ms=d["duration_ms"],
            data_mb=d.get("data_mb", 0),
            data_source=d.get("data_source"),
            latency_bound_ms=d.get("latency_bound_ms"),
            allowed_tiers=frozenset(d.get("allowed_tiers", ())),
            allowed_zones=frozenset(d.get("allowed_zones", ())),
            priority=d.get("priority", 0),
            migratable=d.get("migratable", True),
        )


# ---------------------------------------------------------------------------
# events


@dataclass(frozen=True)
class JobArrival:
    time: int
    job: JobSpec
    kind: ClassVar[str] = "job_arrival"


@dataclass(frozen=True)
class NodeFail:
    time: int
    node: str
    kind: ClassVar[str] = "node_fail"


@dataclass(frozen=True)
class NodeRecover:
    time: int
    node: str
    kind: ClassVar[str] = "node_recover"


@dataclass(frozen=True)
class LinkChange:
    time: int
    a: str
    b: str
    latency_ms: int
    bandwidth_mbps: float
    up: bool = True
    kind: ClassVar[str] = "link_change"


@dataclass(frozen=True)
class MetricUpdate:
    time: int
    node: str
    background_load: float
    kind: ClassVar[str] = "metric_update"


ScenarioEvent = Union[JobArrival, NodeFail, NodeRecover, LinkChange, MetricUpdate]


# ---------------------------------------------------------------------------
# mutable per-entity state


@dataclass
class NodeState:
    spec: NodeSpec
    up: bool = True
    background_load: float = 0.0
    cpu_m: float = 0
    mem_mib: float = 0
    storage_gib: float = 0

    def used(self, resource: str) -> float:
        return getattr(self, resource)

    def free(self, resource: str) -> float:
        return self.spec.capacity(resource) - getattr(self, resource)

    def fits(self, job: JobSpec) -> bool:
        s = self.spec
        return (
            self.cpu_m + job.cpu_m <= s.cpu_m
            and self.mem_mib + job.mem_mib <= s.mem_mib
            and self.storage_gib + job.storage_gib <= s.storage_gib
        )

    def utilization(self, extra: Optional[JobSpec] = None, sign: int = 1) -> float:
        """max resource fraction plus background load, clamped to [0, 1]."""
        u = 0.0
        s = self.spec
        for r in RESOURCES:
            cap = s.capacity(r)
            if cap > 0:
                used = getattr(self, r) + (sign * extra.demand(r) if extra else 0)
                u = max(u, used / cap)
        return min(1.0, max(0.0, u + self.background_load))

    def power(self) -> float:
        return node_power(self.spec, self.utilization()) if self.up else 0.0


@dataclass
class JobState:
    spec: JobSpec
    phase: str = QUEUED
    node: Optional[str] = None
    placed_at: Optional[int] = None
    transfer_ends: Optional[int] = None
    run_started: Optional[int] = None
    remaining_work: int = 0
    restarts: int = 0
    violation: bool = False
    finished_at: Optional[int] = None

    def __post_init__(self):
        if self.phase == QUEUED and self.remaining_work == 0:
            self.remaining_work = self.spec.duration_ms

    @property
    def id(self) -> str:
        return self.spec.id

    def remaining_at(self, t: int) -> int:
        if self.phase == RUNNING:
            return max(0, self.remaining_work - (t - self.run_started))
        return self.remaining_work

    def next_transition(self) -> Optional[int]:
        if self.phase == TRANSFERRING:
            return self.transfer_ends
        if self.phase == RUNNING:
            return self.run_started + self.remaining_work
        return None

    def to_dict(self) -> dict:
        d = {"arrival": self.spec.arrival, **self.spec.to_dict()}
        d.update(
            phase=self.phase,
            node=self.node,
            placed_at=self.placed_at,
            transfer_ends=self.transfer_ends,
            run_started=self.run_started,
            remaining_work=self.remaining_work,
            restarts=self.restarts,
            violation=self.violation,
            finished_at=self.finished_at,
        )
        return d


def node_power(node: NodeSpec, utilization: float) -> float:
    """Linear idle-to-max power model."""
    return node.power_idle_w + (node.power_max_w - node.power_idle_w) * utilization


# ---------------------------------------------------------------------------
# routing


@dataclass(frozen=True)
class Route:
    latency_ms: int
    path: tuple
    bottleneck_mbps: float  # inf for a == b


class Network:
    """Immutable routing view over up nodes and up links.

    Among minimum-latency paths the lexicographically smallest node-id
    sequence wins. Down nodes neither terminate nor relay traffic.
    """

    def __init__(self, up_nodes: Iterable[str], links: Iterable[LinkSpec]):
        self.up_nodes = frozenset(up_nodes)
        adj: dict[str, list] = {n: [] for n in self.up_nodes}
        for ln in links:
            if ln.up and ln.a in self.up_nodes and ln.b in self.up_nodes:
                adj[ln.a].append((ln.b, ln.latency_ms, ln.bandwidth_mbps))
                adj[ln.b].append((ln.a, ln.latency_ms, ln.bandwidth_mbps))
        for v in adj.values():
            v.sort()
        self._adj = adj
        self._cache: dict[str, dict[str, Route]] = {}

    def routes_from(self, src: str) -> dict[str, Route]:
        hit = self._cache.get(src)
        if hit is not None:
            return hit
        out: dict[str, Route] = {}
        if src in self.up_nodes:
            heap = [(0, (src,), math.inf)]
            while heap:
                dist, path, bn = heapq.heappop(heap)
                u = path[-1]
                if u in out:
                    continue
                out[u] = Route(dist, path, bn)
                for v, lat, bw in self._adj[u]:
                    if v not in out:
                        heapq.heappush(heap, (dist + lat, path + (v,), min(bn, bw)))
        self._cache[src] = out
        return out

    def route(self, a: str, b: str) -> Optional[Route]:
        if a == b:
            return Route(0, (a,), math.inf)
        return self.routes_from(a).get(b)


def transfer_ms(route: Route, size_mb: float) -> int:
    """Latency plus serialization delay over the path bottleneck, in whole ms."""
    if size_mb == 0 or math.isinf(route.bottleneck_mbps):
        return route.latency_ms
    ser = Fraction(size_mb) * 8000 / Fraction(route.bottleneck_mbps)
    return route.latency_ms + math.ceil(ser)


# ---------------------------------------------------------------------------
# shared read-only queries


class _TwinView:
    clock: int
    nodes: Mapping[str, NodeState]

    @property
    def network(self) -> Network:  # pragma: no cover - overridden
        raise NotImplementedError

    def _node(self, node_id: str) -> NodeState:
        try:
            return self.nodes[node_id]
        except KeyError:
            raise UnknownId(f"unknown node {node_id!r}") from None

    def path_latency(self, a: str, b: str) -> Optional[int]:
        """Minimum latency over up links; ``None`` when unreachable."""
        self._node(a)
        self._node(b)
        r = self.network.route(a, b)
        return None if r is None else r.latency_ms

    def path(self, a: str, b: str) -> Optional[tuple]:
        self._node(a)
        self._node(b)
        r = self.network.route(a, b)
        return None if r is None else r.path

    def transfer_time(self, a: str, b: str, size_mb: float) -> Optional[int]:
        self._node(a)
        self._node(b)
        r = self.network.route(a, b)
        return None if r is None else transfer_ms(r, size_mb)

    def resolve_source(self, job: JobSpec, node_id: str) -> Optional[str]:
        """Concrete node holding the job's data as seen from ``node_id``.

        A node id resolves to itself; a zone label resolves to the closest
        up node in that zone (ties -> lowest id). ``None`` when no candidate
        is reachable.
        """
        src = job.data_source
        if src is None:
            return None
        if src in self.nodes:
            return src if self.network.route(src, node_id) is not None else None
        best = None
        for nid in sorted(self.nodes):
            ns = self.nodes[nid]
            if ns.spec.zone != src or not ns.up:
                continue
            r = self.network.route(nid, node_id)
            if r is not None and (best is None or r.latency_ms < best[0]):
                best = (r.latency_ms, nid)
        return None if best is None else best[1]

    def needs_source(self, job: JobSpec) -> bool:
        return job.data_source is not None and (
            job.data_mb > 0 or job.latency_bound_ms is not None
        )

    def admits(self, job: JobSpec, node: NodeSpec) -> bool:
        if job.allowed_tiers and node.tier not in job.allowed_tiers:
            return False
        if job.allowed_zones and node.zone not in job.allowed_zones:
            return False
        return True

    def check_placement(self, job: JobSpec, node_id: str, ignore_own: bool = False):
        """Validate a placement; returns (source node or None, violation flag).

        ``ignore_own`` treats the job's current allocation as already free
        (used when scoring a running job on its own node).
        """
        ns = self._node(node_id)
        if not ns.up:
            raise NodeDown(node_id)
        if not self.admits(job, ns.spec):
            raise ConstraintViolation(f"{job.id} not admitted on {node_id}")
        if not ignore_own and not ns.fits(job):
            raise CapacityExceeded(f"{job.id} on {node_id}")
        src = None
        violation = False
        if self.needs_source(job):
            src = self.resolve_source(job, node_id)
            if src is None:
                raise Unreachable(f"data source {job.data_source} of {job.id}")
            if job.latency_bound_ms is not None:
                violation = self.network.route(node_id, src).latency_ms > job.latency_bound_ms
        return src, violation

    def live_jobs(self) -> Iterable[JobState]:
        return (j for j in self.jobs.values() if j.phase not in (COMPLETED, FAILED))


# ---------------------------------------------------------------------------
# snapshot


class Snapshot(_TwinView):
    """Frozen copy of the twin: topology, queued and active jobs."""

    __slots__ = ("clock", "nodes", "links", "jobs", "_network")

    def __init__(self, clock, nodes, links, jobs, network):
        object.__setattr__(self, "clock", clock)
        object.__setattr__(self, "nodes", MappingProxyType(nodes))
        object.__setattr__(self, "links", MappingProxyType(links))
        object.__setattr__(self, "jobs", MappingProxyType(jobs))
        object.__setattr__(self, "_network", network)

    def __setattr__(self, name, value):
        raise AttributeError("Snapshot is immutable")

    @property
    def network(self) -> Network:
        n = self._network
        if n is None:
            n = Network((k for k, v in self.nodes.items() if v.up), self.links.values())
            object.__setattr__(self, "_network", n)
        return n

    def queued(self) -> list[JobState]:
        return [j for j in self.jobs.values() if j.phase == QUEUED]

    def to_dict(self) -> dict:
        return state_to_dict(self)


# ---------------------------------------------------------------------------
# live state


class TwinState(_TwinView):
    """Single-writer twin. Mutating methods act in place."""

    def __init__(self, nodes: Iterable[NodeSpec], links: Iterable[LinkSpec] = (), clock: int = 0):
        self.clock = clock
        self.nodes: dict[str, NodeState] = {}
        for spec in sorted(nodes, key=lambda n: n.id):
            if spec.id in self.nodes:
                raise ValueError(f"duplicate node id {spec.id}")
            if spec.issues():
                raise ValueError(spec.issues()[0][1])
            self.nodes[spec.id] = NodeState(spec)
        self.links: dict[tuple, LinkSpec] = {}
        for ln in links:
            if ln.a not in self.nodes or ln.b not in self.nodes:
                raise ValueError(f"link {ln.a}-{ln.b} references unknown node")
            if ln.key in self.links:
                raise ValueError(f"duplicate link {ln.a}-{ln.b}")
            if ln.issues():
                raise ValueError(ln.issues()[0][1])
            self.links[ln.key] = ln
        self.links = dict(sorted(self.links.items()))
        self.jobs: dict[str, JobState] = {}
        # queued + active jobs, arrival order
        self.live: dict[str, JobState] = {}
        self.event_log: list[dict] = []
        self._network: Optional[Network] = None

    # -- plumbing ------------------------------------------------------------

    @property
    def network(self) -> Network:
        if self._network is None:
            self._network = Network(
                (k for k, v in self.nodes.items() if v.up), self.links.values()
            )
        return self._network

    def log(self, actor, action, job=None, node=None, outcome="applied", data=None) -> dict:
        rec = {"t": self.clock, "actor": actor, "action": action, "job": job, "node": node,
               "outcome": outcome}
        if data is not None:
            rec["data"] = data
        self.event_log.append(rec)
        return rec

    def advance(self, t: int):
        if t < self.clock:
            raise OrderingError(f"time {t} earlier than clock {self.clock}")
        self.clock = t

    def _allocate(self, job: JobSpec, node_id: str, sign: int):
        ns = self.nodes[node_id]
        ns.cpu_m += sign * job.cpu_m
        ns.mem_mib += sign * job.mem_mib
        ns.storage_gib += sign * job.storage_gib

    def _job(self, job_id: str) -> JobState:
        try:
            return self.jobs[job_id]
        except KeyError:
            raise UnknownId(f"unknown job {job_id!r}") from None

    # -- events --------------------------------------------------------------

    def apply_event(self, ev: ScenarioEvent) -> None:
        if ev.time < self.clock:
            raise OrderingError(f"event at {ev.time} earlier than clock {self.clock}")
        # validate before touching the clock so rejected events leave no trace
        if isinstance(ev, JobArrival):
            if ev.job.id in self.jobs:
                raise RejectedEvent(f"duplicate job id {ev.job.id}")
            if ev.job.issues():
                raise RejectedEvent(ev.job.issues()[0][1])
            if ev.time != ev.job.arrival:
                raise RejectedEvent(f"job {ev.job.id}: arrival {ev.job.arrival} != event time {ev.time}")
        elif isinstance(ev, LinkChange):
            if link_key(ev.a, ev.b) not in self.links:
                raise RejectedEvent(f"unknown link {ev.a}-{ev.b}")
            if ev.latency_ms < 0 or not ev.bandwidth_mbps > 0:
                raise RejectedEvent(f"link {ev.a}-{ev.b}: invalid latency/bandwidth")
        elif isinstance(ev, MetricUpdate):
            if ev.node not in self.nodes:
                raise RejectedEvent(f"unknown node {ev.node}")
            if not 0 <= ev.background_load <= 1:
                raise RejectedEvent(f"background_load {ev.background_load} out of [0, 1]")
        elif ev.node not in self.nodes:
            raise RejectedEvent(f"unknown node {ev.node}")
        self.clock = ev.time

        if isinstance(ev, JobArrival):
            js = JobState(ev.job)
            self.jobs[ev.job.id] = js
            self.live[ev.job.id] = js
            self.log("scenario", "job_arrival", job=ev.job.id, data=ev.job.to_dict())
        elif isinstance(ev, NodeFail):
            self.log("scenario", "node_fail", node=ev.node)
            self._fail_node(ev.node)
        elif isinstance(ev, NodeRecover):
            self.nodes[ev.node].up = True
            self._network = None
            self.log("scenario", "node_recover", node=ev.node)
        elif isinstance(ev, LinkChange):
            key = link_key(ev.a, ev.b)
            old = self.links[key]
            self.links[key] = replace(old, latency_ms=ev.latency_ms,
                                      bandwidth_mbps=ev.bandwidth_mbps, up=ev.up)
            self._network = None
            self.log("scenario", "link_change", data={
                "a": old.a, "b": old.b, "latency_ms": ev.latency_ms,
                "bandwidth_mbps": ev.bandwidth_mbps, "up": ev.up})
        elif isinstance(ev, MetricUpdate):
            self.nodes[ev.node].background_load = ev.background_load
            self.log("scenario", "metric_update", node=ev.node,
                     data={"background_load": ev.background_load})
        else:  # pragma: no cover
            raise TypeError(f"not a scenario event: {ev!r}")

    def _fail_node(self, node_id: str):
        ns = self.nodes[node_id]
        ns.up = False
        self._network = None
        for js in list(self.live.values()):
            if js.node != node_id or js.phase not in ACTIVE_PHASES:
                continue
            if js.spec.migratable:
                self._allocate(js.spec, node_id, -1)
                js.phase = QUEUED
                js.node = None
                js.placed_at = js.transfer_ends = js.run_started = None
                js.remaining_work = js.spec.duration_ms
                js.restarts += 1
                js.violation = False
                self.log("twin", "evict", job=js.id, node=node_id, outcome="requeued")
            else:
                self.release_job(js.id, FAILED)

    # -- decisions -----------------------------------------------------------

    def _start(self, js: JobState, node_id: str, src: Optional[str]) -> int:
        """Enter transferring or running on ``node_id``; returns transfer ms."""
        xfer = 0
        if src is not None and js.spec.data_mb > 0:
            xfer = transfer_ms(self.network.route(src, node_id), js.spec.data_mb)
        js.node = node_id
        if xfer > 0:
            js.phase = TRANSFERRING
            js.transfer_ends = self.clock + xfer
            js.run_started = None
        else:
            js.phase = RUNNING
            js.transfer_ends = None
            js.run_started = self.clock
        return xfer

    def place_job(self, job_id: str, node_id: str, actor: str = "scheduler",
                  strict_latency: bool = False) -> JobState:
        js = self._job(job_id)
        if js.phase != QUEUED:
            raise NotQueued(job_id)
        src, violation = self.check_placement(js.spec, node_id)
        if strict_latency and violation:
            raise ConstraintViolation(f"{job_id} would violate its latency bound on {node_id}")
        self._allocate(js.spec, node_id, +1)
        js.placed_at = self.clock
        js.violation = violation
        xfer = self._start(js, node_id, src)
        self.log(actor, "place", job=job_id, node=node_id,
                 data={"violation": violation, "transfer_ms": xfer})
        return js

    def migrate_job(self, job_id: str, node_id: str, actor: str = "scheduler",
                    strict_latency: bool = False) -> JobState:
        """Move a running job; progress is kept and data is re-shipped from the old node."""
        js = self._job(job_id)
        if js.phase != RUNNING:
            raise NotActive(f"{job_id} is not running")
        if not js.spec.migratable:
            raise ConstraintViolation(f"{job_id} is not migratable")
        old = js.node
        if node_id == old:
            raise ConstraintViolation(f"{job_id} already on {node_id}")
        src, violation = self.check_placement(js.spec, node_id)
        if strict_latency and violation:
            raise ConstraintViolation(f"{job_id} would violate its latency bound on {node_id}")
        r = self.network.route(old, node_id)
        if r is None:
            raise Unreachable(f"{old} -> {node_id}")
        xfer = transfer_ms(r, js.spec.data_mb)
        js.remaining_work = js.remaining_at(self.clock)
        self._allocate(js.spec, old, -1)
        self._allocate(js.spec, node_id, +1)
        js.node = node_id
        js.placed_at = self.clock
        js.violation = violation
        if xfer > 0:
            js.phase = TRANSFERRING
            js.transfer_ends = self.clock + xfer
            js.run_started = None
        else:
            js.run_started = self.clock
        self.log(actor, "migrate", job=job_id, node=node_id,
                 data={"from": old, "violation": violation, "transfer_ms": xfer})
        return js

    def start_running(self, job_id: str) -> None:
        js = self._job(job_id)
        if js.phase != TRANSFERRING:
            raise NotActive(f"{job_id} is not transferring")
        js.phase = RUNNING
        js.run_started = self.clock
        js.transfer_ends = None
        self.log("twin", "start", job=job_id, node=js.node)

    def release_job(self, job_id: str, outcome: str) -> None:
        if outcome not in (COMPLETED, FAILED):
            raise ValueError(f"outcome must be completed or failed, got {outcome!r}")
        js = self._job(job_id)
        if js.phase not in ACTIVE_PHASES:
            raise NotActive(job_id)
        self._allocate(js.spec, js.node, -1)
        if outcome == COMPLETED:
            js.remaining_work = 0
        js.phase = outcome
        js.finished_at = self.clock
        js.run_started = js.transfer_ends = None
        del self.live[job_id]
        self.log("twin", "release", job=job_id, node=js.node, outcome=outcome)

    # -- queries -------------------------------------------------------------

    def active(self) -> list[JobState]:
        return [j for j in self.live.values() if j.phase in ACTIVE_PHASES]

    def queued(self) -> list[JobState]:
        return [j for j in self.live.values() if j.phase == QUEUED]

    def capacity_violations(self) -> list[str]:
        """Recompute allocations from jobs and compare with capacities."""
        used = {n: dict.fromkeys(RESOURCES, 0) for n in self.nodes}
        for js in self.live.values():
            if js.phase in ACTIVE_PHASES:
                for r in RESOURCES:
                    used[js.node][r] += js.spec.demand(r)
        bad = []
        for nid, ns in self.nodes.items():
            for r in RESOURCES:
                if ns.up and used[nid][r] > ns.spec.capacity(r):
                    bad.append(f"{nid}.{r}: {used[nid][r]} > {ns.spec.capacity(r)}")
                if used[nid][r] != ns.used(r):
                    bad.append(f"{nid}.{r}: bookkeeping {ns.used(r)} != {used[nid][r]}")
        for js in self.live.values():
            if js.phase in ACTIVE_PHASES and not self.nodes[js.node].up:
                bad.append(f"{js.id} active on down node {js.node}")
        return bad

    def snapshot(self) -> Snapshot:
        return Snapshot(
            self.clock,
            {k: replace(v) for k, v in self.nodes.items()},
            dict(self.links),
            {k: replace(v) for k, v in self.live.items()},
            self._network,
        )

    def clone(self) -> "TwinState":
        other = TwinState.__new__(TwinState)
        other.clock = self.clock
        other.nodes = {k: replace(v) for k, v in self.nodes.items()}
        other.links = dict(self.links)
        other.jobs = {k: replace(v) for k, v in self.jobs.items()}
        other.live = {k: other.jobs[k] for k in self.live}
        other.event_log = [dict(r) for r in self.event_log]
        other._network = self._network
        return other

    def to_dict(self) -> dict:
        return state_to_dict(self)


# ---------------------------------------------------------------------------
# serialization


def state_to_dict(view: _TwinView) -> dict:
    return {
        "clock": view.clock,
        "nodes": [
            {**ns.spec.to_dict(), "up": ns.up, "background_load": ns.background_load}
            for ns in view.nodes.values()
        ],
        "links": [ln.to_dict() for ln in view.links.values()],
        "jobs": [js.to_dict() for js in view.jobs.values()],
    }


_NODE_FIELDS = ("id", "tier", "cpu_m", "mem_mib", "storage_gib", "power_idle_w", "power_max_w")


def node_from_dict(d: Mapping) -> NodeSpec:
    return NodeSpec(**{k: d[k] for k in _NODE_FIELDS}, labels=dict(d.get("labels", {})))


def link_from_dict(d: Mapping) -> LinkSpec:
    return LinkSpec(d["a"], d["b"], d["latency_ms"], d["bandwidth_mbps"], d.get("up", True))


def state_from_dict(d: Mapping) -> TwinState:
    """Rebuild a live twin from :func:`state_to_dict` output (event log empty)."""
    st = TwinState([node_from_dict(n) for n in d["nodes"]],
                   [link_from_dict(ln) for ln in d["links"]], clock=d["clock"])
    for n in d["nodes"]:
        ns = st.nodes[n["id"]]
        ns.up = n.get("up", True)
        ns.background_load = n.get("background_load", 0.0)
    for jd in d.get("jobs", []):
        js = JobState(
            JobSpec.from_dict(jd, jd["arrival"]),
            phase=jd["phase"],
            node=jd["node"],
            placed_at=jd["placed_at"],
            transfer_ends=jd["transfer_ends"],
            run_started=jd["run_started"],
            remaining_work=jd["remaining_work"],
            restarts=jd["restarts"],
            violation=jd["violation"],
            finished_at=jd["finished_at"],
        )
        st.jobs[js.id] = js
        if js.phase not in (COMPLETED, FAILED):
            st.live[js.id] = js
        if js.phase in ACTIVE_PHASES:
            st._allocate(js.spec, js.node, +1)
    return st
