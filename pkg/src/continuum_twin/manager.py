"""Live manager: stream-paced scheduling loop over ingested metrics and jobs.

The persisted log is newline-delimited JSON, append-only:

    {"type": "init", "topology": {...}, "scheduler": name}
    {"type": "ingest", "record": <wire event or heartbeat>}
    {"type": "reject", "reason": ..., "line": ...}
    {"type": "tick", "t": ms, "wall": s, "decisions": [...]}
    {"type": "shutdown", "t": ms, "wall": s, "reason": ...}

Replaying ``init`` + ``ingest`` + ``tick`` records rebuilds the twin exactly.
"""

from __future__ import annotations

import json
import logging
import os
import queue
import threading
import time
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Callable, Iterable, Optional, Sequence

from .engine import advance_to, compute_kpis, step
from .scenario import ScenarioError, event_from_dict, link_from_wire, node_from_wire
from .scheduler import Decision, decision_from_dict
from .twin import LinkSpec, NodeSpec, TwinError, TwinState, state_to_dict

log = logging.getLogger(__name__)

DECISION_ACTIONS = ("place", "delay", "migrate", "no_op")


class SinkFailure(RuntimeError):
    pass


class _Replay:
    """Scheduler that returns a fixed decision list once."""

    def __init__(self, name: str, decisions: Sequence[Decision]):
        self.name = name
        self._decisions = list(decisions)

    def decide(self, snapshot):
        return self._decisions


def topology_from_doc(doc: dict) -> tuple[list[NodeSpec], list[LinkSpec]]:
    """Accept a bare topology or a whole scenario document."""
    topo = doc.get("topology", doc)
    nodes = [node_from_wire(n, f"nodes[{i}]") for i, n in enumerate(topo["nodes"])]
    links = [link_from_wire(ln, f"links[{i}]") for i, ln in enumerate(topo["links"])]
    return nodes, links


class LiveManager:
    def __init__(self, nodes: Iterable[NodeSpec], links: Iterable[LinkSpec], scheduler,
                 log_path: Optional[str] = None, sink: Optional[Callable[[dict], None]] = None,
                 sink_retries: int = 3, sink_backoff: float = 0.05, clock=time.time):
        self.nodes = list(nodes)
        self.links = list(links)
        self.state = TwinState(self.nodes, self.links)
        self.scheduler = scheduler
        self.sink = sink
        self.sink_retries = sink_retries
        self.sink_backoff = sink_backoff
        self.wall = clock
        self.decision_records: list[dict] = []
        self.rejections: list[tuple[str, str]] = []
        self.closed = False
        self._lock = threading.Lock()
        self._published = (self.state.snapshot(), 0)
        self._log = None
        if log_path is not None:
            fresh = not os.path.exists(log_path) or os.path.getsize(log_path) == 0
            self._log = open(log_path, "a", encoding="utf-8")
            if fresh:
                self._persist([{"type": "init", "scheduler": self.scheduler_name,
                                "topology": {"nodes": [n.to_dict() for n in self.nodes],
                                             "links": [ln.to_dict() for ln in self.links]}}])

    @property
    def scheduler_name(self) -> str:
        return getattr(self.scheduler, "name", type(self.scheduler).__name__)

    # -- persistence ---------------------------------------------------------

    def _persist(self, records: Sequence[dict]):
        if self._log is None:
            return
        self._log.write("".join(json.dumps(r, separators=(",", ":")) + "\n" for r in records))
        self._log.flush()
        os.fsync(self._log.fileno())

    def _publish(self):
        self._published = (self.state.snapshot(), len(self.state.event_log))

    # -- ingest --------------------------------------------------------------

    def _ingest(self, rec: dict) -> Optional[tuple[str, str]]:
        """Apply one decoded record; returns (reason, message) on rejection."""
        if not isinstance(rec, dict):
            return ("parse", "record must be a JSON object")
        if rec.get("kind") == "heartbeat":
            t = rec.get("t")
            if set(rec) != {"kind", "t"} or not isinstance(t, int) or isinstance(t, bool):
                return ("parse", "heartbeat needs exactly kind and integer t")
            if t < self.state.clock:
                return ("ordering", f"heartbeat {t} before clock {self.state.clock}")
            advance_to(self.state, t)
            return None
        try:
            ev = event_from_dict(rec, "record")
        except ScenarioError as e:
            return ("parse", str(e))
        if ev.time < self.state.clock:
            return ("ordering", f"record at {ev.time} before clock {self.state.clock}")
        if ev.time > self.state.clock:
            # completions due exactly at ev.time run after the event
            advance_to(self.state, ev.time - 1)
        try:
            self.state.apply_event(ev)
        except TwinError as e:
            return ("dangling-id", str(e))
        return None

    def ingest_line(self, line: str) -> tuple[str, Optional[str]]:
        """Apply one wire line: ``("applied", None)`` or ``("rejected", reason)``."""
        with self._lock:
            try:
                rec = json.loads(line)
            except (json.JSONDecodeError, UnicodeDecodeError) as e:
                bad = ("parse", f"invalid JSON: {e}")
            else:
                bad = self._ingest(rec)
            if bad is not None:
                reason, msg = bad
                self.rejections.append((reason, msg))
                log.info("rejected ingest (%s): %s", reason, msg)
                self._persist([{"type": "reject", "reason": reason, "message": msg,
                                "line": line.rstrip("\n")}])
                return ("rejected", reason)
            self._persist([{"type": "ingest", "record": rec}])
            self._publish()
            return ("applied", None)

    # -- scheduling ----------------------------------------------------------

    def _emit(self, rec: dict):
        if self.sink is None:
            return
        delay = self.sink_backoff
        for attempt in range(self.sink_retries + 1):
            try:
                self.sink(rec)
                return
            except OSError as e:
                if attempt == self.sink_retries:
                    raise SinkFailure(f"sink write failed after {attempt + 1} attempts: {e}") from e
                time.sleep(delay)
                delay *= 2

    def _tick(self, scheduler) -> list[dict]:
        advance_to(self.state, self.state.clock)
        first = len(self.state.event_log)
        step(self.state, scheduler)
        name = getattr(scheduler, "name", type(scheduler).__name__)
        out = []
        for rec in self.state.event_log[first:]:
            if rec["actor"] != name or rec["action"] not in DECISION_ACTIONS:
                continue
            d = {"kind": rec["action"]}
            if rec["job"] is not None:
                d["job"] = rec["job"]
            if rec["action"] in ("place", "migrate"):
                d["node"] = rec["node"]
            out.append({"wall": self.wall(), "t": rec["t"], "decision": d,
                        "outcome": rec["outcome"], "scheduler": name})
        return out

    def tick(self) -> list[dict]:
        """One cadence step: snapshot, decide, validate, persist, emit."""
        with self._lock:
            if self.closed:
                raise RuntimeError("manager is closed")
            records = self._tick(self.scheduler)
            self._persist([{"type": "tick", "t": self.state.clock, "wall": self.wall(),
                            "decisions": [r["decision"] for r in records]}])
            self.decision_records.extend(records)
            self._publish()
        try:
            for r in records:
                self._emit(r)
        except SinkFailure as e:
            self.close(f"sink-failure: {e}")
            raise
        return records

    def close(self, reason: str = "stopped"):
        with self._lock:
            if self.closed:
                return
            self.closed = True
            self._persist([{"type": "shutdown", "t": self.state.clock, "wall": self.wall(),
                            "reason": reason}])
            if self._log is not None:
                self._log.close()
                self._log = None

    # -- queries (lock-free; readers see the last published snapshot) --------

    def snapshot_doc(self) -> dict:
        snap, _ = self._published
        return state_to_dict(snap)

    def kpis_doc(self) -> dict:
        snap, n = self._published
        return compute_kpis(self.state.event_log[:n], self.nodes, end=snap.clock).to_dict()

    # -- recovery ------------------------------------------------------------

    @classmethod
    def recover(cls, log_path: str, scheduler, **kwargs) -> "LiveManager":
        """Rebuild from an existing log and keep appending to it.

        A torn trailing line (crash mid-write) is cut off before appending.
        """
        records, good_bytes = read_log(log_path)
        if not records or records[0].get("type") != "init":
            raise ValueError(f"{log_path}: log does not start with an init record")
        with open(log_path, "r+b") as fh:
            fh.truncate(good_bytes)
        nodes, links = topology_from_doc(records[0]["topology"])
        mgr = cls(nodes, links, scheduler, log_path=log_path, **kwargs)
        replay_into(mgr, records[1:])
        return mgr


def read_log(path: str) -> tuple[list[dict], int]:
    """Complete records of a log plus the byte length they occupy."""
    records = []
    good = 0
    with open(path, "rb") as fh:
        data = fh.read()
    pos = 0
    while pos < len(data):
        nl = data.find(b"\n", pos)
        if nl < 0:
            break  # torn tail
        line = data[pos:nl]
        try:
            records.append(json.loads(line))
        except json.JSONDecodeError:
            break
        pos = nl + 1
        good = pos
    return records, good


def replay_into(mgr: LiveManager, records: Iterable[dict]) -> None:
    """Re-apply persisted ingest and tick records without touching the log."""
    for rec in records:
        kind = rec.get("type")
        if kind == "ingest":
            bad = mgr._ingest(rec["record"])
            if bad is not None:
                raise ValueError(f"persisted ingest record no longer applies: {bad}")
        elif kind == "tick":
            decisions = [decision_from_dict(d) for d in rec["decisions"]]
            advance_to(mgr.state, rec["t"])
            mgr.decision_records.extend(mgr._tick(_Replay(mgr.scheduler_name, decisions)))
    mgr._publish()


# ---------------------------------------------------------------------------
# live loop


_EOF = object()


def run_live_loop(mgr: LiveManager, source: Iterable[str], cadence_ms: int = 1000,
                  stop: Optional[threading.Event] = None) -> str:
    """Ingest continuously, tick every ``cadence_ms`` wall ms until EOF or stop.

    Returns the shutdown reason.
    """
    stop = stop or threading.Event()
    lines: "queue.Queue" = queue.Queue()

    def pump():
        try:
            for line in source:
                lines.put(line)
        finally:
            lines.put(_EOF)

    threading.Thread(target=pump, daemon=True).start()
    eof = False
    reason = "stopped"
    try:
        while not stop.is_set():
            deadline = time.monotonic() + cadence_ms / 1000.0
            while not eof:
                left = deadline - time.monotonic()
                if left <= 0:
                    break
                try:
                    item = lines.get(timeout=left)
                except queue.Empty:
                    break
                if item is _EOF:
                    eof = True
                elif item.strip():
                    mgr.ingest_line(item)
            mgr.tick()
            if eof:
                reason = "end-of-stream"
                break
    except SinkFailure as e:
        return f"sink-failure: {e}"
    mgr.close(reason)
    return reason


# ---------------------------------------------------------------------------
# query API


class _Handler(BaseHTTPRequestHandler):
    manager: Optional[LiveManager] = None

    def _send(self, code: int, body: dict):
        data = (json.dumps(body) + "\n").encode("utf-8")
        self.send_response(code)
        self.send_header("Content-Type", "application/json; charset=utf-8")
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)

    def do_GET(self):
        path = self.path.split("?", 1)[0]
        if path not in ("/snapshot", "/kpis"):
            self._send(404, {"error": f"unknown path {path}"})
            return
        mgr = self.server.manager
        if mgr is None:
            self._send(503, {"error": "not initialized"})
            return
        self._send(200, mgr.snapshot_doc() if path == "/snapshot" else mgr.kpis_doc())

    def log_message(self, fmt, *args):
        log.debug("http: " + fmt, *args)


class QueryServer(ThreadingHTTPServer):
    daemon_threads = True

    def __init__(self, address, manager: Optional[LiveManager] = None):
        super().__init__(address, _Handler)
        self.manager = manager

    def start(self) -> threading.Thread:
        th = threading.Thread(target=self.serve_forever, daemon=True)
        th.start()
        return th
