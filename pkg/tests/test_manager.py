import json
import os
import signal
import subprocess
import sys
import threading
import time
import urllib.error
import urllib.request

import pytest

from continuum_twin.engine import KPIReport, advance_to
from continuum_twin.manager import (
    LiveManager,
    QueryServer,
    SinkFailure,
    read_log,
    run_live_loop,
)
from continuum_twin.scheduler import FirstFit
from continuum_twin.twin import LinkSpec, NodeSpec, state_to_dict

NODES = [NodeSpec("cam", "iot", 500, 512, 8, 3.0, 6.0, {"zone": "site"}),
         NodeSpec("edge", "edge", 4000, 8192, 64, 30.0, 90.0, {"zone": "site"})]
LINKS = [LinkSpec("cam", "edge", 5, 100.0)]
TOPOLOGY = {"nodes": [n.to_dict() for n in NODES], "links": [ln.to_dict() for ln in LINKS]}


def arrival(t, jid, dur=5000, cpu=1000):
    return json.dumps({"t": t, "kind": "job_arrival", "id": jid, "cpu_m": cpu, "mem_mib": 256,
                       "storage_gib": 1, "duration_ms": dur, "data_mb": 1, "data_source": "cam"})


def manager(**kw):
    return LiveManager(NODES, LINKS, FirstFit(), clock=lambda: 0.0, **kw)


def test_metric_update_applied():
    m = manager()
    line = json.dumps({"t": 10, "kind": "metric_update", "node": "edge", "background_load": 0.4})
    assert m.ingest_line(line) == ("applied", None)
    assert m.state.nodes["edge"].background_load == 0.4 and m.state.clock == 10


def test_stale_and_truncated_lines_rejected():
    m = manager()
    m.ingest_line(json.dumps({"kind": "heartbeat", "t": 100}))
    before = state_to_dict(m.state)
    assert m.ingest_line(arrival(50, "late")) == ("rejected", "ordering")
    assert m.ingest_line(json.dumps({"kind": "heartbeat", "t": 99})) == ("rejected", "ordering")
    assert m.ingest_line(arrival(120, "j")[:30]) == ("rejected", "parse")
    assert state_to_dict(m.state) == before
    assert m.ingest_line(json.dumps({"t": 130, "kind": "node_fail", "node": "ghost"})) == ("rejected", "dangling-id")
    assert m.ingest_line(arrival(140, "ok")) == ("applied", None)
    assert [r for r, _ in m.rejections] == ["ordering", "ordering", "parse", "dangling-id"]


def test_tick_emits_place_record():
    out = []
    m = manager(sink=out.append)
    assert m.tick() == []
    m.ingest_line(arrival(0, "j1"))
    recs = m.tick()
    assert recs == out
    assert recs == [{"wall": 0.0, "t": 0, "decision": {"kind": "place", "job": "j1", "node": "edge"},
                     "outcome": "applied", "scheduler": "first_fit"}]


def test_heartbeat_drives_completions():
    m = manager()
    m.ingest_line(arrival(0, "j1", dur=1000))
    m.tick()
    m.ingest_line(json.dumps({"kind": "heartbeat", "t": 5000}))
    assert m.state.jobs["j1"].phase == "completed"
    kpis = m.kpis_doc()
    assert kpis["jobs_completed"] == 1 and kpis["horizon_ms"] == 5000


def test_sink_failure_shuts_down_cleanly(tmp_path):
    calls = []

    def broken(rec):
        calls.append(rec)
        raise OSError("pipe closed")

    log_path = tmp_path / "live.ndjson"
    m = manager(sink=broken, sink_retries=2, sink_backoff=0.001, log_path=str(log_path))
    m.ingest_line(arrival(0, "j1"))
    with pytest.raises(SinkFailure):
        m.tick()
    assert len(calls) == 3 and m.closed
    last = json.loads(log_path.read_text().splitlines()[-1])
    assert last["type"] == "shutdown" and last["reason"].startswith("sink-failure")


def test_live_loop_until_end_of_stream(tmp_path):
    out = []
    m = manager(sink=out.append, log_path=str(tmp_path / "l.ndjson"))
    lines = [arrival(0, "a") + "\n", "garbage\n", arrival(10, "b") + "\n"]
    assert run_live_loop(m, iter(lines), cadence_ms=20) == "end-of-stream"
    assert {r["decision"]["job"] for r in out} == {"a", "b"}
    records, _ = read_log(str(tmp_path / "l.ndjson"))
    assert [r["type"] for r in records][0] == "init"
    assert records[-1] == {"type": "shutdown", "t": 10, "wall": 0.0, "reason": "end-of-stream"}


def reference_replay(records):
    """Rebuild from ingest records while re-deciding every tick with the live scheduler."""
    ref = manager()
    for rec in records:
        if rec["type"] == "ingest":
            assert ref.ingest_line(json.dumps(rec["record"]))[0] == "applied"
        elif rec["type"] == "tick":
            advance_to(ref.state, rec["t"])
            got = [r["decision"] for r in ref.tick()]
            assert got == rec["decisions"]
    return ref


def test_recover_replays_log_and_cuts_torn_tail(tmp_path):
    path = tmp_path / "live.ndjson"
    m = manager(log_path=str(path))
    for k in range(6):
        m.ingest_line(arrival(k * 1000, f"j{k}", dur=2500))
        m.tick()
    m.ingest_line(json.dumps({"kind": "heartbeat", "t": 7000}))
    expect = state_to_dict(m.state)
    expect_log = list(m.state.event_log)
    m._log.close()
    with open(path, "a") as fh:
        fh.write('{"type": "ingest", "rec')
    back = LiveManager.recover(str(path), FirstFit(), clock=lambda: 0.0)
    assert state_to_dict(back.state) == expect
    assert back.state.event_log == expect_log
    assert path.read_text().endswith("\n")
    back.ingest_line(arrival(8000, "after"))
    back.close()
    records, _ = read_log(str(path))
    assert records[-2]["record"]["id"] == "after"


def test_queries_do_not_block_on_the_state_lock():
    m = manager()
    m.ingest_line(arrival(0, "j"))
    got = []
    with m._lock:
        th = threading.Thread(target=lambda: got.append((m.snapshot_doc(), m.kpis_doc())))
        th.start()
        th.join(timeout=2)
    assert got and len(got[0][0]["jobs"]) == 1


# ---------------------------------------------------------------------------
# HTTP query API


def fetch(port, path):
    try:
        with urllib.request.urlopen(f"http://127.0.0.1:{port}{path}", timeout=5) as resp:
            return resp.status, json.loads(resp.read())
    except urllib.error.HTTPError as e:
        return e.code, json.loads(e.read())


def test_http_endpoints():
    m = manager()
    srv = QueryServer(("127.0.0.1", 0), m)
    srv.start()
    port = srv.server_address[1]
    try:
        code, snap = fetch(port, "/snapshot")
        assert code == 200 and snap["jobs"] == [] and [n["id"] for n in snap["nodes"]] == ["cam", "edge"]
        code, kpis = fetch(port, "/kpis")
        assert code == 200 and kpis == KPIReport().to_dict()
        assert fetch(port, "/unknown")[0] == 404
        m.ingest_line(arrival(0, "j"))
        assert len(fetch(port, "/snapshot")[1]["jobs"]) == 1
        srv.manager = None
        assert fetch(port, "/snapshot")[0] == 503
    finally:
        srv.shutdown()
        srv.server_close()


# ---------------------------------------------------------------------------
# kill and restart through the CLI


def _serve(tmp_path, *extra):
    topo = tmp_path / "topology.json"
    topo.write_text(json.dumps(TOPOLOGY))
    cmd = [sys.executable, "-m", "continuum_twin.cli", "serve", "--topology", str(topo),
           "--scheduler", "first_fit", "--log", str(tmp_path / "live.ndjson"), "--cadence", "20", *extra]
    return subprocess.Popen(cmd, stdin=subprocess.PIPE, stdout=subprocess.PIPE, text=True)


def _wait_for(path, pred, timeout=10.0):
    end = time.monotonic() + timeout
    while time.monotonic() < end:
        if path.exists():
            records, _ = read_log(str(path))
            if pred(records):
                return records
        time.sleep(0.02)
    raise AssertionError("log never reached the expected state")


def test_kill_and_restart(tmp_path):
    log_path = tmp_path / "live.ndjson"
    proc = _serve(tmp_path)
    try:
        for k in range(8):
            proc.stdin.write(arrival(k * 700, f"j{k}", dur=1500) + "\n")
            proc.stdin.flush()
            time.sleep(0.03)
        _wait_for(log_path, lambda rs: sum(r["type"] == "ingest" for r in rs) == 8
                  and rs[-1]["type"] == "tick")
    finally:
        os.kill(proc.pid, signal.SIGKILL)
        proc.wait()
    records, _ = read_log(str(log_path))
    assert records[-1]["type"] != "shutdown"
    recovered = LiveManager.recover(str(log_path), FirstFit(), clock=lambda: 0.0)
    reference = reference_replay(records[1:])
    assert state_to_dict(recovered.state) == state_to_dict(reference.state)
    assert recovered.state.event_log == reference.state.event_log
    recovered.close()

    # a resumed server keeps the history and appends to it
    proc = _serve(tmp_path, "--resume")
    out, _ = proc.communicate(arrival(9000, "late") + "\n", timeout=20)
    assert proc.returncode == 0
    records, _ = read_log(str(log_path))
    assert records[-1]["type"] == "shutdown"
    ids = [r["record"]["id"] for r in records if r["type"] == "ingest"]
    assert ids == [f"j{k}" for k in range(8)] + ["late"]
    assert any(json.loads(line)["decision"].get("job") == "late" for line in out.splitlines())
