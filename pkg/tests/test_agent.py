import json
import socket
import sys
import threading
from pathlib import Path

import pytest

from continuum_twin.agent import AgentScheduler, ProtocolError
from continuum_twin.engine import EngineConfig, run
from continuum_twin.scenario import Scenario
from continuum_twin.scheduler import Delay, make_scheduler
from continuum_twin.twin import JobArrival, JobSpec, NodeSpec, TwinState

AGENT = str(Path(__file__).parent / "agents" / "scripted_agent.py")
NO_TICKS = EngineConfig(reschedule_interval=None)


def spawn(mode, *extra, timeout=1.0):
    return AgentScheduler.spawn([sys.executable, AGENT, mode, *extra], timeout=timeout)


def two_job_scenario():
    nodes = (NodeSpec("n1", "edge", 1000, 1024, 10, 10.0, 30.0, {}),)
    events = tuple(JobArrival(t, JobSpec(f"j{t}", t, 100, 10, 0, 1000)) for t in (0, 5))
    return Scenario("two", 0, "", nodes, (), events)


def test_echo_agent_keeps_jobs_queued():
    with spawn("echo") as agent:
        res = run(two_job_scenario(), agent, NO_TICKS)
    assert agent.faults == 0
    assert res.report.jobs_completed == 0
    assert [j.phase for j in res.state.jobs.values()] == ["queued", "queued"]


def test_decide_round_trip_places_job():
    with spawn("place") as agent:
        res = run(two_job_scenario(), agent, EngineConfig(reschedule_interval=100))
    assert agent.faults == 0
    assert res.report.jobs_completed == 2
    assert res.report.decision_faults == 0


def test_slow_agent_falls_back_to_all_delay():
    with spawn("slow", "0.5", timeout=0.1) as agent:
        res = run(two_job_scenario(), agent, NO_TICKS)
    # two decision points (arrivals at 0 and 5), each timed out
    assert agent.faults == 2
    assert res.report.decision_faults == 2
    delays = [(r["t"], r["job"]) for r in res.log if r["action"] == "delay"]
    assert delays == [(0, "j0"), (5, "j0"), (5, "j5")]


def test_protocol_mismatch_is_a_handshake_error():
    agent = spawn("v2")
    try:
        with pytest.raises(ProtocolError, match="protocol mismatch"):
            agent.handshake()
    finally:
        agent.close()


def test_garbage_reply_is_a_fault():
    snap_state = TwinState([NodeSpec("n", "edge", 1, 1, 1, 1.0, 1.0, {})])
    snap_state.apply_event(JobArrival(0, JobSpec("j", 0, 1, 1, 0, 5)))
    with spawn("garbage") as agent:
        assert agent.decide(snap_state.snapshot()) == [Delay("j")]
    assert agent.faults == 1


def test_make_scheduler_agent_spec():
    agent = make_scheduler(f"agent:{sys.executable} {AGENT} echo")
    try:
        assert isinstance(agent, AgentScheduler)
        assert agent.decide(TwinState([]).snapshot()) == []
    finally:
        agent.close()


def test_tcp_agent():
    srv = socket.create_server(("127.0.0.1", 0))
    port = srv.getsockname()[1]
    seen = []

    def serve():
        conn, _ = srv.accept()
        with conn, conn.makefile("rb") as r, conn.makefile("wb") as w:
            for line in r:
                msg = json.loads(line)
                seen.append(msg["type"])
                reply = {"type": "hello", "protocol": 1} if msg["type"] == "hello" else \
                    {"type": "decisions", "decisions": [{"kind": "no_op"}]}
                w.write(json.dumps(reply).encode() + b"\n")
                w.flush()

    th = threading.Thread(target=serve, daemon=True)
    th.start()
    agent = AgentScheduler.connect("127.0.0.1", port, timeout=2.0)
    try:
        out = agent.decide(TwinState([]).snapshot())
    finally:
        agent.close()
        srv.close()
    assert len(out) == 1 and out[0].kind == "no_op"
    assert seen == ["hello", "decide"]
