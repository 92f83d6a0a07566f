import hashlib
import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from continuum_twin.scenario import (
    FIXTURES,
    Scenario,
    ScenarioError,
    SynthesisParams,
    fixture_text,
    generate_synthetic,
    load_fixture,
    parse_scenario,
    scenario_from_dict,
    scenario_to_dict,
    serialize_scenario,
    validate_scenario,
)
from continuum_twin.twin import JobArrival, JobSpec, LinkChange, NodeFail, NodeRecover, NodeSpec

FIXTURE_SHA256 = {
    "intersection": "0f46c0de9283e05ae2e9cc6e7ae8ba482ffaf3a78c3eb5dcef68bbcbe8ae738e",
    "mri": "50fb9194bcf63c1cd69c79774401991e13a90bea136b9413ada583b717f0b183",
    "emergency": "3bc06ead041104b299e5a3ed120ccdcc491426243875848ac70672ac599f8a83",
}

MINIMAL = {
    "name": "one-node",
    "seed": 0,
    "description": "",
    "topology": {
        "nodes": [{"id": "n1", "tier": "edge", "cpu_m": 1000, "mem_mib": 1024, "storage_gib": 10,
                   "power_idle_w": 10, "power_max_w": 30, "labels": {}}],
        "links": [],
    },
    "events": [],
}


def with_events(*events):
    doc = json.loads(json.dumps(MINIMAL))
    doc["events"] = list(events)
    return doc


def arrival(t, jid, **extra):
    return {"t": t, "kind": "job_arrival", "id": jid, "cpu_m": 100, "mem_mib": 10,
            "storage_gib": 0, "duration_ms": 1000, **extra}


def test_minimal_document():
    s = parse_scenario(json.dumps(MINIMAL))
    assert s.events == () and len(s.nodes) == 1 and s.links == ()


def test_unknown_field_rejected():
    doc = with_events()
    doc["extra"] = 1
    with pytest.raises(ScenarioError) as e:
        parse_scenario(json.dumps(doc))
    assert e.value.code == "unknown-field"
    doc = with_events(arrival(0, "j", cpu=5))
    with pytest.raises(ScenarioError) as e:
        parse_scenario(json.dumps(doc))
    assert e.value.code == "unknown-field"


def test_syntax_error_carries_line():
    text = json.dumps(MINIMAL, indent=2).replace('"events": []', '"events": [,]')
    with pytest.raises(ScenarioError) as e:
        parse_scenario(text)
    assert e.value.code == "syntax"
    assert e.value.line == text.splitlines().index('  "events": [,]') + 1


def test_ordering_violation():
    doc = with_events(arrival(10, "a"), arrival(5, "b"))
    with pytest.raises(ScenarioError) as e:
        parse_scenario(json.dumps(doc))
    assert e.value.code == "ordering-violation"


def test_dangling_data_source():
    doc = with_events(arrival(0, "a", data_source="nX", data_mb=1))
    with pytest.raises(ScenarioError) as e:
        parse_scenario(json.dumps(doc))
    assert e.value.code == "dangling-id"
    doc = with_events({"t": 0, "kind": "node_fail", "node": "ghost"})
    with pytest.raises(ScenarioError) as e:
        parse_scenario(json.dumps(doc))
    assert e.value.code == "dangling-id"


def test_bad_types_and_seed_range():
    doc = with_events()
    doc["seed"] = -1
    with pytest.raises(ScenarioError):
        parse_scenario(json.dumps(doc))
    doc = with_events({"t": 0, "kind": "explode"})
    with pytest.raises(ScenarioError) as e:
        parse_scenario(json.dumps(doc))
    assert e.value.code == "unknown-kind"
    doc = with_events(arrival("soon", "a"))
    with pytest.raises(ScenarioError) as e:
        parse_scenario(json.dumps(doc))
    assert e.value.code == "bad-type"


def _scenario(events):
    nodes = (NodeSpec("n1", "edge", 1000, 1024, 10, 10.0, 30.0, {}),)
    return Scenario("s", 1, "", nodes, (), tuple(events))


def test_validate_duplicate_job_id():
    j = JobSpec("dup", 0, 1, 1, 0, 10)
    issues = validate_scenario(_scenario([JobArrival(0, j), JobArrival(0, j)]))
    assert [i.code for i in issues] == ["duplicate-job-id"]
    assert issues[0].path == "$.events[1]"


def test_validate_latency_bound_without_source():
    j = JobSpec("j", 0, 1, 1, 0, 10, latency_bound_ms=5)
    issues = validate_scenario(_scenario([JobArrival(0, j)]))
    assert len(issues) == 1 and issues[0].code == "latency-bound-without-source"


@pytest.mark.parametrize("name", FIXTURES)
def test_fixture_valid_and_pinned(name):
    assert validate_scenario(load_fixture(name)) == []
    digest = hashlib.sha256(fixture_text(name).encode("utf-8")).hexdigest()
    assert digest == FIXTURE_SHA256[name]


@pytest.mark.parametrize("name", FIXTURES)
def test_fixture_round_trip(name):
    s = load_fixture(name)
    assert parse_scenario(serialize_scenario(s)) == s
    assert serialize_scenario(s) == fixture_text(name)


def test_unknown_fixture():
    with pytest.raises(KeyError):
        load_fixture("volcano")


def test_intersection_shape():
    s = load_fixture("intersection")
    jobs = [e.job for e in s.events if isinstance(e, JobArrival)]
    cams = {n.id for n in s.nodes if n.tier == "iot"}
    assert len(jobs) == 960
    assert all(j.latency_bound_ms == 100 and j.data_source in cams for j in jobs)
    assert max(e.time for e in s.events) < 3_600_000


def test_mri_shape():
    s = load_fixture("mri")
    jobs = [e.job for e in s.events if isinstance(e, JobArrival)]
    assert len(jobs) == 12
    assert all(j.allowed_zones == frozenset({"hospital"}) and j.data_mb == 2000 for j in jobs)


def test_emergency_shape():
    s = load_fixture("emergency")
    kinds = {type(e) for e in s.events}
    assert {NodeFail, NodeRecover, LinkChange} <= kinds
    fails = [e.time for e in s.events if isinstance(e, NodeFail)]
    assert min(fails) < 600_000 and max(fails) > 3_000_000


# ---------------------------------------------------------------------------
# synthesis


def test_synthetic_empty_jobs():
    s = generate_synthetic(SynthesisParams(job_count=0), seed=3)
    assert s.events == () and len(s.nodes) == 8


def test_synthetic_deterministic():
    p = SynthesisParams(job_count=25, failure_rate=20)
    assert serialize_scenario(generate_synthetic(p, 11)) == serialize_scenario(generate_synthetic(p, 11))
    assert serialize_scenario(generate_synthetic(p, 11)) != serialize_scenario(generate_synthetic(p, 12))


def test_synthetic_reference_shape():
    # four cameras, two edge nodes, two cloud nodes: device data reaches the cloud via an edge
    s = generate_synthetic(SynthesisParams(n_iot=4, n_edge=2, n_cloud=2), seed=1)
    twin = s.twin()
    for iot in (n.id for n in s.nodes if n.tier == "iot"):
        for cloud in (n.id for n in s.nodes if n.tier == "cloud"):
            path = twin.path(iot, cloud)
            assert len(path) == 3 and twin.nodes[path[1]].spec.tier == "edge"
    assert twin.path_latency("iot-00", "cloud-00") == 22


def test_synthetic_rejects_bad_params():
    with pytest.raises(ValueError):
        generate_synthetic(SynthesisParams(cpu_range=(10, 1)), 0)
    with pytest.raises(ValueError):
        generate_synthetic(SynthesisParams(n_iot=-1), 0)
    with pytest.raises(ValueError):
        generate_synthetic(SynthesisParams(arrival_rate=1e-300), 0)


synth_params = st.builds(
    SynthesisParams,
    n_iot=st.integers(0, 4), n_edge=st.integers(0, 3), n_cloud=st.integers(1, 2), n_hpc=st.integers(0, 1),
    job_count=st.integers(0, 15), arrival_rate=st.one_of(st.just(0.0), st.floats(1e-3, 5)),
    latency_bound_prob=st.floats(0, 1), failure_rate=st.one_of(st.just(0.0), st.floats(0.01, 200)),
    horizon=st.integers(0, 200_000),
)


@settings(max_examples=1000, deadline=None)
@given(synth_params, st.integers(0, 2**64 - 1))
def test_synthetic_always_valid_and_round_trips(p, seed):
    s = generate_synthetic(p, seed)
    assert validate_scenario(s) == []
    assert scenario_from_dict(json.loads(serialize_scenario(s))) == s
    assert scenario_to_dict(s)["seed"] == seed
