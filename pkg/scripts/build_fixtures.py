#!/usr/bin/env python3
"""Regenerate the golden use-case fixtures under src/continuum_twin/fixtures/.

The magnitudes below are chosen for this project; each fixture's description
field repeats them. Rerunning must reproduce the committed files byte for
byte (the test suite pins their hashes).
"""

from __future__ import annotations

import argparse
from pathlib import Path

from continuum_twin.rng import SplitMix64
from continuum_twin.scenario import Scenario, serialize_scenario, validate_scenario
from continuum_twin.twin import (
    JobArrival,
    JobSpec,
    LinkChange,
    LinkSpec,
    MetricUpdate,
    NodeFail,
    NodeRecover,
    NodeSpec,
)

OUT = Path(__file__).resolve().parents[1] / "src" / "continuum_twin" / "fixtures"
HOUR = 3_600_000


def intersection() -> Scenario:
    # 4 cameras, 2 roadside edge boxes, 2 cloud nodes behind a 120 ms WAN hop.
    # Every camera emits a detection job every 15 s for one virtual hour.
    nodes = [NodeSpec(f"cam-{i}", "iot", 500, 512, 8, 3.0, 6.0, {"zone": "intersection"})
             for i in range(4)]
    nodes += [NodeSpec(f"edge-{i}", "edge", 4000, 8192, 64, 30.0, 90.0, {"zone": "intersection"})
              for i in range(2)]
    nodes += [NodeSpec(f"cloud-{i}", "cloud", 32000, 131072, 2048, 150.0, 400.0, {"zone": "cloud"})
              for i in range(2)]
    links = [LinkSpec(f"cam-{i}", f"edge-{i % 2}", 5, 100.0) for i in range(4)]
    links.append(LinkSpec("edge-0", "edge-1", 2, 1000.0))
    links += [LinkSpec(f"edge-{e}", f"cloud-{c}", 120, 1000.0) for e in range(2) for c in range(2)]
    links.append(LinkSpec("cloud-0", "cloud-1", 1, 10000.0))

    rng = SplitMix64(101).split("intersection")
    timed = []
    k = 0
    period = 15_000
    for cam in range(4):
        offset = cam * period // 4
        for t in range(offset, HOUR, period):
            job = JobSpec(
                id=f"det-{k:05d}", arrival=t, cpu_m=1500, mem_mib=1024, storage_gib=1,
                duration_ms=4000 + rng.randint(0, 4000), data_mb=4, data_source=f"cam-{cam}",
                latency_bound_ms=100, allowed_tiers=frozenset({"edge", "cloud"}), priority=1,
            )
            timed.append((t, 0, k, JobArrival(t, job)))
            k += 1
    # traffic peak loads the roadside boxes with other services
    for i, (t, load) in enumerate([(900_000, 0.5), (1_800_000, 0.1), (2_700_000, 0.6), (3_300_000, 0.1)]):
        for e in range(2):
            timed.append((t, 1, 2 * i + e, MetricUpdate(t, f"edge-{e}", load)))
    timed.sort(key=lambda x: x[:3])
    return Scenario(
        name="intersection",
        seed=101,
        description=("Intelligent intersection: 4 cameras feed 2 roadside edge nodes; cloud is 120 ms "
                     "away. One 1.5-core detection job per camera every 15 s for 1 h "
                     "(3,600,000 virtual ms), 4 MB of frames, latency_bound 100 ms to the camera. "
                     "Edge background load rises at peaks."),
        nodes=tuple(nodes), links=tuple(links), events=tuple(e for *_, e in timed),
    )


def mri() -> Scenario:
    # Scans live on scanner-attached edge nodes; analysis may only run in the hospital zone.
    nodes = [
        NodeSpec("scanner-0", "edge", 4000, 16384, 512, 60.0, 150.0, {"zone": "hospital"}),
        NodeSpec("scanner-1", "edge", 4000, 16384, 512, 60.0, 150.0, {"zone": "hospital"}),
        NodeSpec("hospital-dc", "cloud", 32000, 131072, 4096, 200.0, 500.0, {"zone": "hospital"}),
        NodeSpec("public-cloud", "cloud", 128000, 524288, 65536, 400.0, 1200.0, {"zone": "public"}),
        NodeSpec("hpc-0", "hpc", 256000, 1048576, 131072, 800.0, 2500.0, {"zone": "hpc-center"}),
    ]
    links = [
        LinkSpec("scanner-0", "hospital-dc", 1, 1000.0),
        LinkSpec("scanner-1", "hospital-dc", 1, 1000.0),
        LinkSpec("hospital-dc", "public-cloud", 15, 10000.0),
        LinkSpec("public-cloud", "hpc-0", 10, 10000.0),
    ]
    rng = SplitMix64(202).split("mri")
    events = []
    t = 0
    for k in range(12):
        t += 300_000 + rng.randint(0, 300_000)
        src = f"scanner-{k % 2}"
        events.append(JobArrival(t, JobSpec(
            id=f"scan-{k:02d}", arrival=t, cpu_m=8000, mem_mib=16384, storage_gib=50,
            duration_ms=600_000 + rng.randint(0, 600_000), data_mb=2000, data_source=src,
            allowed_zones=frozenset({"hospital"}), priority=2,
            migratable=k % 3 != 0,
        )))
    return Scenario(
        name="mri",
        seed=202,
        description=("MRI analysis: 12 scans of 2000 MB each, produced on two scanner edge nodes "
                     "over ~1.5 h. Jobs need 8 cores and 16 GiB, run 10-20 min and are restricted "
                     "to allowed_zones={hospital}; public cloud and HPC are off limits."),
        nodes=tuple(nodes), links=tuple(links), events=tuple(events),
    )


def emergency() -> Scenario:
    # Drones and field vehicles with flaky satellite backhaul.
    nodes = [NodeSpec(f"drone-{i}", "iot", 2000, 2048, 32, 5.0, 15.0, {"zone": "field"})
             for i in range(3)]
    nodes += [
        NodeSpec("field-edge-0", "edge", 8000, 16384, 256, 40.0, 120.0, {"zone": "field"}),
        NodeSpec("field-edge-1", "edge", 8000, 16384, 256, 40.0, 120.0, {"zone": "field"}),
        NodeSpec("cloud-0", "cloud", 64000, 262144, 8192, 200.0, 500.0, {"zone": "cloud"}),
    ]
    links = [
        LinkSpec("drone-0", "field-edge-0", 10, 50.0),
        LinkSpec("drone-1", "field-edge-0", 10, 50.0),
        LinkSpec("drone-2", "field-edge-1", 10, 50.0),
        LinkSpec("field-edge-0", "field-edge-1", 5, 200.0),
        LinkSpec("field-edge-0", "cloud-0", 40, 100.0),
        LinkSpec("field-edge-1", "cloud-0", 40, 100.0),
    ]
    root = SplitMix64(303)
    jobs_rng = root.split("jobs")
    churn_rng = root.split("churn")
    timed = []
    k = 0
    for t in range(0, HOUR, 30_000):
        drone = jobs_rng.randint(0, 2)
        timed.append((t, 0, k, JobArrival(t, JobSpec(
            id=f"img-{k:04d}", arrival=t, cpu_m=2000 + 500 * jobs_rng.randint(0, 4), mem_mib=2048,
            storage_gib=4, duration_ms=20_000 + jobs_rng.randint(0, 40_000), data_mb=20,
            data_source=f"drone-{drone}", latency_bound_ms=200,
            allowed_tiers=frozenset({"edge", "cloud"}), priority=jobs_rng.randint(0, 2),
            migratable=jobs_rng.random() < 0.8,
        ))))
        k += 1
    seq = 0
    down_until: dict[str, int] = {}
    t = 0
    while True:
        t += 120_000 + churn_rng.randint(0, 240_000)
        if t >= HOUR:
            break
        node = churn_rng.choice(["field-edge-0", "field-edge-1", "drone-0", "drone-1", "drone-2"])
        if down_until.get(node, -1) >= t:
            continue
        downtime = 60_000 + churn_rng.randint(0, 240_000)
        down_until[node] = t + downtime
        timed.append((t, 1, seq, NodeFail(t, node)))
        timed.append((t + downtime, 1, seq + 1, NodeRecover(t + downtime, node)))
        seq += 2
    t = 0
    while True:
        t += 300_000 + churn_rng.randint(0, 300_000)
        if t >= HOUR:
            break
        edge = f"field-edge-{churn_rng.randint(0, 1)}"
        degraded = churn_rng.random() < 0.3
        timed.append((t, 2, seq, LinkChange(t, edge, "cloud-0", 400, 5.0, not degraded)))
        back = t + 60_000 + churn_rng.randint(0, 120_000)
        timed.append((back, 2, seq + 1, LinkChange(back, edge, "cloud-0", 40, 100.0, True)))
        seq += 2
    timed.sort(key=lambda x: x[:3])
    return Scenario(
        name="emergency",
        seed=303,
        description=("Emergency response: 3 drones, 2 field edge vehicles, 1 cloud over satellite "
                     "backhaul. One image job every 30 s for 1 h (20 MB, latency_bound 200 ms). "
                     "Field nodes fail for 1-5 min every 2-6 min; the backhaul degrades to "
                     "400 ms / 5 Mbps or drops for 1-3 min every 5-10 min."),
        nodes=tuple(nodes), links=tuple(links), events=tuple(e for *_, e in timed),
    )


BUILDERS = {"intersection": intersection, "mri": mri, "emergency": emergency}


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", type=Path, default=OUT)
    args = ap.parse_args()
    args.out.mkdir(parents=True, exist_ok=True)
    for name, build in BUILDERS.items():
        s = build()
        issues = validate_scenario(s)
        if issues:
            raise SystemExit(f"{name}: {issues}")
        path = args.out / f"{name}.json"
        path.write_text(serialize_scenario(s), encoding="utf-8")
        print(f"{path}: {len(s.events)} events")


if __name__ == "__main__":
    main()
