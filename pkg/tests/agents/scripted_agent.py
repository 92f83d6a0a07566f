#!/usr/bin/env python3
"""Scripted external agent for protocol tests.

Modes: echo (always []), place (first queued job on the first node),
slow (sleeps past the host deadline), v2 (wrong protocol), garbage.
"""

import json
import sys
import time


def main():
    mode = sys.argv[1]
    delay = float(sys.argv[2]) if len(sys.argv) > 2 else 2.0
    out = sys.stdout
    for line in sys.stdin:
        msg = json.loads(line)
        if msg["type"] == "hello":
            out.write(json.dumps({"type": "hello", "protocol": 2 if mode == "v2" else 1}) + "\n")
        elif mode == "slow":
            time.sleep(delay)
            out.write(json.dumps({"type": "decisions", "decisions": []}) + "\n")
        elif mode == "garbage":
            out.write("this is not json\n")
        elif mode == "place":
            snap = msg["snapshot"]
            queued = [j["id"] for j in snap["jobs"] if j["phase"] == "queued"]
            nodes = [n["id"] for n in snap["nodes"]]
            decisions = [{"kind": "place", "job": queued[0], "node": nodes[0]}] if queued else []
            out.write(json.dumps({"type": "decisions", "decisions": decisions}) + "\n")
        else:
            out.write(json.dumps({"type": "decisions", "decisions": []}) + "\n")
        out.flush()


if __name__ == "__main__":
    main()
