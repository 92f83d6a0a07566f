"""External scheduling agents over newline-delimited JSON.

The host speaks first with a hello carrying the protocol version, then sends
one ``decide`` request per decision point and waits for one ``decisions``
reply. Timeouts and garbage never stop the host: every queued job is delayed
and the fault is counted.
"""

from __future__ import annotations

import json
import logging
import queue
import socket
import subprocess
import threading
from typing import IO, Callable, Optional

from .scheduler import Decision, Delay, decision_from_dict
from .twin import Snapshot, state_to_dict

PROTOCOL_VERSION = 1
log = logging.getLogger(__name__)


class ProtocolError(RuntimeError):
    pass


class AgentScheduler:
    name = "agent"

    def __init__(self, reader: IO[bytes], writer: IO[bytes], timeout: float = 1.0,
                 on_close: Optional[Callable[[], None]] = None):
        self.timeout = timeout
        self.faults = 0
        self.fault_log: list[str] = []
        self._writer = writer
        self._on_close = on_close
        self._lines: "queue.Queue[Optional[bytes]]" = queue.Queue()
        self._ready = False
        self._reader = threading.Thread(target=self._pump, args=(reader,), daemon=True)
        self._reader.start()

    @classmethod
    def spawn(cls, argv: list[str], timeout: float = 1.0) -> "AgentScheduler":
        proc = subprocess.Popen(argv, stdin=subprocess.PIPE, stdout=subprocess.PIPE)

        def close():
            try:
                proc.stdin.close()
            except OSError:
                pass
            try:
                proc.wait(timeout=2)
            except subprocess.TimeoutExpired:
                proc.kill()
                proc.wait()

        agent = cls(proc.stdout, proc.stdin, timeout, close)
        agent.process = proc
        return agent

    @classmethod
    def connect(cls, host: str, port: int, timeout: float = 1.0) -> "AgentScheduler":
        sock = socket.create_connection((host, port))
        rfile = sock.makefile("rb")
        wfile = sock.makefile("wb")

        def close():
            # shutdown first: it wakes the reader thread, which holds rfile's lock
            try:
                sock.shutdown(socket.SHUT_RDWR)
            except OSError:
                pass
            for f in (wfile, rfile):
                f.close()
            sock.close()

        return cls(rfile, wfile, timeout, close)

    def _pump(self, reader):
        try:
            for line in reader:
                self._lines.put(line)
        except (OSError, ValueError):
            pass
        self._lines.put(None)

    def _send(self, obj):
        self._writer.write(json.dumps(obj, separators=(",", ":")).encode() + b"\n")
        self._writer.flush()

    def _recv(self) -> dict:
        try:
            line = self._lines.get(timeout=self.timeout)
        except queue.Empty:
            raise TimeoutError(f"no reply within {self.timeout * 1000:.0f} ms") from None
        if line is None:
            self._lines.put(None)
            raise ProtocolError("agent closed the stream")
        msg = json.loads(line)
        if not isinstance(msg, dict):
            raise ProtocolError(f"expected an object, got {line!r}")
        return msg

    def _drain_stale(self):
        while True:
            try:
                line = self._lines.get_nowait()
            except queue.Empty:
                return
            if line is None:
                self._lines.put(None)
                return
            log.debug("discarding stale agent line %r", line)

    def handshake(self) -> None:
        self._send({"type": "hello", "protocol": PROTOCOL_VERSION})
        try:
            msg = self._recv()
        except (TimeoutError, ValueError) as e:
            raise ProtocolError(f"handshake failed: {e}") from e
        if msg.get("type") != "hello":
            raise ProtocolError(f"expected hello, got {msg!r}")
        if msg.get("protocol") != PROTOCOL_VERSION:
            raise ProtocolError(
                f"protocol mismatch: host speaks {PROTOCOL_VERSION}, agent {msg.get('protocol')!r}")
        self._ready = True

    def _fault(self, reason: str, snapshot: Snapshot) -> list[Decision]:
        self.faults += 1
        self.fault_log.append(f"t={snapshot.clock}: {reason}")
        log.warning("agent fault at t=%s: %s", snapshot.clock, reason)
        return [Delay(j.id) for j in snapshot.queued()]

    def decide(self, snapshot: Snapshot) -> list[Decision]:
        if not self._ready:
            self.handshake()
        self._drain_stale()
        try:
            self._send({"type": "decide", "snapshot": state_to_dict(snapshot)})
        except OSError as e:
            return self._fault(f"send failed: {e}", snapshot)
        try:
            msg = self._recv()
            if msg.get("type") != "decisions" or not isinstance(msg.get("decisions"), list):
                raise ProtocolError(f"expected decisions, got {msg!r}")
            return [decision_from_dict(d) for d in msg["decisions"]]
        except (TimeoutError, ProtocolError, ValueError) as e:
            return self._fault(str(e), snapshot)

    def close(self):
        if self._on_close is not None:
            self._on_close()
            self._on_close = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
