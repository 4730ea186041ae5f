"""Metric collection, querying, live streaming, and control forwarding.

The monitor taps the broker: worker/tester/server messages are decoded
into metric events, alongside events the simulator reports directly
(epoch timings, joins/leaves, byte counts).  Persistence is an
append-only JSON-lines file; live consumers attach bounded streaming
queues that never block the writer (oldest entries drop on overflow).

HTTP surface (see ``build_app``):

* ``GET /metrics``           — filtered history (source, kind, since, until)
* ``GET /metrics/stream``    — server-sent events, one JSON metric per event
* ``POST /control``          — ``{"cmd": "stop_worker", "id": ...}`` or
  ``{"cmd": "stop_training"}``
* ``GET /run``               — static run info for dashboards
"""

from __future__ import annotations

import asyncio
import json
import math
import threading
from collections import deque
from dataclasses import asdict, dataclass

from fastapi import FastAPI, Request
from fastapi.responses import StreamingResponse

from . import protocol
from .errors import MessageParseError, ProtocolError

METRIC_KINDS = (
    "worker_loss",
    "worker_perf",
    "global_perf",
    "epoch_time",
    "join",
    "leave",
    "bytes",
)


@dataclass(frozen=True)
class MetricEvent:
    source_id: str
    timestamp: float
    kind: str
    value: float
    version: int | None = None
    epoch: int | None = None
    direction: str | None = None

    def to_json(self) -> str:
        doc = {k: v for k, v in asdict(self).items() if v is not None}
        return json.dumps(doc, sort_keys=True)


class MonitorService:
    """Single-writer metric store with non-blocking streaming fan-out."""

    def __init__(self, jsonl_path=None, stream_buffer: int = 4096):
        self.events: list[MetricEvent] = []
        self.dropped = 0
        self.stream_overflows = 0
        self._roles: dict[str, str] = {}
        self._last_seen: dict[str, float] = {}
        self._stream_buffer = stream_buffer
        self._subscribers: list[deque] = []
        self._lock = threading.Lock()
        self._jsonl = open(jsonl_path, "a", encoding="utf-8") if jsonl_path else None
        self._control_handler = None
        self.run_info: dict = {}

    # --------------------------------------------------------------- ingest

    def ingest(self, event: MetricEvent) -> None:
        """Append one event; malformed or out-of-order events are dropped."""
        if (
            not isinstance(event, MetricEvent)
            or event.kind not in METRIC_KINDS
            or not math.isfinite(event.value)
            or not math.isfinite(event.timestamp)
            or event.timestamp < self._last_seen.get(event.source_id, float("-inf"))
        ):
            self.dropped += 1
            return
        self._last_seen[event.source_id] = event.timestamp
        with self._lock:
            self.events.append(event)
            for queue in self._subscribers:
                if len(queue) >= self._stream_buffer:
                    queue.popleft()
                    self.stream_overflows += 1
                queue.append(event)
        if self._jsonl is not None:
            self._jsonl.write(event.to_json() + "\n")
            self._jsonl.flush()

    def emit(self, source_id, kind, value, *, timestamp, version=None, epoch=None, direction=None):
        self.ingest(
            MetricEvent(
                source_id=source_id,
                timestamp=timestamp,
                kind=kind,
                value=float(value),
                version=version,
                epoch=epoch,
                direction=direction,
            )
        )

    # ------------------------------------------------------- message tapping

    def observe_message(self, payload: bytes, now: float) -> None:
        """Derive metric events from a wire message, as a broker subscriber."""
        try:
            msg = protocol.decode(payload)
        except (MessageParseError, ProtocolError):
            self.dropped += 1
            return
        if isinstance(msg, protocol.WorkerInitMsg):
            self._roles[msg.worker_id] = msg.role
        elif isinstance(msg, protocol.WorkerNotifyMsg):
            if self._roles.get(msg.worker_id) == "tester":
                self.emit(
                    msg.worker_id, "global_perf", msg.performance,
                    timestamp=now, version=msg.global_version_used,
                )
            else:
                self.emit(
                    msg.worker_id, "worker_loss", msg.loss,
                    timestamp=now, version=msg.global_version_used,
                )
                self.emit(
                    msg.worker_id, "worker_perf", msg.performance,
                    timestamp=now, version=msg.global_version_used,
                )

    def attach_broker(self, broker, job_id: str, clock) -> None:
        """Subscribe to the worker and server routing keys of a job."""
        for direction in ("worker", "server"):
            broker.subscribe(
                f"monitor.{direction}",
                f"training.{job_id}.{direction}",
                lambda payload: self.observe_message(payload, clock.now),
            )

    # ---------------------------------------------------------------- query

    def query(self, source=None, kind=None, since=None, until=None) -> list[MetricEvent]:
        with self._lock:
            events = list(self.events)
        out = []
        for event in events:
            if source is not None and event.source_id != source:
                continue
            if kind is not None and event.kind != kind:
                continue
            if since is not None and event.timestamp < since:
                continue
            if until is not None and event.timestamp > until:
                continue
            out.append(event)
        return out

    def subscribe_stream(self) -> deque:
        """New streaming queue pre-loaded with the full backlog."""
        with self._lock:
            queue = deque(self.events)
            self._subscribers.append(queue)
        return queue

    def unsubscribe_stream(self, queue: deque) -> None:
        with self._lock:
            if queue in self._subscribers:
                self._subscribers.remove(queue)

    # -------------------------------------------------------------- control

    def bind_control(self, handler) -> None:
        self._control_handler = handler

    def control(self, cmd: dict) -> dict:
        """Forward a control command to the training run; returns the ack."""
        if not isinstance(cmd, dict) or cmd.get("cmd") not in ("stop_worker", "stop_training"):
            return {"ok": False, "error": f"unknown command {cmd!r}"}
        if self._control_handler is None:
            return {"ok": False, "error": "no active training run"}
        return self._control_handler(cmd)

    def close(self) -> None:
        if self._jsonl is not None:
            self._jsonl.close()
            self._jsonl = None


def load_metrics_jsonl(path) -> list[MetricEvent]:
    """Read a persistence file back into metric events."""
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            doc = json.loads(line)
            out.append(
                MetricEvent(
                    source_id=doc["source_id"],
                    timestamp=doc["timestamp"],
                    kind=doc["kind"],
                    value=doc["value"],
                    version=doc.get("version"),
                    epoch=doc.get("epoch"),
                    direction=doc.get("direction"),
                )
            )
    return out


def build_app(monitor: MonitorService) -> FastAPI:
    """FastAPI app over a monitor instance."""
    from fastapi.middleware.cors import CORSMiddleware

    app = FastAPI(title="asyncfed monitor")
    # the dashboard is typically served from another origin/port
    app.add_middleware(
        CORSMiddleware, allow_origins=["*"], allow_methods=["*"], allow_headers=["*"]
    )

    @app.get("/run")
    def run_info():
        return monitor.run_info

    @app.get("/metrics")
    def metrics(source: str | None = None, kind: str | None = None,
                since: float | None = None, until: float | None = None):
        return [json.loads(e.to_json()) for e in monitor.query(source, kind, since, until)]

    @app.post("/control")
    async def control(request: Request):
        try:
            cmd = await request.json()
        except Exception:
            return {"ok": False, "error": "body must be JSON"}
        return monitor.control(cmd)

    @app.get("/metrics/stream")
    async def stream(request: Request, max_events: int | None = None,
                     idle_timeout: float = 30.0):
        queue = monitor.subscribe_stream()

        async def gen():
            sent = 0
            idle = 0.0
            try:
                while True:
                    if await request.is_disconnected():
                        return
                    if queue:
                        idle = 0.0
                        event = queue.popleft()
                        yield f"data: {event.to_json()}\n\n"
                        sent += 1
                        if max_events is not None and sent >= max_events:
                            return
                    else:
                        await asyncio.sleep(0.05)
                        idle += 0.05
                        if idle >= idle_timeout:
                            return
            finally:
                monitor.unsubscribe_stream(queue)

        return StreamingResponse(gen(), media_type="text/event-stream")

    return app
