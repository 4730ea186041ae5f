"""Server-side orchestration: worker registry, aggregation triggers, stop logic.

The server is a single logical event loop.  All inbound messages, timer
ticks, and control commands arrive through one ordered stream (the
simulator's event queue or, in a live deployment, a broker consumer
thread), so no internal state ever sees concurrent access.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from . import protocol, weights
from .aggregation import (
    GlobalModelRecord,
    LocalModelSubmission,
    StrategyConfig,
    dispatch_aggregation,
)
from .errors import (
    AggregationPreconditionError,
    MessageParseError,
    ParameterError,
    ProtocolError,
)
from .schedules import cosine_decay_lr
from .storage import ObjectKey


@dataclass(frozen=True)
class AggregationCondition:
    """Trigger for global aggregation: a distinct-submitter count or a timer."""

    mode: str = "on_count"
    n: int = 3
    interval: float = 60.0
    count_distinct: bool = True

    def __post_init__(self):
        if self.mode not in ("on_count", "periodic"):
            raise ParameterError(f"unknown aggregation mode {self.mode!r}")
        if self.n < 1:
            raise ParameterError(f"aggregation count must be >= 1, got {self.n}")
        if self.interval <= 0:
            raise ParameterError(f"aggregation interval must be positive, got {self.interval}")


@dataclass(frozen=True)
class StopCondition:
    max_versions: int | None = None
    max_duration: float | None = None
    target_performance: float | None = None

    def __post_init__(self):
        if self.max_versions is None and self.max_duration is None and (
            self.target_performance is None
        ):
            raise ParameterError("at least one stop condition must be set")


@dataclass(frozen=True)
class ServerConfig:
    server_id: str = "server"
    job_id: str = "job"
    model_name: str = "model"
    aggregation: AggregationCondition = field(default_factory=AggregationCondition)
    stop: StopCondition = field(default_factory=lambda: StopCondition(max_versions=10))
    strategy: StrategyConfig = field(default_factory=StrategyConfig)
    exchange_performance: float = 1.0
    exchange_epoch: int = 1
    lr_regime: str = "fixed"
    lr_initial: float = 0.01
    lr_total_steps: int = 100
    check_period: float = 1.0
    region_name: str = "local"

    @property
    def bucket(self) -> str:
        return self.model_name

    def global_model_path(self, version: int) -> str:
        return f"global-models/{self.model_name}_v{version}.pkl"

    def routing_key(self, direction: str) -> str:
        return f"training.{self.job_id}.{direction}"


@dataclass
class WorkerProxy:
    worker_id: str
    role: str
    qod: float
    data_size: int
    session_id: str
    join_time: float
    alive: bool = True
    last_submission: LocalModelSubmission | None = None


class FederationServer:
    """Runs the aggregation loop over broker messages and timer ticks."""

    def __init__(self, config: ServerConfig, broker, store, ctx, initial_weights):
        self.config = config
        self.broker = broker
        self.store = store
        self.ctx = ctx
        self.proxies: dict[str, WorkerProxy] = {}
        self.queue: list[LocalModelSubmission] = []
        self.version = 0
        self.current_weights = weights.as_vector(initial_weights, context="initial global model")
        self.current_record: GlobalModelRecord | None = None
        self.kafl_buffer: tuple[LocalModelSubmission, ...] = ()
        self.stopped = False
        self.stop_reason: str | None = None
        self._start_time: float | None = None
        self._last_aggregation: float | None = None
        self._tester_report: tuple[int, float] | None = None

    # ------------------------------------------------------------ lifecycle

    def start(self) -> None:
        now = self.ctx.now
        self._start_time = now
        self._last_aggregation = now
        self.store.create_bucket(self.config.bucket)
        self._store_global(self.version)
        self.broker.subscribe(
            "server.inbox", self.config.routing_key("worker"), self._wrap(self.on_inbox)
        )
        self.broker.subscribe(
            "server.control", self.config.routing_key("control"), self._wrap(self.on_control_payload)
        )
        self.ctx.call_later(self.config.check_period, self.on_tick)

    def _wrap(self, handler):
        def on_message(payload: bytes):
            self.ctx.log_delivery("server", payload)
            handler(payload)

        return on_message

    def _store_global(self, version: int) -> None:
        payload = weights.serialize(self.current_weights)
        self.store.put(ObjectKey(self.config.bucket, self.config.global_model_path(version)), payload)
        self.ctx.emit_metric("server", "bytes", float(len(payload)), direction="up")

    # ------------------------------------------------------------- messages

    def on_inbox(self, payload: bytes) -> None:
        try:
            msg = protocol.decode(payload)
        except (MessageParseError, ProtocolError) as exc:
            self.ctx.log("metric", {"metric": "bad_message", "error": str(exc)})
            return
        if isinstance(msg, protocol.WorkerInitMsg):
            self.handle_worker_init(msg)
        elif isinstance(msg, protocol.WorkerNotifyMsg):
            self.on_worker_notify(msg)

    def handle_worker_init(self, msg: protocol.WorkerInitMsg) -> protocol.ServerInitRespMsg:
        """Register (or refresh) a proxy and answer with the current model info."""
        now = self.ctx.now
        if msg.role == "tester":
            # a new tester replaces any previous one
            for wid in [w for w, p in self.proxies.items() if p.role == "tester" and w != msg.worker_id]:
                del self.proxies[wid]
        existing = self.proxies.get(msg.worker_id)
        if existing is None:
            self.proxies[msg.worker_id] = WorkerProxy(
                worker_id=msg.worker_id,
                role=msg.role,
                qod=msg.data_qod,
                data_size=msg.data_size,
                session_id=msg.session_id,
                join_time=now,
            )
            self.ctx.emit_metric(msg.worker_id, "join", 1.0)
        else:
            existing.role = msg.role
            existing.qod = msg.data_qod
            existing.data_size = msg.data_size
            existing.session_id = msg.session_id
        resp = protocol.ServerInitRespMsg(
            server_id=self.config.server_id,
            session_id=msg.session_id,
            timestamp=protocol.format_timestamp(now),
            model_url=self.config.global_model_path(self.version),
            model_name=self.config.model_name,
            model_version=self.version,
            exchange_performance=self.config.exchange_performance,
            exchange_epoch=self.config.exchange_epoch,
            access_key="",
            secret_key="",
            bucket_name=self.config.bucket,
            region_name=self.config.region_name,
            strategy=self.config.strategy.kind,
        )
        self.broker.publish(self.config.routing_key("server"), protocol.encode(resp))
        return resp

    def on_worker_notify(self, msg: protocol.WorkerNotifyMsg) -> None:
        now = self.ctx.now
        proxy = self.proxies.get(msg.worker_id)
        if self.stopped or proxy is None or not proxy.alive:
            self.ctx.log("metric", {"metric": "discarded_submission", "worker": msg.worker_id})
            return
        if proxy.role == "tester":
            self._tester_report = (msg.global_version_used, msg.performance)
            self._maybe_stop()
            return
        try:
            payload = self.store.get(ObjectKey(self.config.bucket, f"{msg.worker_id}/{msg.file_name}"))
        except Exception as exc:
            self.ctx.log("metric", {"metric": "fetch_failed", "worker": msg.worker_id, "error": str(exc)})
            return
        self.ctx.emit_metric("server", "bytes", float(len(payload)), direction="down")
        sub = LocalModelSubmission(
            worker_id=msg.worker_id,
            weights=weights.deserialize(payload),
            loss=msg.loss,
            qod=proxy.qod,
            data_size=proxy.data_size,
            global_version_used=msg.global_version_used,
            submit_time=now,
            object_key=f"{msg.worker_id}/{msg.file_name}",
        )
        proxy.last_submission = sub
        self.queue.append(sub)

    # ----------------------------------------------------------- timer loop

    def on_tick(self) -> None:
        if self.stopped:
            return
        if self.check_aggregation_cond():
            self.run_aggregation()
        self._maybe_stop()
        if not self.stopped:
            self.ctx.call_later(self.config.check_period, self.on_tick)

    def _count_threshold(self) -> int:
        if self.config.strategy.kind == "fedavg":
            return max(1, len(self._live_trainers()))
        return self.config.aggregation.n

    def _live_trainers(self) -> list[str]:
        return [w for w, p in self.proxies.items() if p.alive and p.role == "trainer"]

    def check_aggregation_cond(self) -> bool:
        cond = self.config.aggregation
        if cond.mode == "on_count":
            if cond.count_distinct:
                count = len({sub.worker_id for sub in self.queue})
            else:
                count = len(self.queue)
            return count >= self._count_threshold()
        elapsed = self.ctx.now - (self._last_aggregation or 0.0)
        return bool(self.queue) and elapsed >= cond.interval

    def run_aggregation(self) -> GlobalModelRecord | None:
        now = self.ctx.now
        new_version = self.version + 1
        learning_rate = None
        if self.config.lr_regime == "sync_decay":
            learning_rate = cosine_decay_lr(
                min(new_version, self.config.lr_total_steps),
                self.config.lr_total_steps,
                self.config.lr_initial,
            )
            if learning_rate <= 0.0:
                # the schedule bottoms out exactly at the terminal version;
                # nobody trains against it, and the wire field must stay positive
                learning_rate = None
        expected = self._live_trainers() if self.config.strategy.kind == "fedavg" else None
        try:
            record, self.kafl_buffer, normalized = dispatch_aggregation(
                self.config.strategy,
                self.queue,
                new_version,
                self.current_weights,
                self.kafl_buffer,
                expected_workers=expected,
                learning_rate=learning_rate,
            )
        except AggregationPreconditionError as exc:
            self.ctx.log("metric", {"metric": "aggregation_skipped", "reason": str(exc)})
            return None
        drained = list(self.queue)
        self.queue.clear()
        self._last_aggregation = now
        self.version = new_version
        self.current_weights = record.weights
        self.current_record = record
        self._store_global(new_version)
        # superseded global versions are no longer needed; keep only the latest
        old_key = ObjectKey(self.config.bucket, self.config.global_model_path(new_version - 1))
        self.store.delete(old_key)
        for sub in drained:
            if sub.object_key:
                self.store.delete(ObjectKey(self.config.bucket, sub.object_key))
        self.ctx.log(
            "aggregation",
            {
                "version": new_version,
                "strategy": self.config.strategy.kind,
                "contributors": list(record.contributors),
                "weights": None if normalized is None else [float(w) for w in normalized],
                "queue_size": len(drained),
                "avg_loss": record.avg_loss,
                "avg_qod": record.avg_qod,
                "total_data_size": record.total_data_size,
                "learning_rate": learning_rate,
            },
        )
        notify = protocol.ServerNotifyMsg(
            server_id=self.config.server_id,
            timestamp=protocol.format_timestamp(now),
            worker_ids=tuple(self.proxies),
            model_id=f"{self.config.model_name}_id",
            version=new_version,
            model_name=self.config.model_name,
            total_data_size=record.total_data_size,
            avg_qod=record.avg_qod,
            avg_loss=record.avg_loss,
            learning_rate=learning_rate,
        )
        self.broker.publish(self.config.routing_key("server"), protocol.encode(notify))
        self._maybe_stop()
        return record

    # ----------------------------------------------------------- stop logic

    def check_stop_condition(self) -> str | None:
        stop = self.config.stop
        if stop.max_versions is not None and self.version >= stop.max_versions:
            return "max_versions"
        if stop.max_duration is not None and self._start_time is not None:
            if self.ctx.now - self._start_time >= stop.max_duration:
                return "max_duration"
        if stop.target_performance is not None and self._tester_report is not None:
            version, performance = self._tester_report
            if version >= self.version - 1 and performance >= stop.target_performance:
                return "target_performance"
        return None

    def _maybe_stop(self) -> None:
        if self.stopped:
            return
        reason = self.check_stop_condition()
        if reason is not None:
            self.stop_training(reason)

    def stop_training(self, reason: str) -> None:
        if self.stopped:
            return
        self.stopped = True
        self.stop_reason = reason
        self.ctx.log("stop", {"reason": reason, "version": self.version})
        self.broker.publish(
            self.config.routing_key("directive"), b'{"cmd":"halt"}'
        )

    # -------------------------------------------------------------- control

    def on_control_payload(self, payload: bytes) -> None:
        try:
            cmd = json.loads(payload)
        except Exception as exc:
            self.ctx.log("metric", {"metric": "bad_control", "error": str(exc)})
            return
        self.on_control(cmd)

    def on_control(self, cmd: dict) -> dict:
        """Apply a control command; returns an acknowledgement."""
        now = self.ctx.now
        name = cmd.get("cmd")
        if name == "stop_training":
            self.stop_training("control")
            return {"ok": True, "cmd": name, "applied_at": now}
        if name == "stop_worker":
            wid = cmd.get("id")
            proxy = self.proxies.get(wid)
            if proxy is None:
                return {"ok": False, "cmd": name, "error": f"unknown worker {wid!r}", "applied_at": now}
            del self.proxies[wid]
            self.queue = [sub for sub in self.queue if sub.worker_id != wid]
            self.ctx.emit_metric(wid, "leave", 1.0)
            self.broker.publish(
                self.config.routing_key("directive"),
                f'{{"cmd":"stop","worker_id":"{wid}"}}'.encode(),
            )
            return {"ok": True, "cmd": name, "id": wid, "applied_at": now}
        return {"ok": False, "error": f"unknown command {name!r}", "applied_at": now}
