"""Worker-side training pipeline and the evaluation (tester) worker.

Each worker is an independent sequential process: it reacts to broker
deliveries and to its own scheduled batch completions, never sharing
state.  A freshly announced global model is buffered while a batch is
in flight and folded in at the next batch boundary; a worker that is
exactly between epochs adopts the new global outright.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import protocol, weights
from .aggregation import GlobalModelRecord, local_mix_coefficient, merge_local
from .datasets import Dataset
from .errors import MessageParseError, ObjectNotFoundError, ProtocolError
from .models import Model, TrainConfig, evaluate, sgd_train_batch
from .schedules import cosine_decay_lr
from .storage import ObjectKey


@dataclass(frozen=True)
class WorkerProfile:
    """Heterogeneity knobs of one worker: speed, links, lifetime."""

    worker_id: str
    role: str = "trainer"
    batch_cost: float = 1.0
    uplink_latency: float = 0.0
    downlink_latency: float = 0.0
    join_time: float = 0.0
    failure_time: float | None = None
    qod: float = 1.0

    def __post_init__(self):
        if self.batch_cost <= 0:
            raise ValueError(f"batch_cost must be positive, got {self.batch_cost}")
        if self.uplink_latency < 0 or self.downlink_latency < 0:
            raise ValueError("link latencies must be nonnegative")


class _Endpoint:
    """Registration and inbox plumbing shared by trainers and the tester."""

    def __init__(self, profile: WorkerProfile, broker, store, ctx, job_id: str):
        self.profile = profile
        self.worker_id = profile.worker_id
        self.broker = broker
        self.store = store
        self.ctx = ctx
        self.job_id = job_id
        self.session_id = f"session-{profile.worker_id}"
        self.bucket = ""
        self.model_name = ""
        self.strategy = "asyn2f"
        self.dead = False      # failed at failure_time: emits nothing afterwards
        self.halted = False    # told to stop (individually or run-wide)

    def _key(self, direction: str) -> str:
        return f"training.{self.job_id}.{direction}"

    def start(self) -> None:
        self.broker.subscribe(
            f"{self.worker_id}.inbox",
            self._key("server"),
            self._guarded(self.on_server_message),
            latency=self.profile.downlink_latency,
        )
        self.broker.subscribe(
            f"{self.worker_id}.directive",
            self._key("directive"),
            self._guarded(self.on_directive),
            latency=self.profile.downlink_latency,
        )
        init = protocol.WorkerInitMsg(
            worker_id=self.worker_id,
            session_id=self.session_id,
            timestamp=protocol.format_timestamp(self.ctx.now),
            role=self.profile.role,
            system_info=self.system_info(),
            data_size=self.data_size(),
            data_qod=self.profile.qod,
        )
        self.publish_up(protocol.encode(init))

    def system_info(self) -> dict:
        return {"cpu": "sim", "gpu": "none", "ram": "sim", "disk": "sim"}

    def data_size(self) -> int:
        raise NotImplementedError

    def publish_up(self, payload: bytes) -> None:
        self.broker.publish(self._key("worker"), payload, delay=self.profile.uplink_latency)

    def _guarded(self, handler):
        def on_message(payload: bytes):
            if self.dead:
                return
            self.ctx.log_delivery(self.worker_id, payload)
            handler(payload)

        return on_message

    def fail(self) -> None:
        self.dead = True

    def on_directive(self, payload: bytes) -> None:
        try:
            cmd = json.loads(payload)
        except Exception:
            return
        if cmd.get("cmd") == "halt":
            self.halted = True
        elif cmd.get("cmd") == "stop" and cmd.get("worker_id") == self.worker_id:
            self.halted = True

    def on_server_message(self, payload: bytes) -> None:
        try:
            msg = protocol.decode(payload)
        except (MessageParseError, ProtocolError):
            return
        if isinstance(msg, protocol.ServerInitRespMsg):
            if msg.session_id == self.session_id:
                self.on_init_resp(msg)
        elif isinstance(msg, protocol.ServerNotifyMsg):
            if self.worker_id in msg.worker_ids:
                self.on_notify(msg)

    def on_init_resp(self, msg: protocol.ServerInitRespMsg) -> None:
        raise NotImplementedError

    def on_notify(self, msg: protocol.ServerNotifyMsg) -> None:
        raise NotImplementedError

    def _download_global(self, path: str) -> np.ndarray | None:
        try:
            payload = self.store.get(ObjectKey(self.bucket, path))
        except ObjectNotFoundError:
            # a newer version superseded this one before we fetched it
            self.ctx.log("metric", {"metric": "superseded_global", "worker": self.worker_id, "path": path})
            return None
        self.ctx.emit_metric(self.worker_id, "bytes", float(len(payload)), direction="down")
        return weights.deserialize(payload)

    def _record_from_notify(self, msg: protocol.ServerNotifyMsg) -> GlobalModelRecord | None:
        vec = self._download_global(f"global-models/{msg.model_name}_v{msg.version}.pkl")
        if vec is None:
            return None
        return GlobalModelRecord(
            version=msg.version,
            weights=vec,
            avg_qod=msg.avg_qod,
            total_data_size=msg.total_data_size,
            avg_loss=msg.avg_loss,
            learning_rate=msg.learning_rate,
        )


class TrainingWorker(_Endpoint):
    """Trains between broker deliveries; merges fresh globals mid-epoch."""

    def __init__(
        self,
        profile: WorkerProfile,
        dataset: Dataset,
        model: Model,
        train: TrainConfig,
        broker,
        store,
        ctx,
        job_id: str,
        beta: float = 0.5,
    ):
        super().__init__(profile, broker, store, ctx, job_id)
        self.dataset = dataset
        self.model = model
        self.train = train
        self.beta = beta
        self.rng = np.random.default_rng(train.seed)
        self.batch_size = min(train.batch_size, dataset.size)

        self.current_weights: np.ndarray | None = None
        self.prev_batch_weights: np.ndarray | None = None
        self.velocity: np.ndarray | None = None
        self.adopted_version = 0                 # version of the last global folded in
        self.epoch_count = 0
        self.batch_index = 0
        self.pending_global: GlobalModelRecord | None = None
        self.exchange_unlocked = False
        self.exchange_performance = 1.0
        self.exchange_epoch = 1
        self.announced_lr: float | None = None   # travels with the adopted version
        self.waiting_for_global = False          # fedavg: idle between rounds
        self.last_epoch_loss: float | None = None
        self._epoch_batches: list[tuple[np.ndarray, np.ndarray]] = []
        self._epoch_loss_sum = 0.0
        self._epoch_start = 0.0
        self._batch_in_flight = False

    def data_size(self) -> int:
        return self.dataset.size

    # --------------------------------------------------------- registration

    def on_init_resp(self, msg: protocol.ServerInitRespMsg) -> None:
        if self.halted or self.current_weights is not None:
            return
        self.bucket = msg.bucket_name
        self.model_name = msg.model_name
        self.strategy = msg.strategy
        self.exchange_performance = msg.exchange_performance
        self.exchange_epoch = msg.exchange_epoch
        vec = self._download_global(msg.model_url)
        if vec is None:
            # the announced version was already superseded; the matching
            # SERVER_NOTIFY is in flight and will bootstrap us instead
            return
        self._bootstrap(vec, msg.model_version)

    def _bootstrap(self, vec: np.ndarray, version: int, lr: float | None = None) -> None:
        self.current_weights = vec.copy()
        self.prev_batch_weights = vec.copy()
        self.velocity = np.zeros_like(vec)
        self.adopted_version = version
        if lr is not None:
            self.announced_lr = lr
        self.begin_epoch()

    # -------------------------------------------------------- notifications

    def on_notify(self, msg: protocol.ServerNotifyMsg) -> None:
        if self.halted:
            return
        if self.current_weights is None:
            if not self.bucket:
                return
            record = self._record_from_notify(msg)
            if record is not None:
                self._bootstrap(record.weights, record.version, record.learning_rate)
            return
        if msg.version <= self.adopted_version:
            self.ctx.log(
                "metric",
                {"metric": "stale_notify", "worker": self.worker_id, "version": msg.version},
            )
            return
        record = self._record_from_notify(msg)
        if record is None:
            return
        # only the newest pending global is merged at the next boundary
        if self.pending_global is None or record.version > self.pending_global.version:
            self.pending_global = record
        if self.waiting_for_global:
            self.waiting_for_global = False
            self.begin_epoch()

    # ------------------------------------------------------------- training

    def begin_epoch(self) -> None:
        if self.halted or self.dead:
            return
        if self.pending_global is not None:
            # between epochs there is no local movement yet: adopt outright
            self._adopt(self.pending_global)
            self.pending_global = None
        self.batch_index = 0
        self._epoch_loss_sum = 0.0
        self._epoch_start = self.ctx.now
        self._epoch_batches = self._make_batches()
        self._schedule_batch()

    def _make_batches(self) -> list[tuple[np.ndarray, np.ndarray]]:
        batches = []
        for _ in range(self.train.local_rounds_per_epoch):
            order = self.rng.permutation(self.dataset.size)
            for start in range(0, self.dataset.size, self.batch_size):
                rows = order[start:start + self.batch_size]
                batches.append((self.dataset.features[rows], self.dataset.labels[rows]))
        return batches

    def _schedule_batch(self) -> None:
        self._batch_in_flight = True
        self.ctx.call_later(self.profile.batch_cost, self.on_batch_complete)

    def _adopt(self, record: GlobalModelRecord) -> None:
        self.current_weights = record.weights.copy()
        self.prev_batch_weights = record.weights.copy()
        self.adopted_version = record.version
        if record.learning_rate is not None:
            self.announced_lr = record.learning_rate
        self.ctx.log(
            "metric",
            {"metric": "adopt", "worker": self.worker_id, "version": record.version},
        )

    def _merge(self, record: GlobalModelRecord) -> None:
        if self.batch_index == 0:
            self._adopt(record)
            return
        running_loss = self._epoch_loss_sum / self.batch_index
        alpha = local_mix_coefficient(
            self.profile.qod,
            self.dataset.size,
            running_loss,
            record,
            self.beta,
        )
        merged = merge_local(
            record.weights, self.current_weights, self.prev_batch_weights, alpha
        )
        self.current_weights = merged
        self.adopted_version = record.version
        if record.learning_rate is not None:
            self.announced_lr = record.learning_rate
        self.ctx.log(
            "metric",
            {
                "metric": "merge",
                "worker": self.worker_id,
                "version": record.version,
                "alpha": alpha,
            },
        )

    def select_lr(self) -> float:
        if self.train.lr_regime == "fixed":
            return self.train.lr_initial
        if self.train.lr_regime == "sync_decay":
            return self.announced_lr if self.announced_lr is not None else self.train.lr_initial
        step = min(self.epoch_count, self.train.lr_total_steps)
        return cosine_decay_lr(step, self.train.lr_total_steps, self.train.lr_initial)

    def on_batch_complete(self) -> None:
        if self.dead or self.halted or not self._batch_in_flight:
            return
        self._batch_in_flight = False
        X, y = self._epoch_batches[self.batch_index]
        lr = self.select_lr()
        self.prev_batch_weights = self.current_weights
        new_weights, batch_loss, self.velocity = sgd_train_batch(
            self.model, self.current_weights, X, y, lr, self.train.momentum, self.velocity
        )
        self.current_weights = new_weights
        self._epoch_loss_sum += batch_loss
        self.batch_index += 1
        self.ctx.log(
            "batch_done",
            {
                "worker": self.worker_id,
                "epoch": self.epoch_count + 1,
                "batch": self.batch_index,
                "lr": lr,
                "version": self.adopted_version,
                "loss": batch_loss,
            },
        )
        if self.batch_index >= len(self._epoch_batches):
            self.finish_epoch()
            return
        if self.pending_global is not None and self.strategy == "asyn2f":
            self._merge(self.pending_global)
            self.pending_global = None
        self._schedule_batch()

    def check_exchange_threshold(self, performance: float) -> bool:
        if not self.exchange_unlocked:
            if self.epoch_count >= self.exchange_epoch or performance >= self.exchange_performance:
                self.exchange_unlocked = True
        return self.exchange_unlocked

    def finish_epoch(self) -> None:
        now = self.ctx.now
        self.epoch_count += 1
        epoch_loss = self._epoch_loss_sum / len(self._epoch_batches)
        self.last_epoch_loss = epoch_loss
        _, performance = evaluate(self.model, self.current_weights, self.dataset)
        submitted = False
        if self.check_exchange_threshold(performance):
            submitted = self._submit(epoch_loss, performance)
        self.ctx.log(
            "epoch_done",
            {
                "worker": self.worker_id,
                "epoch": self.epoch_count,
                "loss": epoch_loss,
                "performance": performance,
                "submitted": submitted,
                "version": self.adopted_version,
                "duration": now - self._epoch_start,
            },
        )
        self.ctx.emit_metric(
            self.worker_id, "epoch_time", now - self._epoch_start, epoch=self.epoch_count
        )
        if self.strategy == "fedavg" and submitted:
            self.waiting_for_global = True
            return
        self.begin_epoch()

    def _submit(self, epoch_loss: float, performance: float) -> bool:
        file_name = f"epoch_{self.epoch_count}.pkl"
        payload = weights.serialize(self.current_weights)
        key = ObjectKey(self.bucket, f"{self.worker_id}/{file_name}")
        for attempt in (1, 2):
            try:
                self.store.put(key, payload)
                break
            except Exception as exc:
                if attempt == 2:
                    self.ctx.log(
                        "metric",
                        {"metric": "worker_error", "worker": self.worker_id, "error": str(exc)},
                    )
                    return False
        self.ctx.emit_metric(self.worker_id, "bytes", float(len(payload)), direction="up")
        notify = protocol.WorkerNotifyMsg(
            worker_id=self.worker_id,
            session_id=self.session_id,
            timestamp=protocol.format_timestamp(self.ctx.now),
            storage_path=f"{self.bucket}/{self.worker_id}",
            file_name=file_name,
            global_version_used=self.adopted_version,
            performance=performance,
            loss=max(epoch_loss, 1e-12),
        )
        self.publish_up(protocol.encode(notify))
        return True


class TesterWorker(_Endpoint):
    """Evaluates every announced global model and reports its performance."""

    def __init__(self, profile, dataset: Dataset, model: Model, broker, store, ctx, job_id):
        super().__init__(profile, broker, store, ctx, job_id)
        self.dataset = dataset
        self.model = model
        self.results: list[tuple[int, float, float]] = []

    def data_size(self) -> int:
        return self.dataset.size

    def on_init_resp(self, msg: protocol.ServerInitRespMsg) -> None:
        self.bucket = msg.bucket_name
        self.model_name = msg.model_name
        self.strategy = msg.strategy

    def on_notify(self, msg: protocol.ServerNotifyMsg) -> None:
        if self.halted or not self.bucket:
            return
        vec = self._download_global(f"global-models/{msg.model_name}_v{msg.version}.pkl")
        if vec is None:
            return
        loss, accuracy = evaluate(self.model, vec, self.dataset)
        self.results.append((msg.version, accuracy, loss))
        report = protocol.WorkerNotifyMsg(
            worker_id=self.worker_id,
            session_id=self.session_id,
            timestamp=protocol.format_timestamp(self.ctx.now),
            storage_path=f"{self.bucket}/global-models",
            file_name=f"{msg.model_name}_v{msg.version}.pkl",
            global_version_used=msg.version,
            performance=accuracy,
            loss=max(loss, 1e-12),
        )
        self.publish_up(protocol.encode(report))
