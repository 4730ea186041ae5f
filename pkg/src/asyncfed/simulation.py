"""Deterministic discrete-event simulation of the full training system.

Virtual time stands in for wall-clock deployments: worker heterogeneity
is expressed through per-batch costs and link latencies, and every run
is a pure function of its scenario (identical seeds give bit-identical
event logs).  A single-threaded loop over a priority queue of events
serializes all component callbacks; the optional live mode paces the
same loop against the wall clock and accepts control injections from
other threads between events.
"""

from __future__ import annotations

import heapq
import json
import threading
import time
from collections import deque
from dataclasses import dataclass, replace

import numpy as np

from .aggregation import GlobalModelRecord
from .broker import InMemoryBroker
from .datasets import Dataset, make_synthetic_dataset, split_dataset
from .models import LogisticModel, MlpModel
from .monitor import MetricEvent, MonitorService
from .scenario import Scenario
from .server import FederationServer
from .storage import InMemoryObjectStore
from .weights import zeros
from .worker import TesterWorker, TrainingWorker

EVENT_KINDS = ("batch_done", "msg_delivered", "aggregation", "epoch_done", "stop", "metric")


@dataclass(frozen=True)
class SimEvent:
    time: float
    sequence: int
    kind: str
    payload: dict


class Simulator:
    """Priority-queue event loop; all component callbacks run inside it."""

    def __init__(self):
        self.now = 0.0
        self.events: list[SimEvent] = []
        self.budget_exhausted = False
        self._heap: list[tuple[float, int, object]] = []
        self._schedule_seq = 0
        self._log_seq = 0
        self._inbox: deque = deque()
        self._inbox_lock = threading.Lock()
        self.metric_sink = None

    # ------------------------------------------------------------ schedule

    def call_later(self, delay: float, fn) -> None:
        self.call_at(self.now + delay, fn)

    def call_at(self, when: float, fn) -> None:
        self._schedule_seq += 1
        heapq.heappush(self._heap, (when, self._schedule_seq, fn))

    def inject(self, fn) -> None:
        """Thread-safe: run ``fn`` inside the loop before the next event."""
        with self._inbox_lock:
            self._inbox.append(fn)

    # ------------------------------------------------------------- logging

    def log(self, kind: str, payload: dict) -> SimEvent:
        event = SimEvent(self.now, self._log_seq, kind, payload)
        self._log_seq += 1
        self.events.append(event)
        return event

    def log_delivery(self, recipient: str, payload: bytes) -> None:
        try:
            doc = json.loads(payload)
            mtype = doc.get("headers", {}).get("message_type") or doc.get("cmd") or "?"
        except Exception:
            mtype = "?"
        self.log(
            "msg_delivered",
            {"recipient": recipient, "message_type": mtype, "bytes": len(payload)},
        )

    def emit_metric(self, source, kind, value, version=None, epoch=None, direction=None):
        payload = {"metric": kind, "source": source, "value": float(value)}
        if version is not None:
            payload["version"] = version
        if epoch is not None:
            payload["epoch"] = epoch
        if direction is not None:
            payload["direction"] = direction
        self.log("metric", payload)
        if self.metric_sink is not None:
            self.metric_sink(
                source, kind, value, version=version, epoch=epoch, direction=direction
            )

    # ----------------------------------------------------------------- run

    def _drain_inbox(self) -> None:
        while True:
            with self._inbox_lock:
                if not self._inbox:
                    return
                fn = self._inbox.popleft()
            fn()

    def run(self, budget: float, pace: float | None = None) -> None:
        """Process events until the queue empties or ``budget`` sim time.

        ``pace`` (sim units per wall second) throttles live runs; pure
        runs leave it None and execute as fast as possible.
        """
        wall_start = time.monotonic()
        sim_start = self.now
        while True:
            self._drain_inbox()
            if not self._heap:
                break
            when, _, fn = self._heap[0]
            if when > budget:
                self.budget_exhausted = True
                break
            if pace:
                remaining = wall_start + (when - sim_start) / pace - time.monotonic()
                if remaining > 0:
                    # sleep in slices and re-peek: an injected control may
                    # schedule something earlier than the peeked event
                    time.sleep(min(remaining, 0.02))
                    continue
            heapq.heappop(self._heap)
            self.now = when
            fn()
        self._drain_inbox()


# ------------------------------------------------------------------ wiring


@dataclass
class RunResult:
    scenario: Scenario
    events: list[SimEvent]
    metrics: list[MetricEvent]
    final_version: int
    final_record: GlobalModelRecord | None
    final_weights: np.ndarray
    completed: bool
    stop_reason: str | None
    broker: InMemoryBroker
    store: InMemoryObjectStore
    worker_datasets: dict[str, Dataset]
    test_dataset: Dataset | None

    @property
    def tester_curve(self) -> list[tuple[int, float]]:
        """(version, accuracy) pairs reported by the tester, in time order."""
        return [
            (e.version, e.value)
            for e in self.metrics
            if e.kind == "global_perf" and e.version is not None
        ]

    @property
    def final_accuracy(self) -> float | None:
        curve = self.tester_curve
        return curve[-1][1] if curve else None


def provision_data(scenario: Scenario):
    """Generate the run's datasets: (train pool, held-out test set, shards, worker seeds).

    Everything flows from the scenario seed, so the centralized baseline
    can train on exactly the pool a federated run splits up.
    """
    trainers = scenario.trainers
    spec = scenario.data
    seed_seq = np.random.SeedSequence(scenario.seed)
    children = seed_seq.spawn(2 + len(trainers))
    data_seed, split_seed, *worker_seeds = [
        int(child.generate_state(1)[0]) for child in children
    ]
    total = spec.n_train + spec.n_test
    master = make_synthetic_dataset(total, spec.dims, spec.classes, spec.separation, data_seed)
    train_data = master.subset(np.arange(spec.n_train))
    test_data = master.subset(np.arange(spec.n_train, total)) if spec.n_test else None
    shards = split_dataset(train_data, len(trainers), spec.split_mode, split_seed)
    return train_data, test_data, shards, worker_seeds


def build_model(scenario: Scenario):
    if scenario.model_kind == "logistic":
        return LogisticModel(scenario.data.dims, scenario.data.classes)
    return MlpModel(scenario.data.dims, scenario.hidden, scenario.data.classes)


class _System:
    def __init__(self, scenario: Scenario, monitor: MonitorService | None):
        self.scenario = scenario
        self.sim = Simulator()
        self.broker = InMemoryBroker(scheduler=self.sim)
        self.store = InMemoryObjectStore()
        self.monitor = monitor if monitor is not None else MonitorService()
        self.sim.metric_sink = (
            lambda source, kind, value, **ctx: self.monitor.emit(
                source, kind, value, timestamp=self.sim.now, **ctx
            )
        )

        trainers = scenario.trainers
        _, self.test_dataset, shards, worker_seeds = provision_data(scenario)
        self.model = build_model(scenario)

        # the zero vector is a fine default start for logistic regression,
        # but it is a symmetric dead point for an MLP (hidden gradients
        # vanish), so that family starts from a seeded random init instead
        if scenario.model_kind == "logistic":
            initial = zeros(self.model.n_params)
        else:
            initial = self.model.init_weights(scenario.seed)
        self.server = FederationServer(
            scenario.server, self.broker, self.store, self.sim, initial
        )
        job_id = scenario.server.job_id
        beta = scenario.server.strategy.beta

        self.workers: list[TrainingWorker] = []
        self.worker_datasets: dict[str, Dataset] = {}
        for profile, shard, wseed in zip(trainers, shards, worker_seeds):
            shard = Dataset(
                features=shard.features,
                labels=shard.labels,
                qod=profile.qod,
                source_rows=shard.source_rows,
            )
            self.worker_datasets[profile.worker_id] = shard
            self.workers.append(
                TrainingWorker(
                    profile,
                    shard,
                    self.model,
                    replace(scenario.train, seed=wseed),
                    self.broker,
                    self.store,
                    self.sim,
                    job_id,
                    beta=beta,
                )
            )
        self.tester: TesterWorker | None = None
        if scenario.tester is not None and self.test_dataset is not None:
            self.tester = TesterWorker(
                scenario.tester, self.test_dataset, self.model,
                self.broker, self.store, self.sim, job_id,
            )

        self.monitor.attach_broker(self.broker, job_id, self.sim)
        self.monitor.run_info = {
            "name": scenario.name,
            "seed": scenario.seed,
            "strategy": scenario.server.strategy.kind,
            "lr_regime": scenario.train.lr_regime,
            "workers": [p.worker_id for p in trainers],
            "tester": scenario.tester.worker_id if scenario.tester else None,
            "target_performance": scenario.server.stop.target_performance,
            "max_versions": scenario.server.stop.max_versions,
        }

        self.sim.call_at(0.0, self.server.start)
        endpoints = list(self.workers) + ([self.tester] if self.tester else [])
        for endpoint in endpoints:
            self.sim.call_at(endpoint.profile.join_time, endpoint.start)
            if endpoint.profile.failure_time is not None:
                self.sim.call_at(
                    endpoint.profile.failure_time,
                    lambda e=endpoint: self._fail(e),
                )
        control_key = scenario.server.routing_key("control")
        for when, cmd in scenario.controls:
            self.sim.call_at(
                when,
                lambda c=cmd: self.broker.publish(
                    control_key, json.dumps(c, sort_keys=True).encode()
                ),
            )

    def _fail(self, endpoint) -> None:
        self.sim.emit_metric(endpoint.worker_id, "leave", 1.0)
        endpoint.fail()

    def result(self) -> RunResult:
        return RunResult(
            scenario=self.scenario,
            events=self.sim.events,
            metrics=self.monitor.events,
            final_version=self.server.version,
            final_record=self.server.current_record,
            final_weights=self.server.current_weights,
            completed=self.server.stopped,
            stop_reason=self.server.stop_reason,
            broker=self.broker,
            store=self.store,
            worker_datasets=self.worker_datasets,
            test_dataset=self.test_dataset,
        )


def run_scenario(scenario: Scenario, monitor: MonitorService | None = None) -> RunResult:
    """Execute a scenario to its stop condition or simulated budget."""
    system = _System(scenario, monitor)
    system.monitor.bind_control(system.server.on_control)
    system.sim.run(scenario.sim_duration)
    return system.result()


def replay_check(log_a: list[SimEvent], log_b: list[SimEvent]) -> bool:
    """True iff two event logs are element-wise identical."""
    return len(log_a) == len(log_b) and all(a == b for a, b in zip(log_a, log_b))


def events_to_jsonl(events: list[SimEvent]) -> str:
    lines = [
        json.dumps(
            {"time": e.time, "seq": e.sequence, "kind": e.kind, "payload": e.payload},
            sort_keys=True,
        )
        for e in events
    ]
    return "\n".join(lines) + ("\n" if lines else "")


def load_events_jsonl(text: str) -> list[SimEvent]:
    out = []
    for line in text.splitlines():
        if not line.strip():
            continue
        doc = json.loads(line)
        out.append(SimEvent(doc["time"], doc["seq"], doc["kind"], doc["payload"]))
    return out


def metrics_to_csv(metrics: list[MetricEvent]) -> str:
    lines = ["time,source,kind,value,version,epoch,direction"]
    for e in metrics:
        lines.append(
            f"{e.timestamp!r},{e.source_id},{e.kind},{e.value!r},"
            f"{'' if e.version is None else e.version},"
            f"{'' if e.epoch is None else e.epoch},"
            f"{'' if e.direction is None else e.direction}"
        )
    return "\n".join(lines) + "\n"


class LiveRun:
    """Run a scenario on a background thread with wall-clock pacing.

    Control commands are injected between events and acknowledged with
    the simulated time at which they applied.
    """

    def __init__(self, scenario: Scenario, monitor: MonitorService | None = None,
                 pace: float | None = None):
        self.system = _System(scenario, monitor)
        self.monitor = self.system.monitor
        self.monitor.bind_control(self.control)
        self.pace = pace
        self._thread = threading.Thread(target=self._run, daemon=True)
        self._finished = threading.Event()

    def _run(self) -> None:
        try:
            self.system.sim.run(self.system.scenario.sim_duration, pace=self.pace)
        finally:
            self._finished.set()

    def start(self) -> "LiveRun":
        self._thread.start()
        return self

    def join(self, timeout: float | None = None) -> None:
        self._thread.join(timeout)

    @property
    def finished(self) -> bool:
        return self._finished.is_set()

    def control(self, cmd: dict) -> dict:
        if self._finished.is_set() or not self._thread.is_alive():
            return self.system.server.on_control(cmd)
        holder: dict = {}
        done = threading.Event()

        def apply():
            holder["ack"] = self.system.server.on_control(cmd)
            done.set()

        self.system.sim.inject(apply)
        if not done.wait(timeout=10.0):
            if self._finished.is_set():
                return self.system.server.on_control(cmd)
            return {"ok": False, "error": "control application timed out"}
        return holder["ack"]

    def result(self) -> RunResult:
        return self.system.result()
