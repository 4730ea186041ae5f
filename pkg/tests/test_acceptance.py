"""End-to-end acceptance suite.

Each test exercises one acceptance criterion at its stated tolerance and
prints one ``[ACCEPT] <criterion>: PASS`` line (run with ``pytest -s``
to see them; a failing criterion fails its test).  Simulation runs are
cached module-wide; timed criteria measure their own work.
"""

import json
import math
import time
from pathlib import Path

import numpy as np

from asyncfed import protocol
from asyncfed.aggregation import (
    GlobalModelRecord,
    StrategyConfig,
    aggregate_asyn2f,
    aggregate_fedavg,
    aggregate_mstep_kafl,
    contribution_ratio,
    local_mix_coefficient,
    merge_local,
    normalize_ratios,
)
from asyncfed.experiment import epochs_to_target, train_centralized
from asyncfed.models import TrainConfig
from asyncfed.scenario import DataSpec, Scenario, with_overrides
from asyncfed.schedules import cosine_decay_lr
from asyncfed.server import AggregationCondition, ServerConfig, StopCondition
from asyncfed.simulation import (
    build_model,
    events_to_jsonl,
    metrics_to_csv,
    provision_data,
    run_scenario,
)
from asyncfed.weights import is_weight_payload
from asyncfed.worker import WorkerProfile
from tests.test_aggregation import oracle_weighted_aggregate, sub

GOLDEN = Path(__file__).resolve().parent.parent / "golden"
SEEDS = (1, 2, 3, 4, 5)
MAX_VERSIONS = 30


def _report(name: str) -> None:
    print(f"[ACCEPT] {name}: PASS")


def make_scenario(seed: int, slow: bool = False) -> Scenario:
    """5 trainers + tester on 2-class synthetic data, non-iid shards."""
    profiles = []
    for i in range(4):
        profiles.append(
            WorkerProfile(f"w{i + 1}", batch_cost=1.0, uplink_latency=0.5,
                          downlink_latency=0.5)
        )
    profiles.append(
        WorkerProfile("slow" if slow else "w5", batch_cost=5.0 if slow else 1.0,
                      uplink_latency=0.5, downlink_latency=0.5)
    )
    profiles.append(WorkerProfile("tester", role="tester", downlink_latency=0.5))
    name = "slowrun" if slow else "convrun"
    return Scenario(
        name=name,
        seed=seed,
        sim_duration=50_000.0,
        data=DataSpec(n_train=2000, n_test=500, dims=2, classes=2, separation=3.0,
                      split_mode="disjoint_noniid"),
        train=TrainConfig(batch_size=32, lr_regime="sync_decay", lr_initial=0.1,
                          momentum=0.9, lr_total_steps=MAX_VERSIONS),
        server=ServerConfig(
            model_name=name,
            job_id=name,
            aggregation=AggregationCondition(n=3),
            stop=StopCondition(max_versions=MAX_VERSIONS),
            strategy=StrategyConfig(kind="asyn2f"),
            lr_regime="sync_decay",
            lr_initial=0.1,
            lr_total_steps=MAX_VERSIONS,
        ),
        profiles=profiles,
    )


_cache: dict = {}


def conv_run(seed: int):
    key = ("conv", seed)
    if key not in _cache:
        _cache[key] = run_scenario(make_scenario(seed))
    return _cache[key]


def slow_run(strategy: str, seed: int):
    key = ("slow", strategy, seed)
    if key not in _cache:
        scenario = with_overrides(make_scenario(seed, slow=True), strategy=strategy)
        _cache[key] = run_scenario(scenario)
    return _cache[key]


def centralized_accuracy(seed: int) -> float:
    key = ("centralized", seed)
    if key not in _cache:
        scenario = make_scenario(seed)
        train_data, test_data, _, _ = provision_data(scenario)
        accuracy, _ = train_centralized(
            build_model(scenario), train_data, test_data, epochs=MAX_VERSIONS,
            batch_size=32, lr_initial=0.1, momentum=0.9, seed=seed,
        )
        _cache[key] = accuracy
    return _cache[key]


# ---------------------------------------------------------------------------
# Aggregation formula oracles + brute-force equivalence, runtime < 5 s
# ---------------------------------------------------------------------------


def test_formula_oracles():
    started = time.perf_counter()

    # contribution ratio hand cases
    assert abs(contribution_ratio(sub(qod=0.9, size=1000, loss=0.5, version_used=2), 3)
               - 1800.0) <= 1e-12
    assert abs(contribution_ratio(sub(qod=1.0, size=100, loss=1.0, version_used=0), 1)
               - 100.0) <= 1e-12
    base = contribution_ratio(sub(version_used=2), 3)
    assert contribution_ratio(sub(version_used=2), 4) == base / 2

    # normalization hand cases
    assert np.max(np.abs(normalize_ratios([1800.0, 200.0]) - [0.9, 0.1])) <= 1e-12
    assert np.max(np.abs(normalize_ratios([50.0, 50.0]) - [0.5, 0.5])) <= 1e-12
    assert float(normalize_ratios([7.3])[0]) == 1.0

    # worker-side mix coefficient hand cases
    record = GlobalModelRecord(version=1, weights=np.zeros(1), avg_qod=1.0,
                               total_data_size=300, avg_loss=1.0)
    assert abs(local_mix_coefficient(1.0, 100, 3.0, record, 0.5) - 0.25) <= 1e-12
    symmetric = GlobalModelRecord(version=1, weights=np.zeros(1), avg_qod=1.0,
                                  total_data_size=100, avg_loss=2.0)
    assert abs(local_mix_coefficient(1.0, 100, 2.0, symmetric, 0.5) - 0.5) <= 1e-12

    # directional merge hand cases
    assert abs(merge_local(np.array([0.5]), np.array([0.4]), np.array([0.3]), 0.25)[0]
               - 0.5) <= 1e-12
    assert abs(merge_local(np.array([0.2]), np.array([0.4]), np.array([0.3]), 0.25)[0]
               - 0.25) <= 1e-12

    # baseline hand cases
    fed = aggregate_fedavg([sub(worker="a", weights=(1.0, 0.0), size=100),
                            sub(worker="b", weights=(0.0, 1.0), size=300)])
    assert np.max(np.abs(fed - [0.25, 0.75])) <= 1e-12
    kafl, _ = aggregate_mstep_kafl(sub(worker="b", weights=(3.0,)),
                                   (sub(worker="a", weights=(1.0,)),),
                                   np.array([0.0]), 2, 0.5)
    assert abs(kafl[0] - (0.5 * 3.0 + 0.5 * 2.0)) <= 1e-12

    # brute-force equivalence: <=3 workers x weight length <=4, 1000 seeded trials
    rng = np.random.default_rng(20240505)
    for _ in range(1000):
        n_workers = int(rng.integers(1, 4))
        length = int(rng.integers(1, 5))
        new_version = int(rng.integers(1, 8))
        queue = [
            sub(worker=f"w{rng.integers(0, n_workers)}",
                weights=rng.standard_normal(length),
                loss=float(rng.uniform(0.05, 5.0)),
                qod=float(rng.uniform(0.05, 1.0)),
                size=int(rng.integers(1, 5000)),
                version_used=int(rng.integers(0, new_version)),
                t=float(rng.uniform(0, 100)))
            for _ in range(int(rng.integers(1, 7)))
        ]
        record, _ = aggregate_asyn2f(queue, new_version)
        expected = oracle_weighted_aggregate(queue, new_version)
        assert np.max(np.abs(record.weights - np.array(expected))) <= 1e-12

    elapsed = time.perf_counter() - started
    assert elapsed < 5.0, f"formula oracle criterion took {elapsed:.2f}s"
    _report(f"formula oracles (1e-12 abs, 1000 brute-force trials, {elapsed:.2f}s)")


# ---------------------------------------------------------------------------
# Protocol fidelity: golden corpus + 10,000 round-trips, runtime < 10 s
# ---------------------------------------------------------------------------


def _random_message(rng: np.random.Generator):
    kind = int(rng.integers(0, 4))
    ts = protocol.format_timestamp(float(rng.integers(0, 10_000_000)))
    wid = f"id{int(rng.integers(0, 1000)):03d}"
    if kind == 0:
        return protocol.WorkerInitMsg(
            worker_id=wid,
            session_id=f"s-{int(rng.integers(0, 1 << 30))}",
            timestamp=ts,
            role="tester" if rng.random() < 0.2 else "trainer",
            system_info={"cpu": "x86_64", "gpu": "none", "ram": f"{int(rng.integers(1, 64))}Gb",
                         "disk": f"{int(rng.integers(10, 900))}GB"},
            data_size=int(rng.integers(1, 1_000_000)),
            data_qod=float(rng.uniform(0.01, 1.0)),
        )
    if kind == 1:
        version = int(rng.integers(0, 500))
        return protocol.ServerInitRespMsg(
            server_id=f"srv{int(rng.integers(0, 10))}",
            session_id=f"s-{int(rng.integers(0, 1 << 30))}",
            timestamp=ts,
            model_url=f"global-models/m_v{version}.pkl",
            model_name="m",
            model_version=version,
            exchange_performance=float(rng.uniform(0.0, 1.0)),
            exchange_epoch=int(rng.integers(1, 1000)),
            access_key="", secret_key="",
            bucket_name=f"bucket{int(rng.integers(0, 10))}",
            region_name="local",
            strategy=("asyn2f", "fedavg", "mstep_kafl")[int(rng.integers(0, 3))],
        )
    if kind == 2:
        return protocol.ServerNotifyMsg(
            server_id="srv",
            timestamp=ts,
            worker_ids=tuple(f"id{int(i):03d}" for i in rng.integers(0, 99, rng.integers(1, 6))),
            model_id="model_id",
            version=int(rng.integers(1, 10_000)),
            model_name="m",
            total_data_size=int(rng.integers(1, 10_000_000)),
            avg_qod=float(rng.uniform(0.01, 1.0)),
            avg_loss=float(rng.uniform(1e-6, 50.0)),
            learning_rate=None if rng.random() < 0.5 else float(rng.uniform(1e-6, 1.0)),
        )
    return protocol.WorkerNotifyMsg(
        worker_id=wid,
        session_id=f"s-{int(rng.integers(0, 1 << 30))}",
        timestamp=ts,
        storage_path=f"bucket/{wid}",
        file_name=f"epoch_{int(rng.integers(1, 10_000))}.pkl",
        global_version_used=int(rng.integers(0, 10_000)),
        performance=float(rng.uniform(0.0, 1.0)),
        loss=float(rng.uniform(1e-9, 100.0)),
    )


def test_protocol_fidelity():
    started = time.perf_counter()

    init = protocol.decode((GOLDEN / "worker_init.json").read_bytes())
    assert init.data_qod == 0.95 and init.data_size == 123
    resp = protocol.decode((GOLDEN / "server_init_resp.json").read_bytes())
    assert resp.model_version == 2 and resp.exchange_performance == 0.9
    assert resp.exchange_epoch == 100 and resp.strategy == "asyn2f"
    notify = protocol.decode((GOLDEN / "server_notify.json").read_bytes())
    assert notify.version == 1
    assert notify.avg_qod == 0.89
    assert notify.avg_loss == 1.232
    assert notify.total_data_size == 42432
    report = protocol.decode((GOLDEN / "worker_notify.json").read_bytes())
    assert report.performance == 0.8934 and report.loss == 1.232
    assert report.global_version_used == 2

    for name in ("worker_init.json", "server_init_resp.json",
                 "server_notify.json", "worker_notify.json"):
        original = json.loads((GOLDEN / name).read_bytes())
        round_tripped = json.loads(protocol.encode(protocol.decode((GOLDEN / name).read_bytes())))
        assert round_tripped == original, f"{name} did not survive re-encoding"

    rng = np.random.default_rng(7_777)
    for _ in range(10_000):
        msg = _random_message(rng)
        assert protocol.decode(protocol.encode(msg)) == msg

    elapsed = time.perf_counter() - started
    assert elapsed < 10.0, f"protocol fidelity criterion took {elapsed:.2f}s"
    _report(f"protocol fidelity (golden corpus + 10,000 round-trips, {elapsed:.2f}s)")


# ---------------------------------------------------------------------------
# Synchronous reduction: fedavg with n = trainer count on 5 workers
# ---------------------------------------------------------------------------


def test_synchronous_reduction():
    result = slow_run("fedavg", 1)
    assert result.completed
    trainers = sorted(p.worker_id for p in result.scenario.trainers)
    agg_times = [e.time for e in result.events if e.kind == "aggregation"]
    assert len(agg_times) == MAX_VERSIONS
    boundaries = [0.0] + agg_times
    for lo, hi in zip(boundaries, boundaries[1:]):
        window = sorted(
            e.payload["worker"]
            for e in result.events
            if e.kind == "epoch_done" and lo < e.time <= hi
        )
        assert window == trainers, (
            f"aggregation window ({lo}, {hi}] saw epochs from {window}, expected {trainers}"
        )
    _report("synchronous reduction (fedavg, one epoch per trainer per aggregation)")


# ---------------------------------------------------------------------------
# Desk-scale convergence vs the centralized baseline, runtime < 2 min
# ---------------------------------------------------------------------------


def test_desk_scale_convergence():
    started = time.perf_counter()
    ratios = []
    for seed in SEEDS:
        result = conv_run(seed)
        assert result.completed, f"seed {seed} did not reach its stop condition"
        accuracy = result.final_accuracy
        assert accuracy is not None
        ratios.append(accuracy / centralized_accuracy(seed))
    median_ratio = float(np.median(ratios))
    elapsed = time.perf_counter() - started
    assert median_ratio >= 0.95, f"median accuracy ratio {median_ratio:.4f} < 0.95"
    assert elapsed < 120.0, f"convergence criterion took {elapsed:.1f}s"
    _report(
        f"desk-scale convergence (median accuracy ratio {median_ratio:.4f} >= 0.95, {elapsed:.1f}s)"
    )


# ---------------------------------------------------------------------------
# Comparative speed with one slow worker: asyn2f <= fedavg on time-to-target
# ---------------------------------------------------------------------------


def _time_to_target(result, target: float) -> float:
    crossing = epochs_to_target(result.metrics, target)
    return math.inf if crossing is None else crossing.time


def test_comparative_speed():
    times = {strategy: [] for strategy in ("asyn2f", "fedavg", "mstep_kafl")}
    for seed in SEEDS:
        target = 0.9 * centralized_accuracy(seed)
        for strategy in times:
            times[strategy].append(_time_to_target(slow_run(strategy, seed), target))
    medians = {s: float(np.median(ts)) for s, ts in times.items()}
    assert medians["asyn2f"] <= medians["fedavg"], (
        f"asyn2f median time-to-target {medians['asyn2f']} exceeds fedavg {medians['fedavg']}"
    )
    _report(
        "comparative speed (median simulated time-to-target: "
        f"asyn2f={medians['asyn2f']:g} <= fedavg={medians['fedavg']:g}; "
        f"mstep_kafl={medians['mstep_kafl']:g} reported alongside)"
    )


# ---------------------------------------------------------------------------
# Staleness penalty: the slow worker's normalized weight trails the fast mean
# ---------------------------------------------------------------------------


def test_staleness_penalty():
    slow_weights, fast_weights = [], []
    for seed in SEEDS:
        result = slow_run("asyn2f", seed)
        for event in result.events:
            if event.kind == "aggregation" and event.payload["weights"]:
                for worker, weight in zip(event.payload["contributors"],
                                          event.payload["weights"]):
                    (slow_weights if worker == "slow" else fast_weights).append(weight)
    assert slow_weights, "the slow worker never contributed to any aggregation"
    slow_mean = float(np.mean(slow_weights))
    fast_mean = float(np.mean(fast_weights))
    assert slow_mean < fast_mean, (
        f"slow worker mean normalized weight {slow_mean:.4f} not below fast mean {fast_mean:.4f}"
    )

    near = contribution_ratio(sub(qod=0.7, size=431, loss=1.37, version_used=4), 5)
    far = contribution_ratio(sub(qod=0.7, size=431, loss=1.37, version_used=4), 6)
    assert far == near / 2

    _report(
        f"staleness penalty (slow mean weight {slow_mean:.4f} < fast mean {fast_mean:.4f}; "
        "doubled delay exactly halves the raw ratio)"
    )


# ---------------------------------------------------------------------------
# Determinism: same seed, bit-identical event log and metrics CSV
# ---------------------------------------------------------------------------


def test_determinism():
    scenario_a = with_overrides(make_scenario(1, slow=True), strategy="asyn2f")
    scenario_b = with_overrides(make_scenario(1, slow=True), strategy="asyn2f")
    first = run_scenario(scenario_a)
    second = run_scenario(scenario_b)
    assert events_to_jsonl(first.events) == events_to_jsonl(second.events)
    assert metrics_to_csv(first.metrics) == metrics_to_csv(second.metrics)
    _report(
        f"determinism (two seed-1 runs, {len(first.events)} events bit-identical, CSV identical)"
    )


# ---------------------------------------------------------------------------
# Privacy wire invariant: no feature row in any payload or stored object
# ---------------------------------------------------------------------------


def test_privacy_wire_invariant():
    runs = [conv_run(1)] + [slow_run(s, 1) for s in ("asyn2f", "fedavg", "mstep_kafl")]
    payloads_checked = 0
    objects_checked = 0
    for result in runs:
        rows = {
            tuple(float(v) for v in row)
            for dataset in list(result.worker_datasets.values()) + [result.test_dataset]
            if dataset is not None
            for row in dataset.features
        }
        for _, payload in result.broker.published_log:
            leaks = protocol.find_feature_leaks(payload, rows)
            assert leaks == [], f"feature row leaked on the wire: {leaks[:1]}"
            payloads_checked += 1
        for key, payload in result.store.put_history:
            assert is_weight_payload(payload), (
                f"stored object {key} is not in the documented weight format"
            )
            objects_checked += 1
    _report(
        f"privacy wire invariant ({payloads_checked} payloads scanned, "
        f"{objects_checked} stored objects verified as weight format)"
    )


# ---------------------------------------------------------------------------
# LR synchronization: every batch uses cosine_decay_lr(adopted version)
# ---------------------------------------------------------------------------


def test_lr_synchronization():
    batches_checked = 0
    for seed in SEEDS:
        result = conv_run(seed)
        for event in result.events:
            if event.kind != "batch_done":
                continue
            version = event.payload["version"]
            expected = cosine_decay_lr(version, MAX_VERSIONS, 0.1)
            assert event.payload["lr"] == expected, (
                f"seed {seed}: batch against version {version} used lr "
                f"{event.payload['lr']}, expected {expected}"
            )
            batches_checked += 1
    assert batches_checked > 0
    _report(f"learning-rate synchronization ({batches_checked} batches, zero violations)")
