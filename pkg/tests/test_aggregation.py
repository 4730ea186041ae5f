import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from asyncfed.aggregation import (
    GlobalModelRecord,
    LocalModelSubmission,
    StrategyConfig,
    aggregate_asyn2f,
    aggregate_fedavg,
    aggregate_mstep_kafl,
    contribution_ratio,
    dedup_latest,
    dispatch_aggregation,
    local_mix_coefficient,
    merge_local,
    normalize_ratios,
)
from asyncfed.errors import (
    AggregationPreconditionError,
    ClampWarning,
    ParameterError,
    RoundIncompleteError,
    ShapeMismatchError,
    StalenessInversionError,
)


def sub(worker="w", weights=(1.0,), loss=1.0, qod=1.0, size=100, version_used=0, t=0.0):
    return LocalModelSubmission(
        worker_id=worker,
        weights=np.array(weights, dtype=np.float64),
        loss=loss,
        qod=qod,
        data_size=size,
        global_version_used=version_used,
        submit_time=t,
    )


def oracle_weighted_aggregate(subs, new_version):
    """Independent long-hand evaluation: ratio, normalization, weighted sum.

    Pure-Python floats, no shared code with the implementation under test.
    """
    latest = {}
    for idx, s in enumerate(subs):
        key = (s.submit_time, idx)
        if s.worker_id not in latest or key > latest[s.worker_id][0]:
            latest[s.worker_id] = (key, s)
    chosen = [s for _, s in sorted(latest.values(), key=lambda kv: kv[0][1])]
    ratios = [
        (s.qod * s.data_size) / (s.loss * (new_version - s.global_version_used))
        for s in chosen
    ]
    total = sum(ratios)
    length = len(chosen[0].weights)
    return [
        sum((r / total) * s.weights[i] for r, s in zip(ratios, chosen))
        for i in range(length)
    ]


# ------------------------------------------------------- contribution ratio


def test_contribution_ratio_hand_values():
    assert contribution_ratio(sub(qod=0.9, size=1000, loss=0.5, version_used=2), 3) == \
        pytest.approx(1800.0, abs=1e-12)
    assert contribution_ratio(sub(qod=1.0, size=100, loss=1.0, version_used=0), 1) == \
        pytest.approx(100.0, abs=1e-12)


def test_doubling_delay_exactly_halves_ratio():
    near = contribution_ratio(sub(version_used=2), 3)
    far = contribution_ratio(sub(version_used=2), 4)
    assert far == near / 2


def test_staleness_inversion_rejected():
    with pytest.raises(StalenessInversionError):
        contribution_ratio(sub(version_used=3), 3)
    with pytest.raises(StalenessInversionError):
        contribution_ratio(sub(version_used=5), 3)


def test_tiny_loss_clamped_with_warning():
    with pytest.warns(ClampWarning):
        ratio = contribution_ratio(sub(loss=0.0, qod=1.0, size=1), 1, loss_epsilon=1e-8)
    assert ratio == pytest.approx(1e8)


# ----------------------------------------------------------- normalization


def test_normalize_hand_values():
    np.testing.assert_allclose(normalize_ratios([50.0, 50.0]), [0.5, 0.5], atol=0)
    np.testing.assert_allclose(normalize_ratios([1800.0, 200.0]), [0.9, 0.1], atol=1e-15)
    np.testing.assert_allclose(normalize_ratios([7.3]), [1.0], atol=0)


@given(st.lists(st.floats(min_value=1e-6, max_value=1e6), min_size=1, max_size=12))
def test_normalize_sums_to_one_and_preserves_order(ratios):
    out = normalize_ratios(ratios)
    assert abs(out.sum() - 1.0) <= 1e-12
    assert np.all(np.argsort(out, kind="stable") == np.argsort(ratios, kind="stable"))


def test_normalize_rejects_bad_input():
    with pytest.raises(AggregationPreconditionError):
        normalize_ratios([])
    with pytest.raises(AggregationPreconditionError):
        normalize_ratios([1.0, 0.0])


# ------------------------------------------------------------ server merge


def test_single_submission_is_identity():
    record, normalized = aggregate_asyn2f([sub(weights=(3.0, -1.0))], 1)
    np.testing.assert_array_equal(record.weights, [3.0, -1.0])
    np.testing.assert_array_equal(normalized, [1.0])


def test_two_symmetric_submissions_average():
    a = sub(worker="a", weights=(1.0, 0.0, 5.0))
    b = sub(worker="b", weights=(3.0, 2.0, 1.0))
    record, _ = aggregate_asyn2f([a, b], 1)
    np.testing.assert_allclose(record.weights, [2.0, 1.0, 3.0], atol=1e-15)


def test_latest_submission_per_worker_wins():
    early = sub(worker="fast", weights=(0.0,), t=1.0)
    late = sub(worker="fast", weights=(10.0,), t=2.0)
    other = sub(worker="slow", weights=(2.0,), t=1.5)
    record, _ = aggregate_asyn2f([early, late, other], 1)
    assert record.contributors == ("fast", "slow")
    np.testing.assert_allclose(record.weights, [6.0], atol=1e-15)
    assert record.total_data_size == 200


def test_dedup_tie_breaks_by_arrival_order():
    first = sub(worker="w", weights=(1.0,), t=5.0)
    second = sub(worker="w", weights=(2.0,), t=5.0)
    assert dedup_latest([first, second])[0].weights[0] == 2.0


def test_record_metadata_aggregates():
    a = sub(worker="a", loss=1.0, qod=0.8, size=100)
    b = sub(worker="b", loss=3.0, qod=0.6, size=300)
    record, _ = aggregate_asyn2f([a, b], 1)
    assert record.avg_loss == pytest.approx(2.0, abs=0)
    assert record.avg_qod == pytest.approx(0.7, abs=1e-15)
    assert record.total_data_size == 400
    assert record.version == 1


def test_scaling_invariance_of_ratios():
    subs = [
        sub(worker="a", weights=(1.0, 2.0), size=100, loss=0.7),
        sub(worker="b", weights=(0.0, 1.0), size=300, loss=1.3),
    ]
    scaled = [
        sub(worker="a", weights=(1.0, 2.0), size=1000, loss=0.7),
        sub(worker="b", weights=(0.0, 1.0), size=3000, loss=1.3),
    ]
    base, _ = aggregate_asyn2f(subs, 1)
    big, _ = aggregate_asyn2f(scaled, 1)
    np.testing.assert_allclose(base.weights, big.weights, atol=1e-12)


def test_output_is_convex_combination():
    rng = np.random.default_rng(1)
    for _ in range(30):
        subs = [
            sub(worker=f"w{i}", weights=rng.standard_normal(4),
                loss=float(rng.uniform(0.1, 4.0)), qod=float(rng.uniform(0.1, 1.0)),
                size=int(rng.integers(1, 1000)), version_used=int(rng.integers(0, 3)))
            for i in range(3)
        ]
        record, _ = aggregate_asyn2f(subs, 3)
        stack = np.vstack([s.weights for s in subs])
        assert np.all(record.weights >= stack.min(axis=0) - 1e-12)
        assert np.all(record.weights <= stack.max(axis=0) + 1e-12)


def test_matches_brute_force_oracle():
    rng = np.random.default_rng(123)
    for _ in range(200):
        n_workers = int(rng.integers(1, 4))
        length = int(rng.integers(1, 5))
        new_version = int(rng.integers(1, 6))
        subs = [
            sub(worker=f"w{rng.integers(0, n_workers)}",
                weights=rng.standard_normal(length),
                loss=float(rng.uniform(0.05, 5.0)),
                qod=float(rng.uniform(0.05, 1.0)),
                size=int(rng.integers(1, 5000)),
                version_used=int(rng.integers(0, new_version)),
                t=float(rng.uniform(0, 10)))
            for _ in range(int(rng.integers(1, 6)))
        ]
        record, _ = aggregate_asyn2f(subs, new_version)
        expected = oracle_weighted_aggregate(subs, new_version)
        np.testing.assert_allclose(record.weights, expected, atol=1e-12)


def test_aggregate_error_paths():
    with pytest.raises(AggregationPreconditionError):
        aggregate_asyn2f([], 1)
    with pytest.raises(ShapeMismatchError):
        aggregate_asyn2f([sub(worker="a", weights=(1.0,)),
                          sub(worker="b", weights=(1.0, 2.0))], 1)


# ----------------------------------------------------- local mix coefficient


def test_local_mix_symmetric_case():
    record = GlobalModelRecord(version=1, weights=np.zeros(1), avg_qod=1.0,
                               total_data_size=100, avg_loss=2.0)
    assert local_mix_coefficient(1.0, 100, 2.0, record, beta=0.5) == \
        pytest.approx(0.5, abs=1e-15)


def test_local_mix_hand_value():
    record = GlobalModelRecord(version=1, weights=np.zeros(1), avg_qod=1.0,
                               total_data_size=300, avg_loss=1.0)
    value = local_mix_coefficient(1.0, 100, 3.0, record, beta=0.5)
    assert value == pytest.approx(0.25, abs=1e-12)


def test_local_mix_limit_global_dominates():
    record = GlobalModelRecord(version=1, weights=np.zeros(1), avg_qod=1.0,
                               total_data_size=100, avg_loss=1.0)
    assert local_mix_coefficient(1.0, 100, 1e12, record, beta=0.0) < 1e-9


@given(
    st.floats(min_value=0.01, max_value=1.0),
    st.integers(min_value=1, max_value=10_000),
    st.floats(min_value=1e-6, max_value=100.0),
    st.floats(min_value=0.01, max_value=0.99),
)
def test_local_mix_strictly_interior(qod, size, loss, beta):
    record = GlobalModelRecord(version=1, weights=np.zeros(1), avg_qod=0.9,
                               total_data_size=500, avg_loss=1.3)
    value = local_mix_coefficient(qod, size, loss, record, beta=beta)
    assert 0.0 < value < 1.0


# ------------------------------------------------------------- local merge


def test_merge_same_direction_takes_global():
    out = merge_local(np.array([0.5]), np.array([0.4]), np.array([0.3]), 0.25)
    assert out[0] == 0.5


def test_merge_opposite_direction_blends():
    out = merge_local(np.array([0.2]), np.array([0.4]), np.array([0.3]), 0.25)
    assert out[0] == pytest.approx(0.75 * 0.2 + 0.25 * 0.4, abs=1e-15)


def test_merge_fixed_point_when_global_equals_local():
    local = np.array([1.0, -2.0, 0.5])
    out = merge_local(local, local, np.array([0.9, -2.1, 0.4]), 0.5)
    np.testing.assert_array_equal(out, local)


def test_merge_zero_product_takes_blend_branch():
    # no local movement: strict "> 0" fails, so the blend applies even
    # though the global offset is positive
    out = merge_local(np.array([1.0]), np.array([0.0]), np.array([0.0]), 0.25)
    assert out[0] == pytest.approx(0.75, abs=1e-15)


def test_merge_accepts_record():
    record = GlobalModelRecord(version=1, weights=np.array([0.5]), avg_qod=1.0,
                               total_data_size=1, avg_loss=1.0)
    assert merge_local(record, np.array([0.4]), np.array([0.3]), 0.25)[0] == 0.5


@settings(max_examples=200)
@given(
    st.lists(st.floats(min_value=-10, max_value=10), min_size=1, max_size=8),
    st.lists(st.floats(min_value=-10, max_value=10), min_size=1, max_size=8),
    st.lists(st.floats(min_value=-10, max_value=10), min_size=1, max_size=8),
    st.floats(min_value=0.01, max_value=0.99),
)
def test_merge_segment_property(g, lj, ljm1, alpha):
    n = min(len(g), len(lj), len(ljm1))
    g, lj, ljm1 = np.array(g[:n]), np.array(lj[:n]), np.array(ljm1[:n])
    out = merge_local(g, lj, ljm1, alpha)
    agree = (lj - ljm1) * (g - lj) > 0
    np.testing.assert_array_equal(out[agree], g[agree])
    lo = np.minimum(g, lj) - 1e-12
    hi = np.maximum(g, lj) + 1e-12
    assert np.all(out >= lo) and np.all(out <= hi)


def test_merge_validation():
    with pytest.raises(ShapeMismatchError):
        merge_local(np.zeros(2), np.zeros(3), np.zeros(3), 0.5)
    with pytest.raises(ParameterError):
        merge_local(np.zeros(2), np.zeros(2), np.zeros(2), 1.0)


# ----------------------------------------------------------------- fedavg


def test_fedavg_equal_sizes_is_mean():
    subs = [sub(worker="a", weights=(1.0, 3.0), size=50),
            sub(worker="b", weights=(3.0, 1.0), size=50)]
    np.testing.assert_allclose(aggregate_fedavg(subs), [2.0, 2.0], atol=1e-15)


def test_fedavg_weighted_hand_value():
    u = np.array([1.0, 0.0])
    v = np.array([0.0, 1.0])
    subs = [sub(worker="a", weights=u, size=100), sub(worker="b", weights=v, size=300)]
    np.testing.assert_allclose(aggregate_fedavg(subs), 0.25 * u + 0.75 * v, atol=1e-15)


def test_fedavg_single_worker_identity():
    subs = [sub(worker="a", weights=(4.0,))]
    np.testing.assert_array_equal(aggregate_fedavg(subs), [4.0])


def test_fedavg_round_incomplete():
    subs = [sub(worker="a")]
    with pytest.raises(RoundIncompleteError, match="b"):
        aggregate_fedavg(subs, expected_workers=["a", "b"])


# ------------------------------------------------------------- mstep kafl


def test_kafl_buffer_of_one_returns_incoming():
    incoming = sub(weights=(2.0, 4.0))
    new_global, buffer = aggregate_mstep_kafl(incoming, (), np.zeros(2), 1, 0.5)
    np.testing.assert_array_equal(new_global, [2.0, 4.0])
    assert buffer == ()


def test_kafl_flush_hand_value():
    u = sub(worker="a", weights=(1.0,))
    v = sub(worker="b", weights=(3.0,))
    new_global, buffer = aggregate_mstep_kafl(v, (u,), np.array([0.0]), 2, 0.5)
    # interim global becomes v; the buffer mean (u+v)/2 merges in at ratio 0.5
    assert new_global[0] == pytest.approx(0.5 * 3.0 + 0.5 * 2.0, abs=1e-15)
    assert buffer == ()


def test_kafl_buffer_grows_then_resets():
    first = sub(worker="a", weights=(1.0,))
    new_global, buffer = aggregate_mstep_kafl(first, (), np.array([9.0]), 3, 0.5)
    assert len(buffer) == 1
    np.testing.assert_array_equal(new_global, [1.0])
    second = sub(worker="b", weights=(2.0,))
    _, buffer = aggregate_mstep_kafl(second, buffer, new_global, 3, 0.5)
    assert len(buffer) == 2
    third = sub(worker="c", weights=(3.0,))
    _, buffer = aggregate_mstep_kafl(third, buffer, new_global, 3, 0.5)
    assert buffer == ()


# ------------------------------------------------------ cross-strategy laws


def test_asyn2f_equals_fedavg_for_equal_metadata():
    subs = [sub(worker="a", weights=(1.0, -1.0), size=100),
            sub(worker="b", weights=(5.0, 3.0), size=100)]
    asyn, _ = aggregate_asyn2f(subs, 1)
    fed = aggregate_fedavg(subs)
    np.testing.assert_array_equal(asyn.weights, fed)


def test_operations_do_not_mutate_inputs():
    subs = [sub(worker="a", weights=(1.0,)), sub(worker="b", weights=(2.0,))]
    snapshots = [s.weights.copy() for s in subs]
    aggregate_asyn2f(subs, 1)
    aggregate_fedavg(subs)
    aggregate_mstep_kafl(subs[0], (subs[1],), np.array([0.0]), 5, 0.5)
    for s, snap in zip(subs, snapshots):
        np.testing.assert_array_equal(s.weights, snap)


def test_dispatch_routes_all_strategies():
    subs = [sub(worker="a", weights=(2.0,)), sub(worker="b", weights=(4.0,))]
    for kind in ("asyn2f", "fedavg", "mstep_kafl"):
        config = StrategyConfig(kind=kind, m_buffer=2)
        record, buffer, normalized = dispatch_aggregation(
            config, subs, 1, np.array([0.0]), (), expected_workers=["a", "b"]
        )
        assert record.version == 1
        assert record.total_data_size == 200
        assert (normalized is not None) == (kind == "asyn2f")


def test_strategy_config_validation():
    with pytest.raises(ParameterError):
        StrategyConfig(kind="other")
    with pytest.raises(ParameterError):
        StrategyConfig(beta=1.0)
    with pytest.raises(ParameterError):
        StrategyConfig(alpha_kafl=0.0)
    with pytest.raises(ParameterError):
        StrategyConfig(loss_epsilon=0.0)
