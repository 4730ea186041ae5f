"""Model-combination math behind one strategy surface.

Three strategies are implemented as pure functions over submissions:

* ``asyn2f`` — staleness/quality-weighted asynchronous aggregation,
  plus the worker-side directional merge of a fresh global model into a
  local model that is mid-epoch.
* ``fedavg`` — classic synchronous size-weighted averaging.
* ``mstep_kafl`` — buffered asynchronous averaging where each received
  model becomes the interim global and a size-M buffer periodically
  blends back in.

No function keeps hidden state; the KAFL buffer is passed in and
returned explicitly.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, replace
from typing import Iterable, Sequence

import numpy as np

from . import kernels
from .errors import (
    AggregationPreconditionError,
    ClampWarning,
    ParameterError,
    RoundIncompleteError,
    ShapeMismatchError,
    StalenessInversionError,
)
from .weights import as_vector, check_same_length

STRATEGY_KINDS = ("asyn2f", "fedavg", "mstep_kafl")


@dataclass(frozen=True)
class LocalModelSubmission:
    """A worker's uploaded model plus the metadata that weights it."""

    worker_id: str
    weights: np.ndarray
    loss: float
    qod: float
    data_size: int
    global_version_used: int
    submit_time: float
    object_key: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "weights", as_vector(self.weights, context="submission weights"))
        if not np.isfinite(self.loss) or self.loss < 0:
            raise ParameterError(f"submission loss must be finite and >= 0, got {self.loss}")
        if not 0.0 < self.qod <= 1.0:
            raise ParameterError(f"submission qod must be in (0, 1], got {self.qod}")
        if self.data_size <= 0:
            raise ParameterError(f"submission data_size must be positive, got {self.data_size}")
        if self.global_version_used < 0:
            raise ParameterError(
                f"global_version_used must be nonnegative, got {self.global_version_used}"
            )


@dataclass(frozen=True)
class GlobalModelRecord:
    """A versioned global model with the aggregate metadata of its contributors."""

    version: int
    weights: np.ndarray
    avg_qod: float
    total_data_size: int
    avg_loss: float
    contributors: tuple[str, ...] = ()
    learning_rate: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "weights", as_vector(self.weights, context="global weights"))


@dataclass(frozen=True)
class StrategyConfig:
    kind: str = "asyn2f"
    beta: float = 0.5
    k_fedavg: int = 1
    m_buffer: int = 3
    alpha_kafl: float = 0.5
    loss_epsilon: float = 1e-8

    def __post_init__(self):
        if self.kind not in STRATEGY_KINDS:
            raise ParameterError(f"unknown strategy {self.kind!r}, expected one of {STRATEGY_KINDS}")
        if not 0.0 < self.beta < 1.0:
            raise ParameterError(f"beta must be strictly inside (0, 1), got {self.beta}")
        if self.k_fedavg < 1:
            raise ParameterError(f"k_fedavg must be >= 1, got {self.k_fedavg}")
        if self.m_buffer < 1:
            raise ParameterError(f"m_buffer must be >= 1, got {self.m_buffer}")
        if not 0.0 < self.alpha_kafl < 1.0:
            raise ParameterError(f"alpha_kafl must be in (0, 1), got {self.alpha_kafl}")
        if self.loss_epsilon <= 0:
            raise ParameterError(f"loss_epsilon must be positive, got {self.loss_epsilon}")


def _clamp_loss(loss: float, loss_epsilon: float, what: str) -> float:
    if loss < loss_epsilon:
        # stable message so repeat offenders dedupe under the default filter
        warnings.warn(
            f"{what} below epsilon {loss_epsilon}; clamping",
            ClampWarning,
            stacklevel=3,
        )
        return loss_epsilon
    return loss


def contribution_ratio(
    sub: LocalModelSubmission, new_version: int, loss_epsilon: float = 1e-8
) -> float:
    """Unnormalized contribution of a submission to global version ``new_version``.

    ``(qod * data_size) / (loss * version_delay)`` — large losses and
    stale base versions both shrink the contribution.
    """
    delay = new_version - sub.global_version_used
    if delay <= 0:
        raise StalenessInversionError(
            f"submission from {sub.worker_id} used version {sub.global_version_used}, "
            f"which is not older than the new version {new_version}"
        )
    loss = _clamp_loss(sub.loss, loss_epsilon, f"loss of {sub.worker_id}")
    return (sub.qod * sub.data_size) / (loss * delay)


def normalize_ratios(ratios: Sequence[float]) -> np.ndarray:
    """Scale positive ratios to sum to one, preserving order."""
    arr = np.asarray(ratios, dtype=np.float64)
    if arr.size == 0:
        raise AggregationPreconditionError("cannot normalize an empty ratio sequence")
    if np.any(arr <= 0) or not np.all(np.isfinite(arr)):
        raise AggregationPreconditionError(f"ratios must be finite and positive, got {arr!r}")
    return arr / arr.sum()


def dedup_latest(queue: Iterable[LocalModelSubmission]) -> list[LocalModelSubmission]:
    """Keep only each worker's latest submission (submit_time, then arrival order)."""
    best: dict[str, tuple[tuple[float, int], LocalModelSubmission]] = {}
    for arrival, sub in enumerate(queue):
        key = (sub.submit_time, arrival)
        if sub.worker_id not in best or key > best[sub.worker_id][0]:
            best[sub.worker_id] = (key, sub)
    ordered = sorted(best.values(), key=lambda item: item[0][1])
    return [sub for _, sub in ordered]


def _check_equal_lengths(subs: Sequence[LocalModelSubmission]) -> None:
    length = subs[0].weights.shape[0]
    for sub in subs[1:]:
        if sub.weights.shape[0] != length:
            raise ShapeMismatchError(
                f"submission from {sub.worker_id} has length {sub.weights.shape[0]}, "
                f"expected {length}"
            )


def make_record(
    version: int,
    weights: np.ndarray,
    subs: Sequence[LocalModelSubmission],
    learning_rate: float | None = None,
) -> GlobalModelRecord:
    """Build the metadata record for a new global model from its contributors."""
    return GlobalModelRecord(
        version=version,
        weights=weights,
        avg_qod=float(np.mean([s.qod for s in subs])),
        total_data_size=int(sum(s.data_size for s in subs)),
        avg_loss=float(np.mean([s.loss for s in subs])),
        contributors=tuple(s.worker_id for s in subs),
        learning_rate=learning_rate,
    )


def aggregate_asyn2f(
    queue: Sequence[LocalModelSubmission],
    new_version: int,
    loss_epsilon: float = 1e-8,
) -> tuple[GlobalModelRecord, np.ndarray]:
    """Staleness/quality-weighted aggregation of the queued submissions.

    Only the latest submission per worker participates.  Returns the new
    record together with the normalized per-contributor weights (in
    contributor order) for observability.
    """
    subs = dedup_latest(queue)
    if not subs:
        raise AggregationPreconditionError("aggregation requires a nonempty queue")
    _check_equal_lengths(subs)
    ratios = [contribution_ratio(sub, new_version, loss_epsilon) for sub in subs]
    normalized = normalize_ratios(ratios)
    stack = np.ascontiguousarray(np.vstack([sub.weights for sub in subs]))
    combined = kernels.weighted_combine(stack, normalized)
    return make_record(new_version, combined, subs), normalized


def local_mix_coefficient(
    qod: float,
    data_size: int,
    current_loss: float,
    global_record: GlobalModelRecord,
    beta: float,
    loss_epsilon: float = 1e-8,
) -> float:
    """Share of the in-training local model in the worker-side merge.

    ``beta`` trades off data quality/volume against model performance
    (losses).  The result is strictly inside (0, 1) for beta inside
    (0, 1); the closed endpoints are accepted for limit analysis.
    """
    if not 0.0 <= beta <= 1.0:
        raise ParameterError(f"beta must be within [0, 1], got {beta}")
    local_mass = qod * data_size
    global_mass = global_record.avg_qod * global_record.total_data_size
    if global_mass <= 0:
        raise ParameterError(
            f"global record metadata must be positive, got avg_qod={global_record.avg_qod}, "
            f"total_data_size={global_record.total_data_size}"
        )
    loss = _clamp_loss(current_loss, loss_epsilon, "local running loss")
    avg_loss = _clamp_loss(global_record.avg_loss, loss_epsilon, "global average loss")
    return beta * local_mass / (local_mass + global_mass) + (1.0 - beta) * avg_loss / (
        loss + avg_loss
    )


def merge_local(
    global_weights,
    local_j: np.ndarray,
    local_jm1: np.ndarray,
    alpha_local: float,
) -> np.ndarray:
    """Directional per-weight merge of a new global model into a local one.

    Where the last batch's local movement and the offset toward the
    global model share a sign, the global value is adopted outright;
    otherwise the weight moves to
    ``(1 - alpha_local) * global + alpha_local * local``.
    """
    if isinstance(global_weights, GlobalModelRecord):
        global_weights = global_weights.weights
    global_vec = as_vector(global_weights, context="global weights")
    local_j = as_vector(local_j, context="local weights")
    local_jm1 = as_vector(local_jm1, context="previous-batch weights")
    check_same_length(global_vec, local_j, context="global and local weights")
    check_same_length(local_j, local_jm1, context="local and previous-batch weights")
    if not 0.0 < alpha_local < 1.0:
        raise ParameterError(f"alpha_local must be in (0, 1), got {alpha_local}")
    return kernels.merge_directional(global_vec, local_j, local_jm1, alpha_local)


def aggregate_fedavg(
    subs: Sequence[LocalModelSubmission],
    expected_workers: Iterable[str] | None = None,
) -> np.ndarray:
    """Size-weighted synchronous average; requires one submission per worker."""
    deduped = dedup_latest(subs)
    if not deduped:
        raise AggregationPreconditionError("aggregation requires a nonempty queue")
    if expected_workers is not None:
        missing = set(expected_workers) - {s.worker_id for s in deduped}
        if missing:
            raise RoundIncompleteError(
                f"round is missing submissions from {sorted(missing)}"
            )
    _check_equal_lengths(deduped)
    sizes = np.array([s.data_size for s in deduped], dtype=np.float64)
    coeffs = sizes / sizes.sum()
    stack = np.ascontiguousarray(np.vstack([s.weights for s in deduped]))
    return kernels.weighted_combine(stack, coeffs)


def aggregate_mstep_kafl(
    incoming: LocalModelSubmission,
    buffer: Sequence[LocalModelSubmission],
    current_global: np.ndarray,
    m_buffer: int,
    alpha: float,
) -> tuple[np.ndarray, tuple[LocalModelSubmission, ...]]:
    """Buffered asynchronous update applied on each single receipt.

    The incoming model immediately becomes the interim global; once the
    buffer reaches ``m_buffer`` entries their mean is blended in with
    ratio ``alpha`` and the buffer clears.
    """
    if m_buffer < 1:
        raise ParameterError(f"m_buffer must be >= 1, got {m_buffer}")
    if not 0.0 < alpha < 1.0:
        raise ParameterError(f"alpha must be in (0, 1), got {alpha}")
    current_global = as_vector(current_global, context="current global weights")
    check_same_length(current_global, incoming.weights, context="global and incoming weights")
    interim = incoming.weights
    new_buffer = tuple(buffer) + (incoming,)
    if len(new_buffer) >= m_buffer:
        _check_equal_lengths(list(new_buffer))
        mean = np.mean(np.vstack([s.weights for s in new_buffer]), axis=0)
        merged = (1.0 - alpha) * interim + alpha * mean
        return merged, ()
    return interim.copy(), new_buffer


def dispatch_aggregation(
    config: StrategyConfig,
    queue: Sequence[LocalModelSubmission],
    new_version: int,
    current_global: np.ndarray,
    kafl_buffer: tuple[LocalModelSubmission, ...] = (),
    expected_workers: Iterable[str] | None = None,
    learning_rate: float | None = None,
) -> tuple[GlobalModelRecord, tuple[LocalModelSubmission, ...], np.ndarray | None]:
    """Run the configured strategy over a drained queue.

    Returns ``(record, kafl_buffer', normalized_weights_or_None)``; the
    normalized weights are only defined for the asyn2f strategy.
    """
    if not queue:
        raise AggregationPreconditionError("aggregation requires a nonempty queue")
    if config.kind == "asyn2f":
        record, normalized = aggregate_asyn2f(queue, new_version, config.loss_epsilon)
        if learning_rate is not None:
            record = replace(record, learning_rate=learning_rate)
        return record, kafl_buffer, normalized
    if config.kind == "fedavg":
        combined = aggregate_fedavg(queue, expected_workers)
        subs = dedup_latest(queue)
        return make_record(new_version, combined, subs, learning_rate), kafl_buffer, None
    # mstep_kafl folds the queue in arrival order, one receipt at a time
    global_w = current_global
    buf = kafl_buffer
    for sub in queue:
        global_w, buf = aggregate_mstep_kafl(
            sub, buf, global_w, config.m_buffer, config.alpha_kafl
        )
    return make_record(new_version, global_w, list(queue), learning_rate), buf, None
