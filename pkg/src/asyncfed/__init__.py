"""Asynchronous federated learning with bidirectional model aggregation.

The package splits into pure math (``aggregation``, ``models``,
``schedules``, ``kernels``), transport and storage abstractions
(``protocol``, ``broker``, ``storage``), the server/worker actors, a
deterministic discrete-event simulator (``simulation``), a monitoring
service with an HTTP surface (``monitor``), and experiment tooling
(``experiment``, ``cli``).
"""

from .aggregation import (
    GlobalModelRecord,
    LocalModelSubmission,
    StrategyConfig,
    aggregate_asyn2f,
    aggregate_fedavg,
    aggregate_mstep_kafl,
    contribution_ratio,
    local_mix_coefficient,
    merge_local,
    normalize_ratios,
)
from .datasets import Dataset, make_synthetic_dataset, split_dataset
from .models import LogisticModel, MlpModel, TrainConfig, evaluate, sgd_train_batch
from .scenario import Scenario, load_scenario
from .schedules import cosine_decay_lr
from .simulation import RunResult, replay_check, run_scenario
from .worker import WorkerProfile

__all__ = [
    "Dataset",
    "GlobalModelRecord",
    "LocalModelSubmission",
    "LogisticModel",
    "MlpModel",
    "RunResult",
    "Scenario",
    "StrategyConfig",
    "TrainConfig",
    "WorkerProfile",
    "aggregate_asyn2f",
    "aggregate_fedavg",
    "aggregate_mstep_kafl",
    "contribution_ratio",
    "cosine_decay_lr",
    "evaluate",
    "load_scenario",
    "local_mix_coefficient",
    "make_synthetic_dataset",
    "merge_local",
    "normalize_ratios",
    "replay_check",
    "run_scenario",
    "sgd_train_batch",
    "split_dataset",
]

__version__ = "0.1.0"
