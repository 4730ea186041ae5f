"""Experiment sweeps: strategy/LR-regime grids, baselines, and reports.

A sweep runs one scenario under every requested (strategy, lr_regime)
pair for every seed, writing per-run metrics CSVs and event logs, a
summary table with ``mean ± std`` final accuracy, time-to-target
columns, and one SVG line chart per (strategy, regime) curve.  The
bundle is deterministic: rerunning with the same spec reproduces every
file byte for byte.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .datasets import Dataset
from .errors import ParameterError
from .models import Model, evaluate, sgd_train_batch
from .monitor import MetricEvent
from .scenario import Scenario, with_overrides
from .schedules import cosine_decay_lr
from .simulation import events_to_jsonl, metrics_to_csv, run_scenario

# FedAvg's rounds advance in lockstep, so a locally-decayed rate has no
# defined meaning for it; the grid marks that cell NA instead of running.
UNSUPPORTED_PAIRS = {("fedavg", "async_decay")}


@dataclass(frozen=True)
class ExperimentSpec:
    scenario: Scenario
    strategies: tuple[str, ...] = ("asyn2f",)
    lr_regimes: tuple[str, ...] = ("sync_decay",)
    seeds: tuple[int, ...] = (1,)
    out_dir: Path = Path("experiment-out")
    target_accuracy: float | None = None

    def __post_init__(self):
        if not self.strategies:
            raise ParameterError("need at least one strategy")
        if not self.seeds:
            raise ParameterError("need at least one seed")


@dataclass(frozen=True)
class TargetCrossing:
    version: int
    time: float
    server_epochs: int
    worker_epochs: dict[str, int]


def epochs_to_target(metrics: list[MetricEvent], target: float) -> TargetCrossing | None:
    """First global version whose tester accuracy reaches ``target``.

    Also reports how many epochs each worker (and the server, counted in
    aggregations) had completed by that simulated time; None if the
    target is never reached.
    """
    hit = None
    for event in metrics:
        if event.kind == "global_perf" and event.value >= target:
            hit = event
            break
    if hit is None or hit.version is None:
        return None
    worker_epochs: dict[str, int] = {}
    for event in metrics:
        if event.kind == "epoch_time" and event.timestamp <= hit.timestamp:
            if event.epoch is not None:
                worker_epochs[event.source_id] = max(
                    worker_epochs.get(event.source_id, 0), event.epoch
                )
    return TargetCrossing(
        version=hit.version,
        time=hit.timestamp,
        server_epochs=hit.version,
        worker_epochs=worker_epochs,
    )


def train_centralized(
    model: Model,
    train_data: Dataset,
    test_data: Dataset,
    epochs: int,
    batch_size: int,
    lr_initial: float,
    momentum: float,
    seed: int,
    lr_regime: str = "sync_decay",
    lr_total_steps: int | None = None,
) -> tuple[float, float]:
    """Ordinary mini-batch SGD on the full dataset; the comparison oracle.

    Returns (test accuracy, test loss).
    """
    rng = np.random.default_rng(seed)
    weights = model.init_weights(seed)
    velocity = np.zeros_like(weights)
    total_steps = lr_total_steps if lr_total_steps is not None else max(epochs, 1)
    batch = min(batch_size, train_data.size)
    for epoch in range(epochs):
        if lr_regime == "fixed":
            lr = lr_initial
        else:
            lr = cosine_decay_lr(min(epoch, total_steps), total_steps, lr_initial)
        order = rng.permutation(train_data.size)
        for start in range(0, train_data.size, batch):
            rows = order[start:start + batch]
            weights, _, velocity = sgd_train_batch(
                model,
                weights,
                train_data.features[rows],
                train_data.labels[rows],
                lr,
                momentum,
                velocity,
            )
    loss, accuracy = evaluate(model, weights, test_data)
    return accuracy, loss


@dataclass
class CellResult:
    strategy: str
    lr_regime: str
    supported: bool
    accuracies: list[float] = field(default_factory=list)
    times_to_target: list[float | None] = field(default_factory=list)

    @property
    def summary(self) -> str:
        if not self.supported:
            return "NA"
        finite = [a for a in self.accuracies if a is not None]
        if not finite:
            return "no tester"
        mean = float(np.mean(finite)) * 100.0
        std = float(np.std(finite)) * 100.0
        return f"{mean:.2f} ± {std:.2f}"

    @property
    def median_time_to_target(self) -> float | None:
        reached = [t for t in self.times_to_target if t is not None]
        if not reached or len(reached) < len(self.times_to_target):
            return None
        return float(np.median(reached))


def run_experiment(spec: ExperimentSpec) -> list[CellResult]:
    """Run the sweep grid and write the report bundle under ``spec.out_dir``."""
    out = Path(spec.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cells: list[CellResult] = []
    for strategy in spec.strategies:
        for regime in spec.lr_regimes:
            supported = (strategy, regime) not in UNSUPPORTED_PAIRS
            cell = CellResult(strategy, regime, supported)
            cells.append(cell)
            if not supported:
                continue
            curves: dict[str, list[tuple[float, float]]] = {}
            for seed in spec.seeds:
                variant = with_overrides(
                    spec.scenario, strategy=strategy, lr_regime=regime, seed=seed
                )
                result = run_scenario(variant)
                stem = f"{strategy}_{regime}_seed{seed}"
                (out / f"{stem}.metrics.csv").write_text(metrics_to_csv(result.metrics))
                (out / f"{stem}.events.jsonl").write_text(events_to_jsonl(result.events))
                cell.accuracies.append(result.final_accuracy)
                if spec.target_accuracy is not None:
                    crossing = epochs_to_target(result.metrics, spec.target_accuracy)
                    cell.times_to_target.append(None if crossing is None else crossing.time)
                curves[f"seed {seed}"] = [
                    (e.timestamp, e.value) for e in result.metrics if e.kind == "global_perf"
                ]
            write_svg_curves(
                out / f"{strategy}_{regime}_accuracy.svg",
                curves,
                title=f"{strategy} / {regime}: tester accuracy",
                xlabel="simulated time",
                ylabel="accuracy",
            )
    _write_summary(out / "summary.csv", cells)
    return cells


def _write_summary(path: Path, cells: list[CellResult]) -> None:
    lines = ["strategy,lr_regime,runs,final_accuracy,median_time_to_target"]
    for cell in cells:
        ttt = cell.median_time_to_target
        lines.append(
            f"{cell.strategy},{cell.lr_regime},{len(cell.accuracies)},"
            f"{cell.summary},{'' if ttt is None else repr(ttt)}"
        )
    path.write_text("\n".join(lines) + "\n")


def write_svg_curves(path, series: dict[str, list[tuple[float, float]]],
                     title: str = "", xlabel: str = "", ylabel: str = "") -> None:
    """Tiny dependency-free SVG line chart: one polyline per series."""
    width, height, margin = 640, 400, 50
    palette = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b"]
    points = [p for pts in series.values() for p in pts]
    if points:
        xs = [p[0] for p in points]
        ys = [p[1] for p in points]
        x_lo, x_hi = min(xs), max(xs)
        y_lo, y_hi = min(0.0, min(ys)), max(1.0, max(ys))
    else:
        x_lo, x_hi, y_lo, y_hi = 0.0, 1.0, 0.0, 1.0
    if x_hi == x_lo:
        x_hi = x_lo + 1.0

    def sx(x):
        return margin + (x - x_lo) / (x_hi - x_lo) * (width - 2 * margin)

    def sy(y):
        return height - margin - (y - y_lo) / (y_hi - y_lo) * (height - 2 * margin)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width / 2:.1f}" y="20" text-anchor="middle" font-size="14">{title}</text>',
        f'<line x1="{margin}" y1="{height - margin}" x2="{width - margin}" '
        f'y2="{height - margin}" stroke="black"/>',
        f'<line x1="{margin}" y1="{margin}" x2="{margin}" y2="{height - margin}" stroke="black"/>',
        f'<text x="{width / 2:.1f}" y="{height - 12}" text-anchor="middle" '
        f'font-size="11">{xlabel}</text>',
        f'<text x="14" y="{height / 2:.1f}" text-anchor="middle" font-size="11" '
        f'transform="rotate(-90 14 {height / 2:.1f})">{ylabel}</text>',
    ]
    for i, (label, pts) in enumerate(series.items()):
        color = palette[i % len(palette)]
        if pts:
            coords = " ".join(f"{sx(x):.2f},{sy(y):.2f}" for x, y in pts)
            parts.append(
                f'<polyline points="{coords}" fill="none" stroke="{color}" stroke-width="1.5"/>'
            )
        parts.append(
            f'<text x="{width - margin + 4}" y="{margin + 14 * i:.1f}" font-size="10" '
            f'fill="{color}">{label}</text>'
        )
    parts.append("</svg>")
    Path(path).write_text("\n".join(parts) + "\n")
