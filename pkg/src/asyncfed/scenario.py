"""Scenario definitions: worker fleet, data, training and server knobs.

Scenario files are INI-style key/value sections (see README for the
schema).  Parse failures carry the offending line number.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field, replace

from .aggregation import StrategyConfig
from .errors import ScenarioError
from .models import LR_REGIMES, MODEL_KINDS, TrainConfig
from .server import AggregationCondition, ServerConfig, StopCondition
from .worker import WorkerProfile


@dataclass(frozen=True)
class DataSpec:
    n_train: int = 2000
    n_test: int = 400
    dims: int = 2
    classes: int = 2
    separation: float = 3.0
    split_mode: str = "disjoint_iid"


@dataclass
class Scenario:
    name: str = "scenario"
    seed: int = 1
    sim_duration: float = 10_000.0
    data: DataSpec = field(default_factory=DataSpec)
    model_kind: str = "logistic"
    hidden: int = 16
    train: TrainConfig = field(default_factory=TrainConfig)
    server: ServerConfig = field(default_factory=ServerConfig)
    profiles: list[WorkerProfile] = field(default_factory=list)
    controls: list[tuple[float, dict]] = field(default_factory=list)

    def __post_init__(self):
        trainers = [p for p in self.profiles if p.role == "trainer"]
        testers = [p for p in self.profiles if p.role == "tester"]
        if not trainers:
            raise ScenarioError("scenario needs at least one trainer")
        if len(testers) > 1:
            raise ScenarioError("scenario allows at most one tester")
        if self.model_kind not in MODEL_KINDS:
            raise ScenarioError(f"unknown model kind {self.model_kind!r}")

    @property
    def trainers(self) -> list[WorkerProfile]:
        return [p for p in self.profiles if p.role == "trainer"]

    @property
    def tester(self) -> WorkerProfile | None:
        testers = [p for p in self.profiles if p.role == "tester"]
        return testers[0] if testers else None


def with_overrides(
    scenario: Scenario,
    strategy: str | None = None,
    lr_regime: str | None = None,
    seed: int | None = None,
) -> Scenario:
    """Clone a scenario with a different strategy, LR regime, or seed."""
    out = replace(scenario)
    out.profiles = list(scenario.profiles)
    out.controls = list(scenario.controls)
    if strategy is not None:
        strat = replace(scenario.server.strategy, kind=strategy)
        agg = replace(
            scenario.server.aggregation, count_distinct=(strategy != "mstep_kafl")
        )
        out.server = replace(scenario.server, strategy=strat, aggregation=agg)
    if lr_regime is not None:
        out.train = replace(scenario.train, lr_regime=lr_regime)
        out.server = replace(out.server, lr_regime=lr_regime)
    if seed is not None:
        out.seed = seed
    return out


# ----------------------------------------------------------------- parsing

_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


class _SectionReader:
    def __init__(self, parser: configparser.ConfigParser, section: str, lines: list[str]):
        self.section = section
        self.values = dict(parser[section]) if parser.has_section(section) else {}
        self.lines = lines

    def _line_of(self, key: str) -> int | None:
        in_section = False
        for lineno, raw in enumerate(self.lines, start=1):
            text = raw.strip()
            if text.startswith("[") and text.endswith("]"):
                in_section = text[1:-1].strip() == self.section
            elif in_section and text.split("=")[0].strip() == key:
                return lineno
        return None

    def _fail(self, key: str, reason: str):
        raise ScenarioError(f"[{self.section}] {key}: {reason}", line=self._line_of(key))

    def get(self, key, default=None, cast=str):
        raw = self.values.get(key)
        if raw is None or raw == "":
            return default
        if cast is bool:
            low = raw.strip().lower()
            if low in _TRUE:
                return True
            if low in _FALSE:
                return False
            self._fail(key, f"expected a boolean, got {raw!r}")
        try:
            return cast(raw)
        except (TypeError, ValueError):
            self._fail(key, f"expected {cast.__name__}, got {raw!r}")


def load_scenario(path) -> Scenario:
    """Parse a scenario file; errors name the offending line."""
    with open(path, "r", encoding="utf-8") as fh:
        text = fh.read()
    lines = text.splitlines()
    parser = configparser.ConfigParser(inline_comment_prefixes=("#",))
    try:
        parser.read_string(text, source=str(path))
    except configparser.ParsingError as exc:
        first_bad = exc.errors[0][0] if getattr(exc, "errors", None) else None
        raise ScenarioError(str(exc).replace("\n", " "), line=first_bad) from exc
    except configparser.Error as exc:
        raise ScenarioError(str(exc)) from exc

    sc = _SectionReader(parser, "scenario", lines)
    da = _SectionReader(parser, "data", lines)
    mo = _SectionReader(parser, "model", lines)
    tr = _SectionReader(parser, "train", lines)
    se = _SectionReader(parser, "server", lines)

    name = sc.get("name", "scenario")
    seed = sc.get("seed", 1, int)
    sim_duration = sc.get("sim_duration", 10_000.0, float)

    data = DataSpec(
        n_train=da.get("n_train", 2000, int),
        n_test=da.get("n_test", 400, int),
        dims=da.get("dims", 2, int),
        classes=da.get("classes", 2, int),
        separation=da.get("separation", 3.0, float),
        split_mode=da.get("split_mode", "disjoint_iid"),
    )

    lr_regime = tr.get("lr_regime", "fixed")
    if lr_regime not in LR_REGIMES:
        tr._fail("lr_regime", f"must be one of {LR_REGIMES}")

    try:
        train = TrainConfig(
            batch_size=tr.get("batch_size", 32, int),
            local_rounds_per_epoch=tr.get("local_rounds_per_epoch", 1, int),
            lr_regime=lr_regime,
            lr_initial=tr.get("lr_initial", 0.01, float),
            momentum=tr.get("momentum", 0.9, float),
            seed=0,
            lr_total_steps=tr.get("lr_total_steps", 100, int),
        )

        strategy_kind = se.get("strategy", "asyn2f")
        strategy = StrategyConfig(
            kind=strategy_kind,
            beta=se.get("beta", 0.5, float),
            k_fedavg=se.get("k_fedavg", 1, int),
            m_buffer=se.get("m_buffer", 3, int),
            alpha_kafl=se.get("alpha_kafl", 0.5, float),
        )
        aggregation = AggregationCondition(
            mode=se.get("aggregation_mode", "on_count"),
            n=se.get("aggregation_n", 3, int),
            interval=se.get("aggregation_interval", 60.0, float),
            count_distinct=se.get("count_distinct", strategy_kind != "mstep_kafl", bool),
        )
        stop = StopCondition(
            max_versions=se.get("max_versions", None, int),
            max_duration=se.get("max_duration", None, float),
            target_performance=se.get("target_performance", None, float),
        )
        server = ServerConfig(
            server_id=se.get("server_id", "server"),
            job_id=se.get("job_id", name),
            model_name=se.get("model_name", name),
            aggregation=aggregation,
            stop=stop,
            strategy=strategy,
            exchange_performance=se.get("exchange_performance", 1.0, float),
            exchange_epoch=se.get("exchange_epoch", 1, int),
            lr_regime=lr_regime,
            lr_initial=train.lr_initial,
            lr_total_steps=train.lr_total_steps,
            check_period=se.get("check_period", 1.0, float),
        )

        profiles = []
        controls = []
        for section in parser.sections():
            if section.startswith("worker."):
                wid = section.split(".", 1)[1]
                wr = _SectionReader(parser, section, lines)
                profiles.append(
                    WorkerProfile(
                        worker_id=wid,
                        role=wr.get("role", "trainer"),
                        batch_cost=wr.get("batch_cost", 1.0, float),
                        uplink_latency=wr.get("uplink_latency", 0.0, float),
                        downlink_latency=wr.get("downlink_latency", 0.0, float),
                        join_time=wr.get("join_time", 0.0, float),
                        failure_time=wr.get("failure_time", None, float),
                        qod=wr.get("qod", 1.0, float),
                    )
                )
            elif section.startswith("control."):
                cr = _SectionReader(parser, section, lines)
                cmd = {"cmd": cr.get("cmd")}
                if cr.get("id") is not None:
                    cmd["id"] = cr.get("id")
                controls.append((cr.get("time", 0.0, float), cmd))

        return Scenario(
            name=name,
            seed=seed,
            sim_duration=sim_duration,
            data=data,
            model_kind=mo.get("kind", "logistic"),
            hidden=mo.get("hidden", 16, int),
            train=train,
            server=server,
            profiles=profiles,
            controls=sorted(controls, key=lambda c: c[0]),
        )
    except ScenarioError:
        raise
    except Exception as exc:
        raise ScenarioError(str(exc)) from exc
