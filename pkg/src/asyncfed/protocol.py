"""The four JSON control messages exchanged between server and workers.

Encoding is byte-stable: UTF-8 JSON with lexicographically sorted keys
and compact separators.  Decoding validates ranges and dispatches on
``headers.message_type``; unknown fields are preserved in ``extra`` and
re-emitted on encode, but never interpreted.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field
from datetime import datetime, timedelta
from typing import Any, Iterable, Mapping

from .errors import MessageParseError, MessageValidationError, ProtocolError

STRATEGY_NAMES = ("asyn2f", "fedavg", "mstep_kafl")
ROLES = ("trainer", "tester")

_TIMESTAMP_RE = re.compile(r"^\d{4}-\d{2}-\d{2} \d{2}:\d{2}:\d{2}$")
_SIM_EPOCH = datetime(1970, 1, 1)


def format_timestamp(sim_time: float) -> str:
    """Render simulated seconds-offset time as a wire timestamp string."""
    return (_SIM_EPOCH + timedelta(seconds=int(sim_time))).strftime("%Y-%m-%d %H:%M:%S")


def _require(cond: bool, fieldpath: str, reason: str) -> None:
    if not cond:
        raise MessageValidationError(fieldpath, reason)


def _get(doc: Mapping, fieldpath: str, key: str, kind=None):
    if key not in doc:
        raise MessageValidationError(f"{fieldpath}.{key}", "missing")
    value = doc[key]
    if kind is not None and not isinstance(value, kind):
        raise MessageValidationError(
            f"{fieldpath}.{key}", f"expected {kind}, got {type(value).__name__}"
        )
    return value

def _number(doc: Mapping, fieldpath: str, key: str) -> float:
    value = _get(doc, fieldpath, key)
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise MessageValidationError(f"{fieldpath}.{key}", "expected a number")
    return value


def _timestamp(doc: Mapping, fieldpath: str) -> str:
    value = _get(doc, fieldpath, "timestamp", str)
    _require(bool(_TIMESTAMP_RE.match(value)), f"{fieldpath}.timestamp",
             f"not a 'YYYY-MM-DD HH:MM:SS' timestamp: {value!r}")
    return value


def _leftover(doc: Mapping, consumed: Iterable[str]) -> dict:
    return {k: v for k, v in doc.items() if k not in set(consumed)}


def _extras(headers_leftover: dict, content_leftover: dict) -> dict:
    extra = {}
    if headers_leftover:
        extra["headers"] = headers_leftover
    if content_leftover:
        extra["content"] = content_leftover
    return extra


@dataclass(frozen=True)
class WorkerInitMsg:
    message_type = "WORKER_INIT"

    worker_id: str
    session_id: str
    timestamp: str
    role: str
    system_info: dict
    data_size: int
    data_qod: float
    extra: dict = field(default_factory=dict)

    def validate(self) -> None:
        _require(self.role in ROLES, "content.role", f"must be one of {ROLES}")
        _require(0.0 < self.data_qod <= 1.0, "content.data_description.qod",
                 f"must be in (0, 1], got {self.data_qod}")
        if self.role == "trainer":
            _require(self.data_size >= 1, "content.data_description.size",
                     f"trainers need size >= 1, got {self.data_size}")

    def to_document(self) -> dict:
        headers = {
            "message_type": self.message_type,
            "worker_id": self.worker_id,
            "session_id": self.session_id,
            "timestamp": self.timestamp,
            **self.extra.get("headers", {}),
        }
        content = {
            "role": self.role,
            "system_info": self.system_info,
            "data_description": {"size": self.data_size, "qod": self.data_qod},
            **self.extra.get("content", {}),
        }
        return {"headers": headers, "content": content}

    @classmethod
    def from_document(cls, doc: Mapping) -> "WorkerInitMsg":
        headers = _get(doc, "", "headers", dict)
        content = _get(doc, "", "content", dict)
        desc = _get(content, "content", "data_description", dict)
        size = _number(desc, "content.data_description", "size")
        _require(float(size).is_integer(), "content.data_description.size", "must be an integer")
        msg = cls(
            worker_id=_get(headers, "headers", "worker_id", str),
            session_id=_get(headers, "headers", "session_id", str),
            timestamp=_timestamp(headers, "headers"),
            role=_get(content, "content", "role", str),
            system_info=dict(_get(content, "content", "system_info", dict)),
            data_size=int(size),
            data_qod=float(_number(desc, "content.data_description", "qod")),
            extra=_extras(
                _leftover(headers, ("message_type", "worker_id", "session_id", "timestamp")),
                _leftover(content, ("role", "system_info", "data_description")),
            ),
        )
        msg.validate()
        return msg


@dataclass(frozen=True)
class ServerInitRespMsg:
    message_type = "SERVER_INIT_RESP"

    server_id: str
    session_id: str
    timestamp: str
    model_url: str
    model_name: str
    model_version: int
    exchange_performance: float
    exchange_epoch: int
    access_key: str
    secret_key: str
    bucket_name: str
    region_name: str
    strategy: str
    extra: dict = field(default_factory=dict)

    def validate(self) -> None:
        _require(self.strategy in STRATEGY_NAMES, "content.strategy",
                 f"must be one of {STRATEGY_NAMES}, got {self.strategy!r}")
        _require(self.model_version >= 0, "content.model_info.version",
                 f"must be >= 0, got {self.model_version}")
        _require(0.0 <= self.exchange_performance <= 1.0,
                 "content.model_info.exchange_at.performance",
                 f"must be in [0, 1], got {self.exchange_performance}")
        _require(self.exchange_epoch >= 1, "content.model_info.exchange_at.epoch",
                 f"must be >= 1, got {self.exchange_epoch}")

    def to_document(self) -> dict:
        headers = {
            "message_type": self.message_type,
            "server_id": self.server_id,
            "session_id": self.session_id,
            "timestamp": self.timestamp,
            **self.extra.get("headers", {}),
        }
        content = {
            "model_info": {
                "url": self.model_url,
                "name": self.model_name,
                "version": self.model_version,
                "exchange_at": {
                    "performance": self.exchange_performance,
                    "epoch": self.exchange_epoch,
                },
            },
            "storage_info": {
                "access_key": self.access_key,
                "secret_key": self.secret_key,
                "bucket_name": self.bucket_name,
                "region_name": self.region_name,
            },
            "strategy": self.strategy,
            **self.extra.get("content", {}),
        }
        return {"headers": headers, "content": content}

    @classmethod
    def from_document(cls, doc: Mapping) -> "ServerInitRespMsg":
        headers = _get(doc, "", "headers", dict)
        content = _get(doc, "", "content", dict)
        model_info = _get(content, "content", "model_info", dict)
        exchange = _get(model_info, "content.model_info", "exchange_at", dict)
        storage = _get(content, "content", "storage_info", dict)
        version = _number(model_info, "content.model_info", "version")
        _require(float(version).is_integer(), "content.model_info.version", "must be an integer")
        epoch = _number(exchange, "content.model_info.exchange_at", "epoch")
        _require(float(epoch).is_integer(), "content.model_info.exchange_at.epoch",
                 "must be an integer")
        msg = cls(
            server_id=_get(headers, "headers", "server_id", str),
            session_id=_get(headers, "headers", "session_id", str),
            timestamp=_timestamp(headers, "headers"),
            model_url=_get(model_info, "content.model_info", "url", str),
            model_name=_get(model_info, "content.model_info", "name", str),
            model_version=int(version),
            exchange_performance=float(
                _number(exchange, "content.model_info.exchange_at", "performance")
            ),
            exchange_epoch=int(epoch),
            access_key=_get(storage, "content.storage_info", "access_key", str),
            secret_key=_get(storage, "content.storage_info", "secret_key", str),
            bucket_name=_get(storage, "content.storage_info", "bucket_name", str),
            region_name=_get(storage, "content.storage_info", "region_name", str),
            strategy=_get(content, "content", "strategy", str),
            extra=_extras(
                _leftover(headers, ("message_type", "server_id", "session_id", "timestamp")),
                _leftover(content, ("model_info", "storage_info", "strategy")),
            ),
        )
        msg.validate()
        return msg


@dataclass(frozen=True)
class ServerNotifyMsg:
    message_type = "SERVER_NOTIFY"

    server_id: str
    timestamp: str
    worker_ids: tuple[str, ...]
    model_id: str
    version: int
    model_name: str
    total_data_size: int
    avg_qod: float
    avg_loss: float
    learning_rate: float | None = None
    extra: dict = field(default_factory=dict)

    def validate(self) -> None:
        _require(self.version >= 1, "content.global_model.version",
                 f"must be >= 1, got {self.version}")
        _require(0.0 < self.avg_qod <= 1.0, "content.global_model.avg_qod",
                 f"must be in (0, 1], got {self.avg_qod}")
        _require(self.avg_loss > 0.0, "content.global_model.avg_loss",
                 f"must be positive, got {self.avg_loss}")
        _require(self.total_data_size >= 1, "content.global_model.total_data_size",
                 f"must be >= 1, got {self.total_data_size}")
        if self.learning_rate is not None:
            _require(self.learning_rate > 0.0, "content.learning_rate",
                     f"must be positive, got {self.learning_rate}")

    def to_document(self) -> dict:
        headers = {
            "message_type": self.message_type,
            "server_id": self.server_id,
            "timestamp": self.timestamp,
            **self.extra.get("headers", {}),
        }
        content: dict[str, Any] = {
            "worker_id": list(self.worker_ids),
            "global_model": {
                "id": self.model_id,
                "version": self.version,
                "name": self.model_name,
                "total_data_size": self.total_data_size,
                "avg_qod": self.avg_qod,
                "avg_loss": self.avg_loss,
            },
            **self.extra.get("content", {}),
        }
        if self.learning_rate is not None:
            content["learning_rate"] = self.learning_rate
        return {"headers": headers, "content": content}

    @classmethod
    def from_document(cls, doc: Mapping) -> "ServerNotifyMsg":
        headers = _get(doc, "", "headers", dict)
        content = _get(doc, "", "content", dict)
        gm = _get(content, "content", "global_model", dict)
        worker_ids = _get(content, "content", "worker_id", list)
        for i, wid in enumerate(worker_ids):
            _require(isinstance(wid, str), f"content.worker_id[{i}]", "must be a string")
        version = _number(gm, "content.global_model", "version")
        _require(float(version).is_integer(), "content.global_model.version", "must be an integer")
        total = _number(gm, "content.global_model", "total_data_size")
        _require(float(total).is_integer(), "content.global_model.total_data_size",
                 "must be an integer")
        lr = content.get("learning_rate")
        if lr is not None and (isinstance(lr, bool) or not isinstance(lr, (int, float))):
            raise MessageValidationError("content.learning_rate", "expected a number")
        msg = cls(
            server_id=_get(headers, "headers", "server_id", str),
            timestamp=_timestamp(headers, "headers"),
            worker_ids=tuple(worker_ids),
            model_id=_get(gm, "content.global_model", "id", str),
            version=int(version),
            model_name=_get(gm, "content.global_model", "name", str),
            total_data_size=int(total),
            avg_qod=float(_number(gm, "content.global_model", "avg_qod")),
            avg_loss=float(_number(gm, "content.global_model", "avg_loss")),
            learning_rate=None if lr is None else float(lr),
            extra=_extras(
                _leftover(headers, ("message_type", "server_id", "timestamp")),
                _leftover(content, ("worker_id", "global_model", "learning_rate")),
            ),
        )
        msg.validate()
        return msg


@dataclass(frozen=True)
class WorkerNotifyMsg:
    message_type = "WORKER_NOTIFY"

    worker_id: str
    session_id: str
    timestamp: str
    storage_path: str
    file_name: str
    global_version_used: int
    performance: float
    loss: float
    extra: dict = field(default_factory=dict)

    def validate(self) -> None:
        _require(bool(self.storage_path), "content.storage_path", "must be nonempty")
        _require(bool(self.file_name), "content.file_name", "must be nonempty")
        _require(self.global_version_used >= 0, "content.global_version_used",
                 f"must be >= 0, got {self.global_version_used}")
        _require(0.0 <= self.performance <= 1.0, "content.performance",
                 f"must be in [0, 1], got {self.performance}")
        _require(self.loss > 0.0 and math.isfinite(self.loss),
                 "content.loss", f"must be positive and finite, got {self.loss}")

    @property
    def object_key(self) -> str:
        return f"{self.storage_path}/{self.file_name}"

    def to_document(self) -> dict:
        headers = {
            "message_type": self.message_type,
            "worker_id": self.worker_id,
            "session_id": self.session_id,
            "timestamp": self.timestamp,
            **self.extra.get("headers", {}),
        }
        content = {
            "storage_path": self.storage_path,
            "file_name": self.file_name,
            "global_version_used": self.global_version_used,
            "performance": self.performance,
            "loss": self.loss,
            **self.extra.get("content", {}),
        }
        return {"headers": headers, "content": content}

    @classmethod
    def from_document(cls, doc: Mapping) -> "WorkerNotifyMsg":
        headers = _get(doc, "", "headers", dict)
        content = _get(doc, "", "content", dict)
        version_used = _number(content, "content", "global_version_used")
        _require(float(version_used).is_integer(), "content.global_version_used",
                 "must be an integer")
        msg = cls(
            worker_id=_get(headers, "headers", "worker_id", str),
            session_id=_get(headers, "headers", "session_id", str),
            timestamp=_timestamp(headers, "headers"),
            storage_path=_get(content, "content", "storage_path", str),
            file_name=_get(content, "content", "file_name", str),
            global_version_used=int(version_used),
            performance=float(_number(content, "content", "performance")),
            loss=float(_number(content, "content", "loss")),
            extra=_extras(
                _leftover(headers, ("message_type", "worker_id", "session_id", "timestamp")),
                _leftover(content, ("storage_path", "file_name",
                                    "global_version_used", "performance", "loss")),
            ),
        )
        msg.validate()
        return msg


WireMessage = WorkerInitMsg | ServerInitRespMsg | ServerNotifyMsg | WorkerNotifyMsg

_MESSAGE_TYPES: dict[str, type] = {
    cls.message_type: cls
    for cls in (WorkerInitMsg, ServerInitRespMsg, ServerNotifyMsg, WorkerNotifyMsg)
}


def encode(msg: WireMessage) -> bytes:
    """Byte-stable UTF-8 JSON: sorted keys, compact separators."""
    msg.validate()
    return json.dumps(msg.to_document(), sort_keys=True, separators=(",", ":")).encode("utf-8")


def decode(data: bytes | str) -> WireMessage:
    """Parse, dispatch on headers.message_type, and validate ranges."""
    try:
        doc = json.loads(data)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise MessageParseError(f"payload is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise MessageParseError(f"payload must be a JSON object, got {type(doc).__name__}")
    headers = doc.get("headers")
    if not isinstance(headers, dict) or "message_type" not in headers:
        raise ProtocolError("payload has no headers.message_type")
    mtype = headers["message_type"]
    cls = _MESSAGE_TYPES.get(mtype)
    if cls is None:
        raise ProtocolError(f"unknown message_type {mtype!r}")
    return cls.from_document(doc)


class NotifyStreamValidator:
    """Checks version monotonicity across a stream of SERVER_NOTIFY messages."""

    def __init__(self):
        self._last_version = 0

    def observe(self, msg: ServerNotifyMsg) -> None:
        if msg.version <= self._last_version:
            raise MessageValidationError(
                "content.global_model.version",
                f"{msg.version} does not exceed previously notified {self._last_version}",
            )
        self._last_version = msg.version


def _walk_numeric_lists(node, out: list[tuple[float, ...]]) -> None:
    if isinstance(node, dict):
        for value in node.values():
            _walk_numeric_lists(value, out)
    elif isinstance(node, list):
        if node and all(
            isinstance(v, (int, float)) and not isinstance(v, bool) for v in node
        ):
            out.append(tuple(float(v) for v in node))
        else:
            for value in node:
                _walk_numeric_lists(value, out)


def find_feature_leaks(payload: bytes, feature_rows: set[tuple[float, ...]]) -> list[tuple[float, ...]]:
    """Return any numeric list in a JSON payload that equals a dataset row.

    Non-JSON payloads yield no findings here; binary payloads are vetted
    separately against the weight format.
    """
    try:
        doc = json.loads(payload)
    except (json.JSONDecodeError, UnicodeDecodeError):
        return []
    candidates: list[tuple[float, ...]] = []
    _walk_numeric_lists(doc, candidates)
    return [c for c in candidates if c in feature_rows]
