"""Routing-key publish/subscribe with a deterministic in-memory backend.

The in-memory broker is authoritative for tests and simulation.  An
AMQP 0-9-1 client can be slotted in by implementing ``Broker``; the
routing-key naming convention is ``training.<job_id>.<direction>``
(directions: ``server`` for server-to-worker fan-out, ``worker`` for
worker-to-server traffic, ``control`` for operator commands).

When constructed with a scheduler (any object exposing
``call_later(delay, fn)``), deliveries become scheduled events at
``publish_time + per-link latency``; without one they are immediate.
Per-subscriber FIFO order and exactly-once delivery hold either way.
"""

from __future__ import annotations

from abc import ABC, abstractmethod
from collections import deque
from dataclasses import dataclass, field
from typing import Callable

from .errors import ParameterError, RegistrationError


@dataclass
class Subscription:
    queue_name: str
    routing_key: str
    latency: float = 0.0
    on_message: Callable[[bytes], None] | None = None
    pending: deque = field(default_factory=deque)


class Broker(ABC):
    """Adapter interface; the AMQP slot implements exactly this surface."""

    @abstractmethod
    def subscribe(
        self,
        queue_name: str,
        routing_key: str,
        on_message: Callable[[bytes], None] | None = None,
        latency: float = 0.0,
    ) -> Subscription: ...

    @abstractmethod
    def publish(self, routing_key: str, payload: bytes, delay: float = 0.0) -> int: ...


class InMemoryBroker(Broker):
    def __init__(self, scheduler=None):
        self._scheduler = scheduler
        self._subs_by_key: dict[str, list[Subscription]] = {}
        self._queue_names: set[str] = set()
        self.published_log: list[tuple[str, bytes]] = []

    def subscribe(self, queue_name, routing_key, on_message=None, latency=0.0):
        if queue_name in self._queue_names:
            raise RegistrationError(f"queue name {queue_name!r} already registered")
        if latency < 0:
            raise ParameterError(f"latency must be nonnegative, got {latency}")
        sub = Subscription(queue_name, routing_key, latency, on_message)
        self._queue_names.add(queue_name)
        self._subs_by_key.setdefault(routing_key, []).append(sub)
        return sub

    def publish(self, routing_key: str, payload: bytes, delay: float = 0.0) -> int:
        """Enqueue to all current subscribers; returns how many will receive it.

        ``delay`` models sender-side latency (e.g. a worker's uplink) and
        adds to each subscriber's own link latency.
        """
        if not payload:
            raise ParameterError("cannot publish an empty payload")
        if delay < 0:
            raise ParameterError(f"delay must be nonnegative, got {delay}")
        self.published_log.append((routing_key, bytes(payload)))
        subscribers = list(self._subs_by_key.get(routing_key, ()))
        for sub in subscribers:
            if self._scheduler is None:
                self._deliver(sub, payload)
            else:
                self._scheduler.call_later(
                    delay + sub.latency, lambda s=sub, p=payload: self._deliver(s, p)
                )
        return len(subscribers)

    @staticmethod
    def _deliver(sub: Subscription, payload: bytes) -> None:
        sub.pending.append(payload)
        if sub.on_message is not None:
            sub.on_message(payload)

    def drain(self, queue_name: str) -> list[bytes]:
        """Pop all pending payloads for a queue, oldest first."""
        for subs in self._subs_by_key.values():
            for sub in subs:
                if sub.queue_name == queue_name:
                    out = list(sub.pending)
                    sub.pending.clear()
                    return out
        raise RegistrationError(f"unknown queue name {queue_name!r}")
