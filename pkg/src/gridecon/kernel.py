"""Deterministic discrete-event simulation kernel.

Entities exchange messages through a totally ordered event queue. Events are
delivered in (time, seq) order, where seq is a monotonically increasing
counter assigned at scheduling time, so simultaneous events always replay in
the order they were scheduled. Given identical inputs, a simulation produces
an identical event trace on every platform.
"""

from __future__ import annotations

import hashlib
import heapq
import random
from dataclasses import dataclass
from typing import Any


class TimeInPastError(ValueError):
    """Raised when an event is scheduled before the current clock."""


class UnknownTargetError(KeyError):
    """Raised when an event targets an entity id that is not registered."""


@dataclass(frozen=True)
class Msg:
    """Generic event payload.

    ``kind`` selects the handler branch; ``job``/``resource``/``value`` feed
    the trace columns; ``data`` carries arbitrary untraced state.
    """

    kind: str
    job: str = ""
    resource: str = ""
    value: Any = ""
    data: Any = None


@dataclass(frozen=True)
class Event:
    time: float
    seq: int
    target: str
    payload: Any


@dataclass
class RunStats:
    events_delivered: int
    final_time: float


class Entity:
    """Base class for addressable simulation entities."""

    def __init__(self, entity_id: str):
        self.id = entity_id

    def handle(self, sim: "Simulator", event: Event) -> None:
        raise NotImplementedError


class SeededRng:
    """Reproducible random stream with labelled splitting.

    Wraps the Mersenne Twister (``random.Random``), which is fully specified
    and platform independent. Child streams derive their seed from the first
    8 bytes of SHA-256("<seed>/<label>"), so any (seed, label) pair denotes
    the same stream everywhere.
    """

    def __init__(self, seed: int):
        self.seed = int(seed)
        self.stream = random.Random(self.seed)

    def split(self, label: str) -> "SeededRng":
        digest = hashlib.sha256(f"{self.seed}/{label}".encode("utf-8")).digest()
        return SeededRng(int.from_bytes(digest[:8], "little"))


#: Columns of the event trace, in emission order.
TRACE_HEADER = ("time", "seq", "entity", "kind", "job", "resource", "value")


class Simulator:
    """Simulation clock, event queue, and entity registry.

    The clock only ever advances to delivered-event times; ``run_until``
    never fast-forwards to its limit when the queue drains early.
    """

    def __init__(self, seed: int = 0, tracing: bool = False):
        self.rng = SeededRng(seed)
        self.tracing = tracing
        self.trace_rows: list[tuple] = []
        self._clock = 0.0
        self._next_seq = 0
        self._queue: list[tuple[float, int, Event]] = []
        self._entities: dict[str, Entity] = {}

    def now(self) -> float:
        return self._clock

    def add_entity(self, entity: Entity) -> None:
        if entity.id in self._entities:
            raise ValueError(f"duplicate entity id {entity.id!r}")
        self._entities[entity.id] = entity

    def entity(self, entity_id: str) -> Entity:
        return self._entities[entity_id]

    def schedule_at(self, time: float, target: str, payload: Any) -> int:
        """Enqueue a message for delivery at ``time``; returns the event id."""
        if time < self._clock:
            raise TimeInPastError(
                f"cannot schedule at {time} (now is {self._clock})"
            )
        if target not in self._entities:
            raise UnknownTargetError(target)
        seq = self._next_seq
        self._next_seq += 1
        event = Event(time=time, seq=seq, target=target, payload=payload)
        heapq.heappush(self._queue, (time, seq, event))
        return seq

    def schedule_in(self, delay: float, target: str, payload: Any) -> int:
        return self.schedule_at(self._clock + delay, target, payload)

    def run_until(self, limit: float) -> RunStats:
        """Deliver every queued event with time <= limit, in (time, seq) order."""
        if limit < self._clock:
            raise TimeInPastError(f"limit {limit} is before now {self._clock}")
        delivered = 0
        while self._queue and self._queue[0][0] <= limit:
            _, _, event = heapq.heappop(self._queue)
            self._clock = event.time
            if self.tracing:
                self._trace(event)
            self._entities[event.target].handle(self, event)
            delivered += 1
        return RunStats(events_delivered=delivered, final_time=self._clock)

    def pending(self) -> int:
        return len(self._queue)

    def next_event_time(self) -> float | None:
        return self._queue[0][0] if self._queue else None

    def _trace(self, event: Event) -> None:
        p = event.payload
        self.trace_rows.append(
            (
                event.time,
                event.seq,
                event.target,
                getattr(p, "kind", type(p).__name__),
                getattr(p, "job", ""),
                getattr(p, "resource", ""),
                getattr(p, "value", ""),
            )
        )
