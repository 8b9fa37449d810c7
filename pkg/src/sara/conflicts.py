"""Conflict detection and resolution for near-simultaneous updates.

Two incremental updates conflict when they touch the same node property,
come from different senders, and land within a configurable time window
of each other (server receipt clock, so client clock skew is moot).

Resolution order: a user hierarchy outranks everything ("changes by the
higher-ranked user prevail"); otherwise the session strategy decides:
last writer wins, merge into the componentwise mean, or reject the
late arrival.  The first event of a conflicting pair has already been
applied and broadcast by the time the second shows up, so resolutions
are expressed as what to do with the incoming event: apply it, apply a
synthetic replacement, or reject it.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

from sara.errors import ConfigError, MergeShapeMismatch
from sara.events import (
    SYSTEM_SENDER,
    EventEnvelope,
    IncrementalUpdate,
    make_event,
)

DEFAULT_WINDOW_MS = 100


class ResolutionStrategy(str, Enum):
    LAST_WRITER_WINS = "LAST_WRITER_WINS"
    MERGE_MEAN = "MERGE_MEAN"
    REJECT_SECOND = "REJECT_SECOND"

    @staticmethod
    def parse(text: str) -> "ResolutionStrategy":
        try:
            return ResolutionStrategy(text)
        except ValueError:
            raise ConfigError(f"unknown conflict strategy {text!r}") from None


@dataclass
class Conflict:
    first: EventEnvelope
    second: EventEnvelope
    key: tuple[str, str]
    window_ms: int


@dataclass
class Resolution:
    """apply_events go through the normal apply/broadcast path; a rejected
    envelope earns its sender an event-rejected notice."""

    apply_events: list[EventEnvelope] = field(default_factory=list)
    rejected: EventEnvelope | None = None
    reason: str = ""


class ConflictDetector:
    """Sliding log of recently accepted updates, scanned per arrival."""

    def __init__(self, window_ms: int = DEFAULT_WINDOW_MS):
        if window_ms < 0:
            raise ConfigError("conflict window must be non-negative")
        self.window_ms = window_ms
        self.log: list[EventEnvelope] = []

    def detect(self, event: EventEnvelope) -> Conflict | None:
        """Most recent logged update with the same key and another sender."""
        if not isinstance(event.payload, IncrementalUpdate):
            return None
        key = (event.payload.node_id, event.payload.property_path)
        for earlier in reversed(self.log):
            if (earlier.payload.node_id, earlier.payload.property_path) != key:
                continue
            if earlier.sender_id == event.sender_id:
                continue
            if abs(event.ts - earlier.ts) <= self.window_ms:
                return Conflict(first=earlier, second=event, key=key,
                                window_ms=self.window_ms)
        return None

    def observe(self, event: EventEnvelope) -> None:
        if isinstance(event.payload, IncrementalUpdate):
            self.log.append(event)

    def drop(self, event: EventEnvelope) -> None:
        self.log = [e for e in self.log if e.event_id != event.event_id]

    def prune(self, now_ms: int) -> None:
        horizon = now_ms - 2 * self.window_ms
        self.log = [e for e in self.log if e.ts >= horizon]


def _mean_value(a, b):
    for value in (a, b):
        if (not isinstance(value, (list, tuple)) or not value
                or any(isinstance(c, bool) or not isinstance(c, (int, float))
                       for c in value)):
            raise MergeShapeMismatch(
                "merge needs numeric vectors on both sides")
    if len(a) != len(b):
        raise MergeShapeMismatch(
            f"merge arity mismatch: {len(a)} vs {len(b)}")
    return [(float(x) + float(y)) / 2.0 for x, y in zip(a, b)]


def resolve(conflict: Conflict, strategy: ResolutionStrategy,
            composite=None) -> Resolution:
    """Deterministic outcome for one conflicting pair."""
    first, second = conflict.first, conflict.second
    if composite is not None:
        winner = composite.higher_priority(first.sender_id, second.sender_id)
        if winner == first.sender_id:
            return Resolution(rejected=second,
                              reason="conflict: outranked by an earlier update")
        if winner == second.sender_id:
            return Resolution(apply_events=[second])
    if strategy == ResolutionStrategy.LAST_WRITER_WINS:
        if second.ts >= first.ts:
            return Resolution(apply_events=[second])
        return Resolution(rejected=second,
                          reason="conflict: an update with a later timestamp stands")
    if strategy == ResolutionStrategy.MERGE_MEAN:
        merged_value = _mean_value(first.payload.new_value,
                                   second.payload.new_value)
        merged = make_event(
            sender_id=SYSTEM_SENDER,
            session_id=second.session_id,
            payload=IncrementalUpdate(node_id=second.payload.node_id,
                                      property_path=second.payload.property_path,
                                      new_value=merged_value),
            ts=second.ts,
        )
        return Resolution(apply_events=[merged])
    if strategy == ResolutionStrategy.REJECT_SECOND:
        return Resolution(rejected=second,
                          reason="conflict: an earlier concurrent update stands")
    raise ConfigError(f"unknown conflict strategy {strategy!r}")
