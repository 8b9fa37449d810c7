"""Clock abstraction so servers and simulations share one time source.

The server stamps every event at receipt.  Production uses the system
clock; simulations inject a virtual clock that only moves when told to,
which makes timestamp-sensitive behavior (conflict windows) reproducible.
"""

from __future__ import annotations

import threading
import time


class Clock:
    def now_ms(self) -> int:
        raise NotImplementedError


class SystemClock(Clock):
    def now_ms(self) -> int:
        return time.time_ns() // 1_000_000


class VirtualClock(Clock):
    """Manually advanced clock; thread-safe, monotone."""

    def __init__(self, start_ms: int = 0):
        self._now = start_ms
        self._lock = threading.Lock()

    def now_ms(self) -> int:
        with self._lock:
            return self._now

    def advance(self, delta_ms: int) -> int:
        if delta_ms < 0:
            raise ValueError("clock cannot move backwards")
        with self._lock:
            self._now += delta_ms
            return self._now

    def set(self, now_ms: int) -> None:
        with self._lock:
            if now_ms < self._now:
                raise ValueError("clock cannot move backwards")
            self._now = now_ms
