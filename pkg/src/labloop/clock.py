"""Clock abstraction: campaigns take time from a callable so simulation runs on a virtual clock."""

from __future__ import annotations

import time


class VirtualClock:
    """Deterministic clock for simulation; only advances when told to."""

    def __init__(self, start: float = 0.0):
        self._now = float(start)

    @property
    def now(self) -> float:
        return self._now

    def advance(self, seconds: float) -> float:
        # time never goes backwards
        if seconds < 0:
            raise ValueError(f"cannot advance by negative seconds: {seconds}")
        self._now += float(seconds)
        return self._now

    def __call__(self) -> float:
        return self._now


def wall_clock() -> float:
    """Real time, for live campaigns."""
    return time.time()
