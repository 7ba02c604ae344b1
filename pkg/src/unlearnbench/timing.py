"""Injectable clocks for timing training and unlearning runs.

Training loops report their work through ``charge(units)`` (multiply-adds).
The wall clock ignores it; the work clock turns it into simulated seconds so
timing-dependent results are reproducible bit for bit.
"""
from __future__ import annotations

import time


class WallClock:
    name = "wall"

    def now(self) -> float:
        return time.perf_counter()

    def charge(self, units) -> None:
        pass


class WorkClock:
    """Deterministic clock driven by charged work.

    Every reading also advances by ``tick`` seconds, so any timed span is
    strictly positive even when no work was charged.
    """

    name = "work"

    def __init__(self, seconds_per_unit: float = 1e-9, tick: float = 1e-6):
        self.seconds_per_unit = seconds_per_unit
        self.tick = tick
        self._units = 0
        self._reads = 0

    def now(self) -> float:
        self._reads += 1
        return self._units * self.seconds_per_unit + self._reads * self.tick

    def charge(self, units) -> None:
        self._units += int(units)


def make_clock(kind: str):
    if kind == "wall":
        return WallClock()
    if kind == "work":
        return WorkClock()
    raise ValueError(f"unknown clock kind {kind!r}")
