from __future__ import annotations

import heapq
from typing import Callable, Generator, Optional


class LogicalClock:
    """Discrete-event clock in integer milliseconds.

    Events run in (time, sequence) order so same-instant events keep their
    scheduling order and every run is reproducible.
    """

    def __init__(self):
        self.now = 0
        self._queue: list = []
        self._seq = 0
        self._stopped = False

    def at(self, t: int, fn: Callable[[], None]) -> None:
        if t < self.now:
            raise ValueError(f"cannot schedule at {t}, clock is at {self.now}")
        heapq.heappush(self._queue, (t, self._seq, fn))
        self._seq += 1

    def schedule(self, delay: int, fn: Callable[[], None]) -> None:
        self.at(self.now + max(0, int(delay)), fn)

    def process(self, gen: Generator, start: Optional[int] = None) -> None:
        """Drive a generator that yields millisecond delays."""
        def step():
            try:
                delay = next(gen)
            except StopIteration:
                return
            self.schedule(delay, step)
        self.at(self.now if start is None else start, step)

    def stop(self) -> None:
        self._stopped = True

    def run(self, until: Optional[int] = None) -> None:
        self._stopped = False
        while self._queue and not self._stopped:
            t, _, fn = self._queue[0]
            if until is not None and t > until:
                self.now = until
                return
            heapq.heappop(self._queue)
            self.now = t
            fn()

    def __len__(self):
        return len(self._queue)
