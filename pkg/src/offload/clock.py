"""Time sources: a manually advanced virtual clock and the wall clock."""

import threading
import time


class VirtualClock:
    """Seconds since start, advanced only by ``advance``/``sleep``."""

    deterministic = True

    def __init__(self, start: float = 0.0):
        self._now = start
        self._lock = threading.Lock()

    def now(self) -> float:
        with self._lock:
            return self._now

    def advance(self, seconds: float) -> None:
        if seconds < 0:
            raise ValueError("cannot move time backwards")
        with self._lock:
            self._now += seconds

    sleep = advance


class WallClock:
    deterministic = False

    def __init__(self):
        self._t0 = time.monotonic()

    def now(self) -> float:
        return time.monotonic() - self._t0

    def advance(self, seconds: float) -> None:
        time.sleep(seconds)

    sleep = advance


def make_clock(mode: str):
    if mode == "deterministic":
        return VirtualClock()
    if mode == "wall":
        return WallClock()
    raise ValueError(f"clock mode must be 'deterministic' or 'wall', got {mode!r}")
