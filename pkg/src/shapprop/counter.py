"""Forward-equivalent budget counter shared by the engine and the methods."""

import threading


class EvalCounter:
    """Thread-safe running total of forward-equivalents.

    One deterministic forward = 1, one gradient pass = 2 (forward plus
    backward), one probabilistic marginal evaluation = 2.
    """

    def __init__(self, total: float = 0.0):
        self._total = float(total)
        self._lock = threading.Lock()

    def add(self, n: float = 1.0) -> None:
        if n < 0:
            raise ValueError("counter increments must be nonnegative")
        with self._lock:
            self._total += n

    @property
    def total(self) -> float:
        return self._total

    def __repr__(self):
        return f"EvalCounter(total={self._total:g})"
