"""Accumulating wall-clock timer for annotated code regions."""

from __future__ import annotations

import time
from collections import defaultdict
from contextlib import contextmanager


class Timer:
    def __init__(self):
        self.totals = defaultdict(float)

    @contextmanager
    def section(self, name):
        t0 = time.perf_counter()
        try:
            yield
        finally:
            self.totals[name] += time.perf_counter() - t0

    def add(self, name, seconds):
        self.totals[name] += seconds

    def reset(self):
        self.totals.clear()

    def snapshot(self):
        return dict(self.totals)
