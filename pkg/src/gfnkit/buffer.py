"""Fixed-capacity FIFO store of terminal-object keys."""
from __future__ import annotations

from collections import Counter, deque

from .metrics import EmpiricalDistribution

DEFAULT_CAPACITY = 200_000


class FifoBuffer:
    def __init__(self, capacity: int = DEFAULT_CAPACITY):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = int(capacity)
        self._items = deque(maxlen=self.capacity)

    def __len__(self):
        return len(self._items)

    @property
    def size(self) -> int:
        return len(self._items)

    def push_batch(self, items) -> "FifoBuffer":
        self._items.extend(items)
        return self

    def items(self) -> list:
        return list(self._items)

    def snapshot(self) -> "FifoBuffer":
        copy = FifoBuffer(self.capacity)
        copy._items.extend(self._items)
        return copy

    def empirical(self) -> EmpiricalDistribution:
        if not self._items:
            raise ValueError("empty buffer")
        return EmpiricalDistribution(Counter(self._items))


def push_batch(buf: FifoBuffer, items) -> FifoBuffer:
    return buf.push_batch(items)


def empirical(buf: FifoBuffer) -> EmpiricalDistribution:
    return buf.empirical()
