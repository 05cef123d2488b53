import pytest

from gfnkit.buffer import FifoBuffer, empirical, push_batch


def test_oldest_evicted_first():
    buf = push_batch(FifoBuffer(2), ["a", "b", "c"])
    assert buf.items() == ["b", "c"]
    assert buf.size == 2


def test_push_empty_and_exact_capacity():
    buf = FifoBuffer(3).push_batch(["x"])
    buf.push_batch([])
    assert buf.items() == ["x"]
    full = FifoBuffer(3).push_batch(["a", "b", "c"])
    assert full.size == full.capacity == 3


def test_empirical_counts():
    counts = empirical(FifoBuffer(5).push_batch(["a", "a", "b"])).counts
    assert counts == {"a": 2, "b": 1}
    assert empirical(FifoBuffer(5).push_batch(["b", "a", "a"])).counts == counts
    assert empirical(FifoBuffer(5).push_batch(["z"])).counts == {"z": 1}


def test_snapshot_is_independent():
    buf = FifoBuffer(3).push_batch([1, 2])
    snap = buf.snapshot()
    buf.push_batch([3, 4])
    assert snap.items() == [1, 2] and buf.items() == [2, 3, 4]


def test_errors():
    with pytest.raises(ValueError):
        FifoBuffer(0)
    with pytest.raises(ValueError):
        FifoBuffer(2).empirical()
