"""Reservoir buffer: fill phase, replacement statistics, uniform sampling."""

import numpy as np
import pytest

from cvt.data_stream import StreamBatch
from cvt.replay import MemoryBuffer, reservoir_update, sample_memory_batch


def batch_of(labels, task_id=1):
    labels = np.asarray(labels, dtype=np.int64)
    images = np.tile(labels[:, None, None, None] % 7 / 255.0, (1, 1, 2, 2))
    return StreamBatch(images=images, labels=labels, task_id=task_id)


class TestReservoirUpdate:
    def test_fill_phase_stores_everything(self):
        buf = MemoryBuffer(5, seed=0)
        reservoir_update(buf, batch_of([0, 1, 2, 3, 4]))
        assert len(buf) == 5
        assert sorted(buf.labels_stored().tolist()) == [0, 1, 2, 3, 4]
        assert buf.seen_count == 5

    def test_zero_capacity_stays_empty(self):
        buf = MemoryBuffer(0, seed=0)
        for _ in range(20):
            reservoir_update(buf, batch_of(np.arange(10)))
        assert len(buf) == 0 and buf.seen_count == 200

    def test_fill_never_exceeds_capacity(self):
        buf = MemoryBuffer(7, seed=1)
        for start in range(0, 100, 10):
            reservoir_update(buf, batch_of(np.arange(start, start + 10)))
            assert len(buf) == min(buf.seen_count, 7)

    def test_negative_capacity_rejected(self):
        with pytest.raises(ValueError, match="capacity"):
            MemoryBuffer(-1)

    def test_deterministic_under_seed(self):
        a, b = MemoryBuffer(10, seed=42), MemoryBuffer(10, seed=42)
        for start in range(0, 200, 10):
            reservoir_update(a, batch_of(np.arange(start, start + 10)))
            reservoir_update(b, batch_of(np.arange(start, start + 10)))
        assert np.array_equal(a.labels_stored(), b.labels_stored())

    def test_inclusion_probability_is_capacity_over_n(self):
        # smaller Monte-Carlo here; the acceptance suite runs the full-size one
        cap, n, trials = 20, 100, 4000
        counts = np.zeros(n, dtype=np.int64)
        img = np.zeros(1)
        for t in range(trials):
            buf = MemoryBuffer(cap, seed=9000 + t)
            for k in range(n):
                buf.add(img, k)
            counts[buf.labels_stored()] += 1
        freq = counts / trials
        sigma = np.sqrt(0.2 * 0.8 / trials)
        assert np.all(np.abs(freq - 0.2) <= 4 * sigma)
        assert abs(freq.mean() - 0.2) < 3 * sigma / np.sqrt(n)


class TestSampleMemoryBatch:
    def test_empty_buffer_gives_empty_batch(self):
        buf = MemoryBuffer(10, seed=0)
        images, labels = sample_memory_batch(buf, 5)
        assert len(images) == 0 and len(labels) == 0

    def test_oversized_request_returns_every_item_once(self):
        buf = MemoryBuffer(10, seed=0)
        reservoir_update(buf, batch_of([3, 1, 4, 1, 5]))
        images, labels = sample_memory_batch(buf, 99)
        assert sorted(labels.tolist()) == [1, 1, 3, 4, 5]

    def test_draws_are_uniform(self):
        buf = MemoryBuffer(10, seed=7)
        reservoir_update(buf, batch_of(np.arange(10)))
        counts = np.zeros(10)
        draws = 10000
        for _ in range(draws):
            _, labels = sample_memory_batch(buf, 1)
            counts[labels[0]] += 1
        freq = counts / draws
        sigma = np.sqrt(0.1 * 0.9 / draws)
        assert np.all(np.abs(freq - 0.1) <= 3 * sigma)

    def test_without_replacement(self):
        buf = MemoryBuffer(10, seed=3)
        reservoir_update(buf, batch_of(np.arange(10)))
        for _ in range(50):
            _, labels = sample_memory_batch(buf, 6)
            assert len(np.unique(labels)) == 6

    def test_negative_size_rejected(self):
        buf = MemoryBuffer(10, seed=0)
        with pytest.raises(ValueError, match="size"):
            sample_memory_batch(buf, -1)

    def test_images_roundtrip_exactly_on_255_grid(self):
        buf = MemoryBuffer(4, seed=0)
        img = np.array([[[0.0, 1.0], [17 / 255.0, 200 / 255.0]]])
        buf.add(img, 0)
        images, _ = sample_memory_batch(buf, 1)
        assert np.array_equal(images[0], img)
