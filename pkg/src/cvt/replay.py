"""Fixed-capacity rehearsal buffer maintained by reservoir sampling.

After n stream examples have been offered, every one of them sits in the
buffer with probability capacity/n. Images are stored un-augmented as uint8
(the stream's value grid is 1/255, so the round-trip is exact) and replayed
samples are re-augmented at use.
"""

from __future__ import annotations

import numpy as np

from .seeding import BUFFER, rng_from


class MemoryBuffer:
    """Reservoir of (image, label) pairs with a stream-length counter."""

    def __init__(self, capacity: int, seed: int = 0, rng: np.random.Generator | None = None):
        if capacity < 0:
            raise ValueError(f"capacity must be >= 0, got {capacity}")
        self.capacity = capacity
        self.seen_count = 0
        self.rng = rng if rng is not None else rng_from(seed, BUFFER)
        self._images = None  # allocated on first add, (capacity,) + image shape
        self._labels = np.zeros(capacity, dtype=np.int64)
        self._fill = 0

    def __len__(self):
        return self._fill

    def add(self, image: np.ndarray, label: int):
        """Offer one example to the reservoir."""
        self.seen_count += 1
        if self.capacity == 0:
            return
        if self._images is None:
            self._images = np.zeros((self.capacity,) + np.shape(image), dtype=np.uint8)
        if self._fill < self.capacity:
            slot = self._fill
            self._fill += 1
        else:
            # single draw: P(slot < capacity) = capacity/seen, uniform over slots
            slot = int(self.rng.integers(0, self.seen_count))
            if slot >= self.capacity:
                return
        self._images[slot] = np.clip(np.asarray(image) * 255.0, 0, 255).round().astype(np.uint8)
        self._labels[slot] = label

    def sample(self, size: int):
        """Uniform sample without replacement of min(size, fill) items."""
        if size < 0:
            raise ValueError(f"sample size must be >= 0, got {size}")
        take = min(size, self._fill)
        if take == 0:
            shape = (0,) + (self._images.shape[1:] if self._images is not None else ())
            return np.zeros(shape, dtype=np.float64), np.zeros(0, dtype=np.int64)
        idx = self.rng.choice(self._fill, size=take, replace=False)
        return self._images[idx].astype(np.float64) / 255.0, self._labels[idx].copy()

    def labels_stored(self) -> np.ndarray:
        return self._labels[: self._fill].copy()

    # -- serialization (for checkpoint archives) ---------------------------

    def state_arrays(self) -> dict:
        state = np.array([self.capacity, self.seen_count, self._fill], dtype=np.int64)
        images = (
            self._images[: self._fill]
            if self._images is not None
            else np.zeros((0,), dtype=np.uint8)
        )
        return {
            "buffer_meta": state,
            "buffer_images": images,
            "buffer_labels": self._labels[: self._fill],
        }

    def rng_state(self) -> str:
        import json

        return json.dumps(self.rng.bit_generator.state)

    @classmethod
    def from_state(cls, arrays: dict, rng_state: str) -> "MemoryBuffer":
        import json

        capacity, seen, fill = (int(v) for v in arrays["buffer_meta"])
        buf = cls(capacity)
        buf.rng.bit_generator.state = json.loads(rng_state)
        buf.seen_count = seen
        buf._fill = fill
        if fill:
            buf._images = np.zeros((capacity,) + arrays["buffer_images"].shape[1:], dtype=np.uint8)
            buf._images[:fill] = arrays["buffer_images"]
            buf._labels[:fill] = arrays["buffer_labels"]
        return buf


def reservoir_update(buffer: MemoryBuffer, batch) -> MemoryBuffer:
    """Offer every example of a stream batch to the reservoir, in order."""
    for image, label in zip(batch.images, batch.labels):
        buffer.add(image, int(label))
    return buffer


def sample_memory_batch(buffer: MemoryBuffer, size: int):
    """Uniform replay batch (images, labels); empty arrays when the buffer is empty."""
    return buffer.sample(size)
