"""Reservoir rehearsal: the buffer keeps a uniform sample of everything it
has ever been offered, so late tasks cannot evict early ones wholesale.

Run:  python demos/04_reservoir_replay.py
"""

import numpy as np

from cvt import MemoryBuffer, get_dataset, make_task_splits, reservoir_update, sample_memory_batch, stream_batches

ds = get_dataset("synthetic-10", train_per_class=50, test_per_class=10)
split = make_task_splits(ds, 5, seed=0)

buf = MemoryBuffer(capacity=60, seed=0)
print("streaming 5 tasks into a capacity-60 reservoir:")
for batch in stream_batches(ds, split, batch_size=10, seed=0):
    reservoir_update(buf, batch)
    if buf.seen_count % 100 == 0:
        held = np.bincount(buf.labels_stored(), minlength=10)
        print(f"  after {buf.seen_count:3d} offers (task {batch.task_id}): "
              f"per-class counts {held.tolist()}")

print(f"\nfinal: {len(buf)} stored of {buf.seen_count} seen; every offered item "
      f"is present with probability {buf.capacity}/{buf.seen_count} "
      f"= {buf.capacity / buf.seen_count:.2f}")

images, labels = sample_memory_batch(buf, 10)
print(f"replay batch: {images.shape}, labels {labels.tolist()}")

# the uniform-inclusion property, measured
trials = 1500
counts = np.zeros(100, dtype=int)
for t in range(trials):
    small = MemoryBuffer(capacity=10, seed=1000 + t)
    for k in range(100):
        small.add(np.zeros(1), k)
    counts[small.labels_stored()] += 1
freq = counts / trials
print(f"\nMonte-Carlo inclusion over {trials} trials (capacity 10, n 100):")
print(f"  target 0.10, measured mean {freq.mean():.3f}, "
      f"min {freq.min():.3f}, max {freq.max():.3f}")
