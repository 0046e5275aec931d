"""Walk through the data side: the synthetic dataset, class-incremental
splits, the single-pass stream, and two-view augmentation.

Run:  python demos/01_synthetic_stream.py
"""

from cvt import augment_two_views, get_dataset, make_task_splits, split_manifest, stream_batches
from cvt.seeding import rng_from

# ten classes of 16x16 textured shapes; class = shape mask x grating signature
ds = get_dataset("synthetic-10", train_per_class=50, test_per_class=10)
print(f"dataset: {ds.name}, {ds.num_classes} classes, "
      f"{ds.train_per_class} train / {ds.test_per_class} test per class")

split = make_task_splits(ds, num_tasks=5, seed=0)
print("\nclass-incremental split (seeded permutation, chunked):")
for task in split:
    print(f"  task {task.task_id}: classes {task.class_ids}")
print("manifest:", split_manifest(split))

# the stream serves every training sample exactly once, in task order
print("\nstreaming with batch size 16:")
counts = {}
for batch in stream_batches(ds, split, batch_size=16, seed=0):
    counts[batch.task_id] = counts.get(batch.task_id, 0) + len(batch)
for task_id, n in counts.items():
    print(f"  task {task_id}: {n} samples served")

# two independent augmented views per sample, labels interleaved
batch = next(stream_batches(ds, split, batch_size=4, seed=0))
pair = augment_two_views(batch.images, batch.labels, rng_from(0, 123))
print(f"\naugmented pair: {batch.images.shape} -> {pair.views.shape}")
print("labels, interleaved per source sample:", pair.labels)
print("views stay in [0, 1]:", float(pair.views.min()), float(pair.views.max()))

# a montage of one example per class, for the curious
try:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, axes = plt.subplots(2, 5, figsize=(10, 4.2))
    for c, ax in enumerate(axes.ravel()):
        ax.imshow(ds.train_images(c)[0].transpose(1, 2, 0))
        ax.set_title(f"class {c}", fontsize=9)
        ax.axis("off")
    fig.tight_layout()
    fig.savefig("synthetic10_classes.png", dpi=110)
    print("\nwrote synthetic10_classes.png")
except ImportError:
    pass
