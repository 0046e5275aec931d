"""Class-incremental task splits and the single-pass online stream.

The stock dataset is ``synthetic-10``: ten classes of procedurally drawn
16x16 textured shapes (class identity = shape mask x grating frequency,
color deliberately uninformative), 500 train / 100 test images per class,
generated once from a fixed seed so every experiment seed sees the same
pixels. A directory of per-class image folders can be used instead.

``stream_batches`` serves each training sample exactly once, task by task,
which is the whole online-continual-learning contract: no second epoch, no
peeking ahead.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigurationError
from .seeding import DATASET, STREAM, rng_from

IMAGE_SIZE = 16
_SYNTHETIC_CLASSES = 10
_SYNTHETIC_SEED = 1898  # fixed: the dataset itself never varies across runs


@dataclass(frozen=True)
class TaskSpec:
    """One task of a class-incremental split."""

    task_id: int
    class_ids: tuple
    train_count: int  # per class
    test_count: int


@dataclass
class StreamBatch:
    """A labeled mini-batch drawn once from the online stream."""

    images: np.ndarray  # (b, 3, H, W) float64 in [0, 1]
    labels: np.ndarray  # (b,) int64
    task_id: int
    sample_indices: np.ndarray | None = None  # stable global ids, for auditing

    def __len__(self):
        return len(self.labels)


@dataclass
class AugmentedPair:
    """Two independently augmented views per source row, interleaved."""

    views: np.ndarray  # (2b, 3, H, W)
    labels: np.ndarray  # (2b,)


class ArrayDataset:
    """Per-class uint8 image arrays with a train/test split."""

    def __init__(self, name: str, train: dict, test: dict):
        self.name = name
        self.num_classes = len(train)
        self._train = train
        self._test = test
        first = train[0]
        self.train_per_class = first.shape[0]
        self.test_per_class = test[0].shape[0]
        self.image_shape = first.shape[1:]

    def train_images(self, class_id: int) -> np.ndarray:
        return self._train[class_id]

    def test_images(self, class_id: int) -> np.ndarray:
        return self._test[class_id]


_dataset_cache: dict = {}


def get_dataset(name: str, train_per_class: int | None = None,
                test_per_class: int | None = None) -> ArrayDataset:
    """Resolve a dataset name ("synthetic-10" or a directory path)."""
    key = (name, train_per_class, test_per_class)
    if key in _dataset_cache:
        return _dataset_cache[key]
    if name == "synthetic-10":
        ds = _make_synthetic(train_per_class or 500, test_per_class or 100)
    elif Path(name).is_dir():
        ds = load_image_folder(name, train_per_class, test_per_class)
    else:
        raise ConfigurationError(f"unknown dataset {name!r}")
    _dataset_cache[key] = ds
    return ds


# -- synthetic textured shapes ------------------------------------------------

_SHAPES = ("disk", "square", "cross", "ring", "band")
_FREQS = (2.0, 5.0)


def _shape_mask(shape: str, cy: float, cx: float, r: float) -> np.ndarray:
    yy, xx = np.mgrid[0:IMAGE_SIZE, 0:IMAGE_SIZE].astype(np.float64)
    dy, dx = yy - cy, xx - cx
    if shape == "disk":
        return (dy**2 + dx**2) <= r**2
    if shape == "square":
        return (np.abs(dy) <= r) & (np.abs(dx) <= r)
    if shape == "cross":
        w = max(1.5, r / 2.2)
        return ((np.abs(dy) <= w) & (np.abs(dx) <= r)) | (
            (np.abs(dx) <= w) & (np.abs(dy) <= r)
        )
    if shape == "ring":
        d2 = dy**2 + dx**2
        return (d2 <= r**2) & (d2 >= (0.55 * r) ** 2)
    if shape == "band":
        return np.abs(dy - dx) <= max(2.0, r * 0.6)
    raise ValueError(shape)


def _render_class(class_id: int, count: int, rng: np.random.Generator) -> np.ndarray:
    """uint8 images (count, 3, 16, 16) for one class.

    Class identity = shape mask x grating signature (frequency and
    orientation move together); phase, position, size, per-channel gain, and
    pixel noise are sample-level nuisances, so color alone identifies nothing.
    """
    shape = _SHAPES[class_id // len(_FREQS)]
    freq = _FREQS[class_id % len(_FREQS)]
    base_theta = 0.0 if class_id % len(_FREQS) == 0 else np.pi / 2
    yy, xx = np.mgrid[0:IMAGE_SIZE, 0:IMAGE_SIZE].astype(np.float64)
    out = np.empty((count, 3, IMAGE_SIZE, IMAGE_SIZE), dtype=np.uint8)
    for i in range(count):
        cy, cx = rng.uniform(6.5, 9.5, size=2)
        r = rng.uniform(4.5, 6.0)
        mask = _shape_mask(shape, cy, cx, r)
        theta = base_theta + rng.uniform(-0.2, 0.2)
        phase = rng.uniform(0, 2 * np.pi)
        grating = np.sin(
            2 * np.pi * freq * (xx * np.cos(theta) + yy * np.sin(theta)) / IMAGE_SIZE
            + phase
        )
        base = 0.30 + 0.04 * rng.standard_normal((IMAGE_SIZE, IMAGE_SIZE))
        img = np.where(mask, 0.62 + 0.38 * grating, base)
        gains = rng.uniform(0.7, 1.0, size=3)  # color carries no class signal
        rgb = img[None, :, :] * gains[:, None, None]
        rgb += 0.01 * rng.standard_normal(rgb.shape)
        out[i] = (np.clip(rgb, 0.0, 1.0) * 255).round().astype(np.uint8)
    return out


def _make_synthetic(train_per_class: int, test_per_class: int) -> ArrayDataset:
    train, test = {}, {}
    for c in range(_SYNTHETIC_CLASSES):
        rng = rng_from(_SYNTHETIC_SEED, DATASET, c)
        block = _render_class(c, train_per_class + test_per_class, rng)
        train[c] = block[:train_per_class]
        test[c] = block[train_per_class:]
    return ArrayDataset("synthetic-10", train, test)


def load_image_folder(root: str, train_per_class: int | None = None,
                      test_per_class: int | None = None) -> ArrayDataset:
    """Load ``root/<class_name>/<file>.png`` folders, downsampled to 16x16.

    Within each class, files sort by name; the last ``test_per_class``
    (default: one sixth) are held out for testing.
    """
    try:
        from PIL import Image
    except ImportError as exc:  # pragma: no cover
        raise ConfigurationError("directory datasets need pillow installed") from exc

    root = Path(root)
    class_dirs = sorted(d for d in root.iterdir() if d.is_dir())
    if not class_dirs:
        raise ConfigurationError(f"no class folders under {root}")
    train, test = {}, {}
    for c, cdir in enumerate(class_dirs):
        files = sorted(p for p in cdir.iterdir() if p.suffix.lower() in (".png", ".jpg", ".jpeg"))
        imgs = []
        for p in files:
            with Image.open(p) as im:
                im = im.convert("RGB").resize((IMAGE_SIZE, IMAGE_SIZE), Image.BILINEAR)
            imgs.append(np.asarray(im, dtype=np.uint8).transpose(2, 0, 1))
        arr = np.stack(imgs)
        n_test = test_per_class if test_per_class is not None else max(1, len(arr) // 6)
        n_train = train_per_class if train_per_class is not None else len(arr) - n_test
        if n_train + n_test > len(arr):
            raise ConfigurationError(
                f"class {cdir.name} has {len(arr)} images, needs {n_train + n_test}"
            )
        train[c] = arr[:n_train]
        test[c] = arr[len(arr) - n_test:]
    counts = {len(v) for v in train.values()} | {0}
    if len(counts) > 2:
        raise ConfigurationError("classes have unequal train counts")
    return ArrayDataset(str(root), train, test)


# -- task splits ---------------------------------------------------------------


def make_task_splits(dataset, num_tasks: int, seed: int) -> list:
    """Partition the label set into ``num_tasks`` disjoint, exhaustive tasks.

    Class-to-task assignment is a seeded permutation chunked evenly;
    deterministic for a given seed.
    """
    ds = get_dataset(dataset) if isinstance(dataset, str) else dataset
    if num_tasks < 1 or ds.num_classes % num_tasks != 0:
        raise ConfigurationError(
            f"num_tasks={num_tasks} must divide the class count {ds.num_classes}"
        )
    per = ds.num_classes // num_tasks
    order = rng_from(seed, 0).permutation(ds.num_classes)
    return [
        TaskSpec(
            task_id=t + 1,
            class_ids=tuple(int(c) for c in order[t * per : (t + 1) * per]),
            train_count=ds.train_per_class,
            test_count=ds.test_per_class,
        )
        for t in range(num_tasks)
    ]


def split_manifest(split) -> dict:
    return {"tasks": [{"task_id": s.task_id, "classes": list(s.class_ids)} for s in split]}


def save_split_manifest(split, path):
    Path(path).write_text(json.dumps(split_manifest(split), indent=2) + "\n")


# -- the online stream ----------------------------------------------------------


def stream_batches(dataset, split, batch_size: int, seed: int):
    """Yield StreamBatches task by task, each training sample exactly once.

    Within a task, samples are shuffled by ``seed``; the final partial batch
    of a task is emitted as-is so single-pass coverage holds.
    """
    if not split:
        raise ConfigurationError("empty task split")
    if batch_size < 1:
        raise ConfigurationError(f"batch_size must be >= 1, got {batch_size}")
    ds = get_dataset(dataset) if isinstance(dataset, str) else dataset
    rng = rng_from(seed, STREAM)
    for task in split:
        images, labels, indices = [], [], []
        for c in task.class_ids:
            block = ds.train_images(c)[: task.train_count]
            images.append(block)
            labels.append(np.full(len(block), c, dtype=np.int64))
            indices.append(c * ds.train_per_class + np.arange(len(block)))
        images = np.concatenate(images)
        labels = np.concatenate(labels)
        indices = np.concatenate(indices)
        order = rng.permutation(len(labels))
        for start in range(0, len(order), batch_size):
            take = order[start : start + batch_size]
            yield StreamBatch(
                images=images[take].astype(np.float64) / 255.0,
                labels=labels[take],
                task_id=task.task_id,
                sample_indices=indices[take],
            )


# -- augmentation -----------------------------------------------------------------


def _augment_once(images: np.ndarray, rng: np.random.Generator, strength: float) -> np.ndarray:
    """Reflect-pad-2 random crop, horizontal flip, Gaussian jitter, clip to [0,1]."""
    b, _, h, w = images.shape
    pad = 2
    shift = int(round(pad * min(strength, 1.0)))
    padded = np.pad(images, ((0, 0), (0, 0), (pad, pad), (pad, pad)), mode="reflect")
    out = np.empty_like(images)
    offs = rng.integers(pad - shift, pad + shift + 1, size=(b, 2))
    flips = rng.random(b) < (0.5 if strength > 0 else 0.0)
    for k in range(b):
        oy, ox = offs[k]
        crop = padded[k, :, oy : oy + h, ox : ox + w]
        out[k] = crop[:, :, ::-1] if flips[k] else crop
    if strength > 0:
        out = out + rng.normal(0.0, 0.02 * strength, size=out.shape)
    return np.clip(out, 0.0, 1.0)


def augment_two_views(images: np.ndarray, labels: np.ndarray,
                      rng: np.random.Generator, strength: float = 1.0) -> AugmentedPair:
    """Two independent random views per source row, interleaved with its label."""
    if len(images) == 0:
        raise ValueError("cannot augment an empty batch")
    a = _augment_once(images, rng, strength)
    b = _augment_once(images, rng, strength)
    views = np.empty((2 * len(images),) + images.shape[1:], dtype=np.float64)
    views[0::2] = a
    views[1::2] = b
    return AugmentedPair(views=views, labels=np.repeat(labels, 2))
