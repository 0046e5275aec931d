"""Task-free / Task-aware inference and the accuracy/forgetting metrics.

Predictions always come from the accumulation head; the injection head never
participates in inference. Task-free evaluation takes the argmax over every
class seen so far, Task-aware masks the logits down to the task's own
classes, so Task-aware accuracy dominates Task-free accuracy by construction.

``AccuracyMatrix`` stores a[i][t], the percent accuracy on task t's test set
measured after finishing training task i (both 1-based in the usual
notation; entries with t > i do not exist and are never imputed).
"""

from __future__ import annotations

import io
import json

import numpy as np

from . import autograd as ag

PROTOCOLS = ("task_free", "task_aware")


class AccuracyMatrix:
    """Lower-triangular grid of per-task accuracies across time."""

    def __init__(self, rows=None):
        self.rows = [list(map(float, r)) for r in (rows or [])]
        for i, row in enumerate(self.rows):
            if len(row) != i + 1:
                raise ValueError(f"row {i} should have {i + 1} entries, has {len(row)}")

    @property
    def num_tasks(self) -> int:
        return len(self.rows)

    def add_row(self, accuracies) -> None:
        row = [float(a) for a in accuracies]
        if len(row) != len(self.rows) + 1:
            raise ValueError(
                f"expected {len(self.rows) + 1} entries for row {len(self.rows) + 1}, got {len(row)}"
            )
        self.rows.append(row)

    def accuracy(self, after_task: int, on_task: int) -> float:
        """a[after_task][on_task], 1-based, defined for on_task <= after_task."""
        return self.rows[after_task - 1][on_task - 1]

    def to_lists(self):
        return [list(r) for r in self.rows]

    def to_csv(self) -> str:
        buf = io.StringIO()
        t = self.num_tasks
        buf.write("after_task," + ",".join(f"task_{j}" for j in range(1, t + 1)) + "\n")
        for i, row in enumerate(self.rows, start=1):
            cells = [f"{v:.6f}" for v in row] + [""] * (t - len(row))
            buf.write(f"{i}," + ",".join(cells) + "\n")
        return buf.getvalue()


def predict(model, images, allowed_classes, batch_size: int = 256) -> np.ndarray:
    """Argmax of the accumulation head restricted to ``allowed_classes``."""
    allowed = np.asarray(allowed_classes, dtype=np.int64)
    if allowed.size == 0:
        raise ValueError("no classes to predict over")
    preds = []
    with ag.no_grad():
        for start in range(0, len(images), batch_size):
            chunk = images[start : start + batch_size]
            logits = model.forward(chunk, train=False).logits_accumulation.data
            masked = np.full_like(logits, -np.inf)
            masked[:, allowed] = logits[:, allowed]
            preds.append(np.argmax(masked, axis=1))
    return np.concatenate(preds)


def evaluate_task(model, images, labels, protocol: str, task_classes) -> float:
    """Percent accuracy on one task's test set under the given protocol."""
    if len(images) == 0:
        raise ValueError("empty test set")
    if protocol not in PROTOCOLS:
        raise ValueError(f"protocol must be one of {PROTOCOLS}, got {protocol!r}")
    if protocol == "task_aware":
        allowed = np.asarray(task_classes, dtype=np.int64)
    else:
        allowed = model.seen_classes()
    preds = predict(model, images, allowed)
    return 100.0 * float(np.mean(preds == np.asarray(labels)))


def evaluate_boundary(model, dataset, split, upto_task: int) -> dict:
    """Accuracies on tasks 1..upto_task for both protocols, sharing one forward pass."""
    out = {p: [] for p in PROTOCOLS}
    seen = model.seen_classes()
    for task in split[:upto_task]:
        images = np.concatenate(
            [dataset.test_images(c)[: task.test_count] for c in task.class_ids]
        ).astype(np.float64) / 255.0
        labels = np.concatenate(
            [np.full(min(len(dataset.test_images(c)), task.test_count), c)
             for c in task.class_ids]
        )
        with ag.no_grad():
            logits = []
            for start in range(0, len(images), 256):
                chunk = images[start : start + 256]
                logits.append(model.forward(chunk, train=False).logits_accumulation.data)
            logits = np.concatenate(logits)
        for protocol, allowed in (
            ("task_free", seen),
            ("task_aware", np.asarray(task.class_ids, dtype=np.int64)),
        ):
            masked = np.full_like(logits, -np.inf)
            masked[:, allowed] = logits[:, allowed]
            acc = 100.0 * float(np.mean(np.argmax(masked, axis=1) == labels))
            out[protocol].append(acc)
    return out


def overall_accuracy(matrix) -> float:
    """Mean of the final row: A_T = (1/T) sum_t a[T][t]."""
    rows = matrix.rows if isinstance(matrix, AccuracyMatrix) else matrix
    if not rows:
        raise ValueError("empty accuracy matrix")
    last = rows[-1]
    if len(last) != len(rows):
        raise ValueError("incomplete final row")
    return float(np.mean(last))


def forgetting(matrix):
    """F_T = mean over earlier tasks of (best past accuracy - final accuracy).

    The max ranges over rows i >= t where a[i][t] exists. Undefined for a
    single task (returns None rather than zero).
    """
    rows = matrix.rows if isinstance(matrix, AccuracyMatrix) else matrix
    T = len(rows)
    if T < 2:
        return None
    drops = []
    for t in range(T - 1):
        best = max(rows[i][t] for i in range(t, T - 1))
        drops.append(best - rows[T - 1][t])
    return float(np.mean(drops))


def incremental_metrics(matrix) -> list:
    """Overall accuracy and forgetting at every boundary, from rows <= i only.

    Keys follow the results-file schema: "A_i" is the overall accuracy over
    tasks observed so far, "F_i" the forgetting (null at the first boundary).
    """
    rows = matrix.rows if isinstance(matrix, AccuracyMatrix) else matrix
    out = []
    for i in range(1, len(rows) + 1):
        prefix = rows[:i]
        out.append({
            "task": i,
            "A_i": overall_accuracy(prefix),
            "F_i": forgetting(prefix),
        })
    return out


def results_payload(protocol: str, seed: int, matrix: AccuracyMatrix) -> dict:
    return {
        "protocol": protocol,
        "seed": seed,
        "accuracy_matrix": matrix.to_lists(),
        "overall_accuracy": overall_accuracy(matrix),
        "forgetting": forgetting(matrix),
        "per_boundary": incremental_metrics(matrix),
    }


def write_results(path, payload: dict) -> None:
    from pathlib import Path

    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
