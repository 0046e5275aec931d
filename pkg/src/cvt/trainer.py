"""The online training loop.

One optimizer step per arriving stream batch, no inner epochs. Each step:
sample a replay batch, activate focuses for the incoming labels, embed two
augmented views of stream+memory for the contrastive term, run a clean
single-view pass for the classifier terms (the injection head sees stream
rows only), take one SGD step on the combined loss, then offer the stream
batch to the reservoir. Task boundaries are used for logging and
checkpointing only; the learner itself is task-free.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import losses as L
from .autograd import Tensor
from .data_stream import augment_two_views, get_dataset, stream_batches
from .errors import ConfigurationError, NonFiniteLossError
from .losses import ContrastiveBatch, LossWeights
from .model import CvtModel
from .nn import SGD
from .replay import MemoryBuffer, reservoir_update, sample_memory_batch
from .seeding import AUGMENT, BUFFER, rng_from


@dataclass
class TrainConfig:
    stream_batch_size: int = 10
    memory_batch_size: int = 10
    learning_rate: float = 0.005
    momentum: float = 0.0
    weight_decay: float = 1e-4
    buffer_capacity: int = 200
    tau: float = 0.1
    mu: float = 2.0
    alpha: float = 1.0
    beta: float = 1.0
    gamma: float = 1.0
    seed: int = 0
    augment_strength: float = 1.0
    mean_reduction: bool = False  # use means instead of sums for the CE stream terms
    no_fc: bool = False
    scl_instead_of_fc: bool = False
    no_dual_classifier: bool = False

    def __post_init__(self):
        if self.stream_batch_size < 1:
            raise ConfigurationError("stream_batch_size must be >= 1")
        if self.learning_rate < 0:
            raise ConfigurationError("learning_rate must be >= 0")

    def loss_weights(self) -> LossWeights:
        return LossWeights(alpha=self.alpha, beta=self.beta, gamma=self.gamma)


@dataclass
class StepReport:
    step: int
    task_id: int
    loss_total: float
    loss_a: float
    loss_i: float
    loss_fc: float
    active_classes: int
    buffer_fill: int
    stream_rows: int
    memory_rows: int

    def log_record(self) -> dict:
        return {
            "step": self.step,
            "task_id": self.task_id,
            "loss_total": self.loss_total,
            "loss_A": self.loss_a,
            "loss_I": self.loss_i,
            "loss_FC": self.loss_fc,
            "active_classes": self.active_classes,
            "buffer_fill": self.buffer_fill,
        }


@dataclass
class RunResult:
    model: CvtModel
    buffer: MemoryBuffer
    step_count: int
    consumed_indices: np.ndarray
    checkpoint_paths: list = field(default_factory=list)
    log_records: list = field(default_factory=list)


def _check_finite(value: float, component: str, step: int) -> float:
    if not np.isfinite(value):
        raise NonFiniteLossError(component, value, step)
    return value


def compute_step_losses(model: CvtModel, stream_images, stream_labels,
                        mem_images, mem_labels, cfg: TrainConfig,
                        rng: np.random.Generator, step: int = 0):
    """Total loss tensor plus scalar components for one step's joined batch.

    Deterministic given ``rng``'s state, so re-running with an identically
    seeded generator reproduces the same augmented views and loss.
    """
    b = len(stream_labels)
    m = len(mem_labels)
    joined_images = np.concatenate([stream_images, mem_images]) if m else stream_images
    joined_labels = np.concatenate([stream_labels, mem_labels]) if m else stream_labels

    loss_fc = Tensor(0.0)
    if not cfg.no_fc:
        pair = augment_two_views(joined_images, joined_labels, rng, cfg.augment_strength)
        z2 = model.embed(pair.views, train=True, rng=rng)
        norms = np.linalg.norm(z2.data, axis=-1)
        if not (np.all(np.isfinite(z2.data)) and np.all(np.abs(norms - 1.0) < 1e-5)):
            # overflowing activations collapse normalized rows to zero
            raise NonFiniteLossError("embeddings", float("nan"), step)
        if cfg.scl_instead_of_fc:
            contrastive = ContrastiveBatch(z=z2, labels=pair.labels, tau=cfg.tau, mu=cfg.mu)
            loss_fc = L.scl_loss(contrastive)
        else:
            focuses, focus_ids = model.focus_bank.active_rows()
            contrastive = ContrastiveBatch(
                z=z2, labels=pair.labels, tau=cfg.tau, mu=cfg.mu,
                focuses=focuses, focus_classes=focus_ids,
            )
            loss_fc = L.fc_loss(contrastive)

    pooled = model.pooled_features(joined_images, train=True, rng=rng)
    logits_i, logits_a = model.classify(pooled, train=True)

    loss_i = Tensor(0.0)
    if not cfg.no_dual_classifier:
        loss_i = L.injection_loss(logits_i[:b, :], stream_labels,
                                  reduce_mean=cfg.mean_reduction)
    loss_a = L.accumulation_loss(
        logits_a[b:, :] if m else None,
        mem_labels if m else None,
        logits_a[:b, :],
        stream_labels,
        cfg.loss_weights(),
        stream_mean=cfg.mean_reduction,
    )
    total = L.total_loss(loss_a, loss_i, loss_fc, cfg.gamma)
    return total, float(loss_a.item()), float(loss_i.item()), float(loss_fc.item())


def train_step(model: CvtModel, buffer: MemoryBuffer, batch, cfg: TrainConfig,
               optimizer: SGD, rng: np.random.Generator, step: int = 0) -> StepReport:
    """One online step; the gradient sees the pre-update buffer."""
    mem_images, mem_labels = sample_memory_batch(buffer, cfg.memory_batch_size)
    model.activate_classes(batch.labels)

    total, loss_a, loss_i, loss_fc = compute_step_losses(
        model, batch.images, batch.labels, mem_images, mem_labels, cfg, rng, step=step
    )
    for value, name in ((loss_a, "loss_A"), (loss_i, "loss_I"), (loss_fc, "loss_FC")):
        _check_finite(value, name, step)
    loss_total = _check_finite(total.item(), "loss_total", step)

    model.zero_grad()
    total.backward()
    optimizer.step()
    model.zero_grad()

    reservoir_update(buffer, batch)
    return StepReport(
        step=step,
        task_id=batch.task_id,
        loss_total=loss_total,
        loss_a=loss_a,
        loss_i=loss_i,
        loss_fc=loss_fc,
        active_classes=int(model.focus_bank.active.sum()),
        buffer_fill=len(buffer),
        stream_rows=len(batch),
        memory_rows=len(mem_labels),
    )


def run_stream(model: CvtModel, dataset, split, cfg: TrainConfig,
               out_dir=None, boundary_callback=None, keep_log: bool = True) -> RunResult:
    """Single pass over the stream with a snapshot at every task boundary.

    ``boundary_callback(model, task_id, buffer)`` runs after the last batch
    of each task. Checkpoints and a JSON-lines training log are written when
    ``out_dir`` is given. Deterministic for a given config seed.
    """
    from .checkpoint import save_checkpoint

    ds = get_dataset(dataset) if isinstance(dataset, str) else dataset
    buffer = MemoryBuffer(cfg.buffer_capacity, rng=rng_from(cfg.seed, BUFFER))
    optimizer = SGD(model.parameters(), lr=cfg.learning_rate,
                    momentum=cfg.momentum, weight_decay=cfg.weight_decay)
    aug_rng = rng_from(cfg.seed, AUGMENT)

    out_dir = Path(out_dir) if out_dir is not None else None
    log_fh = None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        log_fh = open(out_dir / "train_log.jsonl", "w")

    result = RunResult(model=model, buffer=buffer, step_count=0,
                       consumed_indices=np.zeros(0, dtype=np.int64))
    consumed = []
    current_task = None
    step = 0

    def close_task(task_id):
        if out_dir is not None:
            path = out_dir / f"task_{task_id}.ckpt"
            save_checkpoint(path, model, buffer)
            result.checkpoint_paths.append(path)
        if boundary_callback is not None:
            boundary_callback(model, task_id, buffer)

    try:
        for batch in stream_batches(ds, split, cfg.stream_batch_size, cfg.seed):
            if current_task is not None and batch.task_id != current_task:
                close_task(current_task)
            current_task = batch.task_id
            step += 1
            report = train_step(model, buffer, batch, cfg, optimizer, aug_rng, step=step)
            if batch.sample_indices is not None:
                consumed.append(batch.sample_indices)
            record = report.log_record()
            if keep_log:
                result.log_records.append(record)
            if log_fh is not None:
                log_fh.write(json.dumps(record) + "\n")
        if current_task is not None:
            close_task(current_task)
    finally:
        if log_fh is not None:
            log_fh.close()

    result.step_count = optimizer.step_count
    if consumed:
        result.consumed_indices = np.concatenate(consumed)
    return result


def config_for_method(base: TrainConfig, method: str) -> TrainConfig:
    """Map a method name onto trainer ablation flags."""
    overrides = {
        "cvt": {},
        "cvt_no_fc": {"no_fc": True},
        "cvt_scl": {"scl_instead_of_fc": True},
        "cvt_no_dual": {"no_dual_classifier": True},
        "er_baseline": {"no_fc": True, "no_dual_classifier": True},
        "sgd_baseline": {"no_fc": True, "no_dual_classifier": True, "buffer_capacity": 0},
    }
    if method not in overrides:
        raise ConfigurationError(
            f"unknown method {method!r}; choose one of {sorted(overrides)}"
        )
    return replace(base, **overrides[method])


def train_config_to_dict(cfg: TrainConfig) -> dict:
    return asdict(cfg)
