"""Training objectives.

``scl_loss`` is the plain supervised contrastive loss over an augmented
batch. ``fc_loss`` extends it with per-class focus vectors: the anchor's own
focus joins its positive set with weight ``mu`` and every active focus joins
the denominator of every anchor, so old classes keep exerting contrast long
after they left the stream. The classifier objectives are cross-entropy
sums/means combined by ``total_loss``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autograd as ag
from .autograd import Tensor

_UNIT_NORM_TOL = 1e-5


@dataclass
class LossWeights:
    """Coefficients for the accumulation-loss terms and the contrastive term."""

    alpha: float = 1.0
    beta: float = 1.0
    gamma: float = 1.0

    def __post_init__(self):
        for name in ("alpha", "beta", "gamma"):
            v = getattr(self, name)
            if not np.isfinite(v) or v < 0:
                raise ValueError(f"{name} must be finite and >= 0, got {v}")


@dataclass
class ContrastiveBatch:
    """Unit-norm embeddings of a two-view batch plus the active focus rows.

    ``z`` holds 2b rows (two augmented views per source sample). ``focuses``
    holds one unit-norm row per active class, identified by ``focus_classes``;
    both may be empty.
    """

    z: Tensor
    labels: np.ndarray
    tau: float = 0.1
    mu: float = 2.0
    focuses: Tensor | None = None
    focus_classes: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.focus_classes = np.asarray(self.focus_classes, dtype=np.int64)
        if self.tau <= 0:
            raise ValueError(f"temperature must be positive, got {self.tau}")
        if self.mu <= 1:
            raise ValueError(f"focus weight mu must exceed 1, got {self.mu}")
        if len(self.labels) != self.z.shape[0]:
            raise ValueError("labels and z row counts differ")
        _check_unit_rows(self.z, "z")
        if self.num_focuses:
            if self.focuses.shape[0] != len(self.focus_classes):
                raise ValueError("focus rows and focus_classes differ in length")
            if np.any(self.focus_classes < 0):
                raise ValueError("focus class ids must be non-negative")
            if len(np.unique(self.focus_classes)) != len(self.focus_classes):
                raise ValueError("duplicate focus class ids")
            _check_unit_rows(self.focuses, "focuses")

    @property
    def num_focuses(self) -> int:
        return 0 if self.focuses is None else self.focuses.shape[0]


def _check_unit_rows(t: Tensor, name: str):
    norms = np.linalg.norm(t.data, axis=-1)
    if norms.size and np.max(np.abs(norms - 1.0)) > _UNIT_NORM_TOL:
        raise ValueError(f"{name} rows must be unit-norm within {_UNIT_NORM_TOL}")


def scl_loss(batch: ContrastiveBatch) -> Tensor:
    """Supervised contrastive loss, summed over anchors.

    Anchors with no positive in the batch contribute zero. The focus set of
    ``batch`` is not consulted.
    """
    return _contrastive(batch.z, batch.labels, None, None, batch.tau, 1.0)


def fc_loss(batch: ContrastiveBatch) -> Tensor:
    """Focal contrastive loss.

    Per anchor, positives are the same-class batch rows plus the anchor's own
    focus (if active), the latter weighted by ``mu``; the normalizer counts
    the focus once. Denominators range over all other rows plus every active
    focus. With no active focuses this equals ``scl_loss`` exactly.
    """
    if batch.num_focuses == 0:
        return scl_loss(batch)
    return _contrastive(batch.z, batch.labels, batch.focuses, batch.focus_classes,
                        batch.tau, batch.mu)


def _contrastive(z, labels, focuses, focus_classes, tau, mu) -> Tensor:
    n = z.shape[0]
    if n < 2:
        raise ValueError("contrastive loss needs at least 2 rows")
    k = 0 if focuses is None else focuses.shape[0]

    candidates = ag.concatenate([z, focuses], axis=0) if k else z
    sims = ag.mul(ag.matmul(z, ag.transpose(candidates, (1, 0))), 1.0 / tau)  # (n, n+k)

    denom_mask = np.ones((n, n + k))
    denom_mask[np.arange(n), np.arange(n)] = 0.0  # never contrast a row with itself
    lse = ag.log_sum_exp(sims, axis=-1, mask=denom_mask)  # (n, 1)
    log_ratio = ag.sub(sims, lse)

    same = labels[:, None] == labels[None, :]
    np.fill_diagonal(same, False)
    weights = np.zeros((n, n + k))
    weights[:, :n] = same
    counts = same.sum(axis=1).astype(np.float64)
    if k:
        own = labels[:, None] == focus_classes[None, :]
        weights[:, n:] = mu * own
        counts += own.sum(axis=1)

    # masked-out columns carry weight 0, so their log_ratio values are inert
    inv_counts = np.divide(1.0, counts, out=np.zeros(n), where=counts > 0)
    per_anchor = ag.sum_(ag.mul(log_ratio, Tensor(weights)), axis=-1)
    return ag.neg(ag.sum_(ag.mul(per_anchor, Tensor(inv_counts))))


def cross_entropy_terms(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Per-row -log softmax probability of the true class, shape (rows,)."""
    labels = np.asarray(labels, dtype=np.int64)
    n, c = logits.shape
    if len(labels) != n:
        raise ValueError("labels and logits row counts differ")
    if n and (labels.min() < 0 or labels.max() >= c):
        raise ValueError(f"label out of range [0, {c})")
    lse = ag.reshape(ag.log_sum_exp(logits, axis=-1), (n,))
    picked = logits[np.arange(n), labels]
    return ag.sub(lse, picked)


def injection_loss(logits: Tensor, labels: np.ndarray, reduce_mean: bool = False) -> Tensor:
    """Cross-entropy over the stream batch (summed unless ``reduce_mean``)."""
    terms = cross_entropy_terms(logits, labels)
    return ag.mean(terms) if reduce_mean else ag.sum_(terms)


def accumulation_loss(
    logits_mem: Tensor | None,
    labels_mem: np.ndarray | None,
    logits_stream: Tensor,
    labels_stream: np.ndarray,
    weights: LossWeights,
    stream_mean: bool = False,
) -> Tensor:
    """alpha * mean CE over the memory batch + beta * summed CE over the stream batch.

    The memory term is zero while the buffer is empty. ``stream_mean``
    switches the stream term to a mean as well.
    """
    stream_terms = cross_entropy_terms(logits_stream, labels_stream)
    stream = ag.mean(stream_terms) if stream_mean else ag.sum_(stream_terms)
    total = ag.mul(stream, weights.beta)
    if logits_mem is not None and logits_mem.shape[0] > 0:
        mem = ag.mean(cross_entropy_terms(logits_mem, labels_mem))
        total = ag.add(total, ag.mul(mem, weights.alpha))
    return total


def total_loss(loss_a, loss_i, loss_fc, gamma: float):
    """loss_a + loss_i + gamma * loss_fc (works on tensors or plain floats)."""
    return loss_a + loss_i + gamma * loss_fc
