"""The loss zoo: supervised contrastive vs focal contrastive, the focus
weight mu, and how the classifier losses combine into the training objective.

Run:  python demos/03_contrastive_losses.py
"""

import numpy as np

from cvt import ContrastiveBatch, LossWeights, accumulation_loss, fc_loss, injection_loss, scl_loss, total_loss
from cvt.autograd import Tensor


def unit_rows(rng, n, d):
    v = rng.normal(size=(n, d))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


rng = np.random.default_rng(7)
z = unit_rows(rng, 8, 16)                   # two views of four samples
labels = np.array([0, 0, 1, 1, 0, 0, 2, 2])

plain = ContrastiveBatch(z=Tensor(z), labels=labels, tau=0.2)
print(f"scl loss: {scl_loss(plain).item():.4f}")
print(f"fc loss with no active focuses (identical by construction): "
      f"{fc_loss(plain).item():.4f}")

# add one focus per seen class; each anchor gains a weighted positive and
# every anchor's denominator gains all of them
focuses = unit_rows(rng, 3, 16)
for mu in (1.5, 2.0, 4.0):
    batch = ContrastiveBatch(z=Tensor(z), labels=labels, tau=0.2, mu=mu,
                             focuses=Tensor(focuses), focus_classes=np.array([0, 1, 2]))
    print(f"fc loss with focuses, mu={mu}: {fc_loss(batch).item():.4f}")

# classifier objectives: injection sums over the stream batch only,
# accumulation balances a memory mean against the stream sum
stream_logits = Tensor(rng.normal(size=(4, 5)))
stream_labels = np.array([0, 1, 2, 3])
mem_logits = Tensor(rng.normal(size=(6, 5)))
mem_labels = rng.integers(0, 5, size=6)

li = injection_loss(stream_logits, stream_labels)
la = accumulation_loss(mem_logits, mem_labels, stream_logits, stream_labels,
                       LossWeights(alpha=1.0, beta=1.0))
print(f"\ninjection loss (stream sum): {li.item():.4f}")
print(f"accumulation loss (alpha * memory mean + beta * stream sum): {la.item():.4f}")
print(f"total with gamma=1: {total_loss(la, li, fc_loss(plain), 1.0).item():.4f}")

# gradients flow to focuses only through the focal term
batch = ContrastiveBatch(z=Tensor(z), labels=labels, tau=0.2, mu=2.0,
                         focuses=Tensor(focuses.copy(), requires_grad=True),
                         focus_classes=np.array([0, 1, 2]))
fc_loss(batch).backward()
print("\nfocus gradient norms:", np.linalg.norm(batch.focuses.grad, axis=1).round(3))
