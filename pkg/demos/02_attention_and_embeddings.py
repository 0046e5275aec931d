"""Poke at the network: external attention maps, the unit-norm embedding z,
the dual heads, and the focus bank lifecycle.

Run:  python demos/02_attention_and_embeddings.py
"""

import numpy as np

from cvt import CvtConfig, CvtModel, activate_focuses, count_parameters
from cvt.autograd import Tensor
from cvt.seeding import MODEL, rng_from

config = CvtConfig(num_classes=10)
model = CvtModel(config, rng_from(0, MODEL))
print(f"model: {count_parameters(model):,} trainable parameters")
print(f"stages: dims {config.stage_dims}, tokens per stage "
      f"{[h * h for h in config.token_hw_per_stage()]}")

images = np.random.default_rng(0).random((8, 3, 16, 16))

# every attention row is a distribution over the stage's external slots
tokens = model.stem(Tensor(images), train=False)
b, d, h, w = tokens.shape
tokens = tokens.reshape(b, d, h * w).transpose((0, 2, 1))
attn = model.stages[0].blocks[0].attn.attention_map(tokens)
print(f"\nstage-1 attention map: {attn.shape}  (batch, heads, tokens, slots)")
print("row sums:", np.unique(np.round(attn.data.sum(axis=-1), 12)))

out = model.forward(images)
print(f"\nz: {out.z.shape}, row norms all 1: "
      f"{np.allclose(np.linalg.norm(out.z.data, axis=1), 1.0)}")
print(f"dual heads: injection {out.logits_injection.shape}, "
      f"accumulation {out.logits_accumulation.shape}")

# focuses join the game when their class first appears, and never leave
bank = model.focus_bank
print("\nactive focuses at start:", bank.active_classes())
activate_focuses(bank, [3, 7])
print("after seeing classes {3, 7}:", bank.active_classes())
activate_focuses(bank, [3])  # idempotent
print("after seeing class 3 again:", bank.active_classes())
rows, ids = bank.active_rows()
print("active focus rows are unit-norm:",
      np.allclose(np.linalg.norm(rows.data, axis=1), 1.0), "for classes", ids)
