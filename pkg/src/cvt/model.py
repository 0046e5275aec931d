"""The network: convolutional stem, external-attention transformer stages,
pooled unit-norm attention embedding, per-class focus bank, and dual heads.

External attention scores each token against a learnable key matrix (one key
per slot) instead of input-derived keys, adds a learnable per-head bias over
(token, slot) pairs, and batch-normalizes the raw scores before the softmax.
The slot count of a stage equals its token count, so the attention map can
weight the self-values directly; with the default 16x16 input this is 16
slots for stage one and 4 for stage two.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from . import autograd as ag
from . import nn
from .autograd import Tensor
from .errors import ConfigurationError
from .nn import (
    BatchNorm,
    BatchNorm2d,
    Conv2d,
    LayerNorm,
    Linear,
    Module,
    Parameter,
    count_parameters,
)

__all__ = [
    "CvtConfig",
    "CvtModel",
    "ExternalAttention",
    "FocusBank",
    "ModelOutputs",
    "activate_focuses",
    "count_parameters",
]


@dataclass
class CvtConfig:
    num_classes: int
    image_size: int = 16
    stem_channels: int = 32
    stage_dims: tuple = (64, 96)
    heads_per_stage: tuple = (2, 2)
    key_dim: int = 32
    external_slots: int = 16
    blocks_per_stage: tuple = (2, 2)
    embed_dim: int = 96
    projection_dim: int = 64
    dropout_rate: float = 0.1
    attention_norm: str = "batch"  # "identity" is a test mode

    def __post_init__(self):
        self.stage_dims = tuple(self.stage_dims)
        self.heads_per_stage = tuple(self.heads_per_stage)
        self.blocks_per_stage = tuple(self.blocks_per_stage)
        if not (len(self.stage_dims) == len(self.heads_per_stage) == len(self.blocks_per_stage)):
            raise ConfigurationError("stage_dims, heads_per_stage, blocks_per_stage lengths differ")
        for dim, heads in zip(self.stage_dims, self.heads_per_stage):
            if self.key_dim % heads:
                raise ConfigurationError(f"key_dim {self.key_dim} not divisible by {heads} heads")
            if dim % heads:
                raise ConfigurationError(f"stage dim {dim} not divisible by {heads} heads")
        if self.attention_norm not in ("batch", "identity"):
            raise ConfigurationError(f"unknown attention_norm {self.attention_norm!r}")
        hw = self.token_hw_per_stage()
        if self.external_slots != hw[0] * hw[0]:
            raise ConfigurationError(
                f"external_slots must equal the first stage's token count "
                f"({hw[0] * hw[0]} for image_size {self.image_size}), got {self.external_slots}"
            )

    def token_hw_per_stage(self) -> list:
        def down(n):  # 3x3 conv, stride 2, padding 1
            return (n - 1) // 2 + 1

        hw = [down(down(self.image_size))]
        for _ in self.stage_dims[1:]:
            hw.append(down(hw[-1]))
        if hw[-1] < 1:
            raise ConfigurationError(f"image_size {self.image_size} too small for the stage count")
        return hw

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "CvtConfig":
        return cls(**json.loads(text))


@dataclass
class ModelOutputs:
    """Unit-norm embeddings plus both heads' logits."""

    z: Tensor
    logits_injection: Tensor
    logits_accumulation: Tensor


class ExternalAttention(Module):
    """Multi-head attention over learnable external key slots.

    Per head: scores = (Norm(Q Kw^T) + B) / sqrt(d/H), attention = softmax
    over slots, output = attention-weighted self-values, heads concatenated.
    """

    def __init__(self, dim: int, num_heads: int, key_dim: int, num_tokens: int,
                 rng: np.random.Generator, norm: str = "batch"):
        self.num_heads = num_heads
        self.head_key_dim = key_dim // num_heads
        self.num_tokens = num_tokens
        self.wq = Linear(dim, key_dim, rng, bias=False)
        self.key = Parameter(rng.normal(0.0, 0.02, size=(num_tokens, key_dim)))
        self.bias = Parameter(np.zeros((num_heads, num_tokens, num_tokens)))
        self.wv = Linear(dim, dim, rng, bias=False)
        self.norm = BatchNorm(num_heads * num_tokens) if norm == "batch" else None
        self.scale = 1.0 / np.sqrt(self.head_key_dim)

    def _scores(self, x: Tensor, train: bool) -> Tensor:
        b, n, _ = x.shape
        h, dh, m = self.num_heads, self.head_key_dim, self.num_tokens
        q = ag.reshape(self.wq(x), (b, n, h, dh))
        q = ag.transpose(q, (0, 2, 1, 3))  # (B, H, N, dh)
        k = ag.transpose(ag.reshape(self.key, (m, h, dh)), (1, 2, 0))  # (H, dh, m)
        raw = ag.matmul(q, k)  # (B, H, N, m)
        if self.norm is not None:
            flat = ag.reshape(ag.transpose(raw, (0, 2, 1, 3)), (b * n, h * m))
            flat = self.norm(flat, train)
            raw = ag.transpose(ag.reshape(flat, (b, n, h, m)), (0, 2, 1, 3))
        return ag.mul(ag.add(raw, self.bias), self.scale)

    def attention_map(self, x: Tensor, train: bool = False) -> Tensor:
        """Per-head attention rows (B, H, N, slots); each row sums to 1."""
        return ag.softmax(self._scores(x, train), axis=-1)

    def __call__(self, x: Tensor, train: bool = False) -> Tensor:
        b, n, d = x.shape
        h = self.num_heads
        attn = ag.softmax(self._scores(x, train), axis=-1)
        v = ag.transpose(ag.reshape(self.wv(x), (b, n, h, d // h)), (0, 2, 1, 3))
        out = ag.matmul(attn, v)  # (B, H, N, d/H)
        return ag.reshape(ag.transpose(out, (0, 2, 1, 3)), (b, n, d))


class TransformerBlock(Module):
    """Pre-norm residual block: external attention, then a 2x-expansion MLP."""

    def __init__(self, dim: int, num_heads: int, key_dim: int, num_tokens: int,
                 dropout_rate: float, rng: np.random.Generator, norm: str = "batch"):
        self.ln1 = LayerNorm(dim)
        self.attn = ExternalAttention(dim, num_heads, key_dim, num_tokens, rng, norm=norm)
        self.ln2 = LayerNorm(dim)
        self.fc1 = Linear(dim, 2 * dim, rng)
        self.fc2 = Linear(2 * dim, dim, rng)
        self.dropout_rate = dropout_rate

    def __call__(self, x: Tensor, train: bool, rng: np.random.Generator | None) -> Tensor:
        a = self.attn(self.ln1(x), train)
        x = ag.add(x, nn.dropout(a, self.dropout_rate, train, rng))
        m = ag.gelu(self.fc1(self.ln2(x)))
        m = self.fc2(nn.dropout(m, self.dropout_rate, train, rng))
        return ag.add(x, nn.dropout(m, self.dropout_rate, train, rng))


class Shrink(Module):
    """Stride-2 conv+BN on the re-gridded token map: halves resolution, widens channels."""

    def __init__(self, in_dim: int, out_dim: int, in_hw: int, rng: np.random.Generator):
        self.conv = Conv2d(in_dim, out_dim, rng, kernel_size=3, stride=2, padding=1,
                           bias=False)
        self.bn = BatchNorm2d(out_dim)
        self.in_hw = in_hw

    def __call__(self, x: Tensor, train: bool) -> Tensor:
        b, n, d = x.shape
        grid = ag.reshape(ag.transpose(x, (0, 2, 1)), (b, d, self.in_hw, self.in_hw))
        out = self.bn(self.conv(grid), train)
        _, d2, h2, w2 = out.shape
        return ag.transpose(ag.reshape(out, (b, d2, h2 * w2)), (0, 2, 1))


class FocusBank(Module):
    """One learnable attention vector per class plus a monotone activation mask.

    Rows are unit-normalized on read (gradients flow through the
    normalization); inactive rows never enter a loss, so they get no gradient.
    """

    def __init__(self, num_classes: int, dim: int, rng: np.random.Generator):
        self.focuses = Parameter(rng.normal(0.0, 0.01, size=(num_classes, dim)))
        self.active = np.zeros(num_classes, dtype=bool)

    @property
    def num_classes(self) -> int:
        return self.focuses.shape[0]

    def activate(self, labels) -> None:
        labels = np.atleast_1d(np.asarray(labels, dtype=np.int64))
        if labels.size and (labels.min() < 0 or labels.max() >= self.num_classes):
            raise ConfigurationError(
                f"label outside [0, {self.num_classes}): {labels.min()}..{labels.max()}"
            )
        self.active[labels] = True

    def active_classes(self) -> np.ndarray:
        return np.flatnonzero(self.active)

    def active_rows(self):
        """(unit-norm rows of active focuses, their class ids)."""
        ids = self.active_classes()
        if ids.size == 0:
            return None, ids
        return ag.l2_normalize(self.focuses)[ids, :], ids


def activate_focuses(bank: FocusBank, labels_seen) -> FocusBank:
    """Mark the given classes as seen; previously active entries are untouched."""
    bank.activate(labels_seen)
    return bank


class _Stem(Module):
    """Two stride-2 conv+BN+GELU stages mapping pixels to the first token grid."""

    def __init__(self, in_channels: int, mid: int, out: int, rng: np.random.Generator):
        # biases would be cancelled by the following batch norm
        self.conv1 = Conv2d(in_channels, mid, rng, kernel_size=3, stride=2, padding=1,
                            bias=False)
        self.bn1 = BatchNorm2d(mid)
        self.conv2 = Conv2d(mid, out, rng, kernel_size=3, stride=2, padding=1, bias=False)
        self.bn2 = BatchNorm2d(out)

    def __call__(self, x: Tensor, train: bool) -> Tensor:
        x = ag.gelu(self.bn1(self.conv1(x), train))
        return ag.gelu(self.bn2(self.conv2(x), train))


class _Stage(Module):
    def __init__(self, blocks):
        self.blocks = blocks

    def __call__(self, x: Tensor, train: bool, rng) -> Tensor:
        for block in self.blocks:
            x = block(x, train, rng)
        return x


class CvtModel(Module):
    """Backbone + focus bank + shared projection + dual classifier heads."""

    def __init__(self, config: CvtConfig, rng: np.random.Generator):
        self.config = config
        hw = config.token_hw_per_stage()
        self.stem = _Stem(3, config.stem_channels, config.stage_dims[0], rng)
        self.stages = []
        self.shrinks = []
        for i, (dim, heads, blocks) in enumerate(
            zip(config.stage_dims, config.heads_per_stage, config.blocks_per_stage)
        ):
            stage = _Stage([
                TransformerBlock(dim, heads, config.key_dim, hw[i] * hw[i],
                                 config.dropout_rate, rng, norm=config.attention_norm)
                for _ in range(blocks)
            ])
            self.stages.append(stage)
            if i + 1 < len(config.stage_dims):
                self.shrinks.append(Shrink(dim, config.stage_dims[i + 1], hw[i], rng))
        if config.embed_dim != config.stage_dims[-1]:
            self.embed_map = Linear(config.stage_dims[-1], config.embed_dim, rng)
        else:
            self.embed_map = None
        self.focus_bank = FocusBank(config.num_classes, config.embed_dim, rng)
        self.proj1 = Linear(config.embed_dim, config.embed_dim, rng)
        self.proj2 = Linear(config.embed_dim, config.projection_dim, rng)
        self.head_injection = Linear(config.projection_dim, config.num_classes, rng)
        self.head_accumulation = Linear(config.projection_dim, config.num_classes, rng)

    # -- forward paths -------------------------------------------------

    def pooled_features(self, images, train: bool = False,
                        rng: np.random.Generator | None = None) -> Tensor:
        """Global-average-pooled representation of the last stage's tokens."""
        x = images if isinstance(images, Tensor) else Tensor(images)
        if x.shape[1:] != (3, self.config.image_size, self.config.image_size):
            raise ValueError(
                f"expected (b, 3, {self.config.image_size}, {self.config.image_size}), got {x.shape}"
            )
        x = self.stem(x, train)
        b, d, h, w = x.shape
        x = ag.transpose(ag.reshape(x, (b, d, h * w)), (0, 2, 1))
        for i, stage in enumerate(self.stages):
            x = stage(x, train, rng)
            if i < len(self.shrinks):
                x = self.shrinks[i](x, train)
        pooled = ag.mean(x, axis=1)
        if self.embed_map is not None:
            pooled = self.embed_map(pooled)
        return pooled

    def embed(self, images, train: bool = False, rng: np.random.Generator | None = None) -> Tensor:
        """Images -> unit-norm attention embedding z (rows on the hypersphere)."""
        return ag.l2_normalize(self.pooled_features(images, train=train, rng=rng))

    def classify(self, features: Tensor, train: bool = False):
        """Shared projection feeding the two independent heads.

        Accepts the pooled representation (the usual path) or z; both live in
        embed_dim space.
        """
        if features.shape[-1] != self.config.embed_dim:
            raise ValueError(
                f"classify expects dim {self.config.embed_dim}, got {features.shape[-1]}"
            )
        g = self.proj2(ag.gelu(self.proj1(features)))
        return self.head_injection(g), self.head_accumulation(g)

    def forward(self, images, train: bool = False,
                rng: np.random.Generator | None = None) -> ModelOutputs:
        pooled = self.pooled_features(images, train=train, rng=rng)
        logits_i, logits_a = self.classify(pooled, train=train)
        return ModelOutputs(z=ag.l2_normalize(pooled), logits_injection=logits_i,
                            logits_accumulation=logits_a)

    # -- focus lifecycle --------------------------------------------------

    def activate_classes(self, labels) -> None:
        self.focus_bank.activate(labels)

    def seen_classes(self) -> np.ndarray:
        return self.focus_bank.active_classes()
