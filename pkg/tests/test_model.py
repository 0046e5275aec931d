"""Architecture contracts: attention, embeddings, heads, focuses, checkpoints."""

import math

import numpy as np
import pytest

import cvt.autograd as ag
from cvt.autograd import Tensor
from cvt.checkpoint import checkpoint_bytes, load_checkpoint, save_checkpoint
from cvt.errors import ConfigurationError
from cvt.model import (
    CvtConfig,
    CvtModel,
    ExternalAttention,
    FocusBank,
    activate_focuses,
    count_parameters,
)
from cvt.nn import Linear
from cvt.seeding import rng_from

from oracles import finite_difference_sample, relative_error


def tiny_config(**kw):
    base = dict(
        num_classes=4, image_size=8, stem_channels=8, stage_dims=(12, 16),
        heads_per_stage=(2, 2), key_dim=8, external_slots=4,
        blocks_per_stage=(1, 1), embed_dim=16, projection_dim=8, dropout_rate=0.0,
    )
    base.update(kw)
    return CvtConfig(**base)


class TestExternalAttention:
    def test_rows_sum_to_one(self):
        rng = np.random.default_rng(0)
        attn = ExternalAttention(dim=12, num_heads=2, key_dim=8, num_tokens=9, rng=rng)
        x = Tensor(rng.normal(size=(5, 9, 12)))
        for train in (True, False):
            rows = attn.attention_map(x, train=train).data
            assert rows.shape == (5, 2, 9, 9)
            assert np.max(np.abs(rows.sum(axis=-1) - 1.0)) < 1e-6

    def test_uniform_case_gives_exact_inverse_slot_count(self):
        # zero queries + zero bias -> all scores equal -> rows exactly 1/m
        rng = np.random.default_rng(1)
        attn = ExternalAttention(dim=6, num_heads=2, key_dim=4, num_tokens=4, rng=rng)
        attn.wq.weight.data[:] = 0.0
        x = Tensor(rng.normal(size=(3, 4, 6)))
        rows = attn.attention_map(x, train=True).data
        assert np.all(rows == 1.0 / 4)

    def test_uniform_attention_outputs_value_column_means(self):
        rng = np.random.default_rng(2)
        attn = ExternalAttention(dim=6, num_heads=2, key_dim=4, num_tokens=4, rng=rng)
        attn.wq.weight.data[:] = 0.0
        x = Tensor(rng.normal(size=(2, 4, 6)))
        out = attn(x, train=False).data
        v = attn.wv(x).data.reshape(2, 4, 2, 3).transpose(0, 2, 1, 3)  # (B,H,m,dv)
        expected = v.mean(axis=2, keepdims=True).repeat(4, axis=2)
        expected = expected.transpose(0, 2, 1, 3).reshape(2, 4, 6)
        assert np.max(np.abs(out - expected)) < 1e-12

    def test_hand_evaluated_two_token_oracle(self):
        # H=1, N=m=2, d=2, identity norm; independent evaluation with math.exp
        rng = np.random.default_rng(3)
        attn = ExternalAttention(dim=2, num_heads=1, key_dim=2, num_tokens=2,
                                 rng=rng, norm="identity")
        attn.wq.weight.data = np.eye(2)
        attn.wv.weight.data = np.eye(2)
        key = np.array([[0.5, -1.0], [1.5, 0.25]])
        bias = np.array([[[0.2, -0.3], [0.0, 0.4]]])
        attn.key.data = key.copy()
        attn.bias.data = bias.copy()
        x = np.array([[[1.0, 2.0], [-0.5, 0.75]]])

        out = attn(Tensor(x), train=False).data[0]

        scale = 1.0 / math.sqrt(2.0)
        expected = np.zeros((2, 2))
        for i in range(2):
            scores = [
                (sum(x[0, i, k] * key[j, k] for k in range(2)) + bias[0, i, j]) * scale
                for j in range(2)
            ]
            exps = [math.exp(s) for s in scores]
            weights = [e / sum(exps) for e in exps]
            for k in range(2):
                expected[i, k] = sum(weights[j] * x[0, j, k] for j in range(2))
        assert np.max(np.abs(out - expected)) < 1e-6

    def test_fewer_parameters_than_self_attention_key_projection(self):
        # learnable key + bias vs a d x token_dim key projection, default config
        cfg = CvtConfig(num_classes=10)
        hw = cfg.token_hw_per_stage()
        for stage, dim in enumerate(cfg.stage_dims):
            n = hw[stage] * hw[stage]
            heads = cfg.heads_per_stage[stage]
            external_extra = n * cfg.key_dim + heads * n * n  # K_W plus B
            self_attention_key = cfg.key_dim * dim
            assert external_extra < self_attention_key


class TestBackboneEmbed:
    def test_unit_norm_rows(self):
        model = CvtModel(CvtConfig(num_classes=10), rng_from(0, 3))
        z = model.embed(np.random.default_rng(0).random((6, 3, 16, 16)))
        assert np.max(np.abs(np.linalg.norm(z.data, axis=1) - 1.0)) < 1e-5

    def test_eval_mode_deterministic(self):
        model = CvtModel(CvtConfig(num_classes=10), rng_from(0, 3))
        x = np.random.default_rng(1).random((4, 3, 16, 16))
        z1 = model.embed(x, train=False)
        z2 = model.embed(x, train=False)
        assert np.array_equal(z1.data, z2.data)

    def test_wrong_image_size_rejected(self):
        model = CvtModel(tiny_config(), rng_from(0, 3))
        with pytest.raises(ValueError, match="expected"):
            model.embed(np.zeros((2, 3, 16, 16)))

    def test_stem_gradient_matches_finite_differences(self):
        model = CvtModel(tiny_config(), rng_from(0, 4))
        x = np.random.default_rng(2).random((3, 3, 8, 8))
        w = model.stem.conv1.weight

        def loss_fn():
            z = model.embed(x, train=True)
            return ag.sum_(ag.mul(z, np.arange(z.shape[1], dtype=float) / 7.0))

        loss_fn().backward()
        analytic = w.grad.copy()
        model.zero_grad()
        coords = np.random.default_rng(3).choice(w.data.size, size=24, replace=False)
        numeric = finite_difference_sample(lambda: loss_fn().item(), w.data, coords)
        assert relative_error(analytic.reshape(-1)[coords], numeric) < 1e-3


class TestClassify:
    def test_heads_have_disjoint_parameters(self):
        model = CvtModel(tiny_config(), rng_from(0, 5))
        x = np.random.default_rng(4).random((3, 3, 8, 8))
        before = model.forward(x).logits_accumulation.data.copy()
        model.head_injection.weight.data += 10.0
        model.head_injection.bias.data -= 3.0
        after = model.forward(x).logits_accumulation.data
        assert np.array_equal(before, after)

    def test_zero_input_zero_heads_give_zero_logits(self):
        model = CvtModel(tiny_config(), rng_from(0, 6))
        for head in (model.head_injection, model.head_accumulation):
            head.weight.data[:] = 0.0
            head.bias.data[:] = 0.0
        li, la = model.classify(Tensor(np.zeros((3, 16))))
        assert np.all(li.data == 0.0) and np.all(la.data == 0.0)

    def test_logit_shapes(self):
        model = CvtModel(tiny_config(num_classes=7), rng_from(0, 7))
        out = model.forward(np.zeros((5, 3, 8, 8)))
        assert out.logits_injection.shape == (5, 7)
        assert out.logits_accumulation.shape == (5, 7)

    def test_wrong_feature_dim_rejected(self):
        model = CvtModel(tiny_config(), rng_from(0, 8))
        with pytest.raises(ValueError, match="classify expects"):
            model.classify(Tensor(np.zeros((2, 5))))


class TestFocusBank:
    def test_fresh_activation(self):
        bank = FocusBank(6, 8, rng_from(0, 9))
        activate_focuses(bank, [0, 1])
        assert bank.active_classes().tolist() == [0, 1]

    def test_monotone_accumulation(self):
        bank = FocusBank(6, 8, rng_from(0, 9))
        bank.activate([0, 1])
        bank.activate([2])
        assert bank.active_classes().tolist() == [0, 1, 2]

    def test_reactivation_is_noop(self):
        bank = FocusBank(6, 8, rng_from(0, 9))
        bank.activate([0, 1])
        before = bank.active.copy()
        bank.activate([0])
        assert np.array_equal(bank.active, before)

    def test_out_of_range_label_rejected(self):
        bank = FocusBank(6, 8, rng_from(0, 9))
        with pytest.raises(ConfigurationError, match="label outside"):
            bank.activate([6])

    def test_active_rows_are_unit_norm_and_graph_connected(self):
        bank = FocusBank(6, 8, rng_from(0, 9))
        bank.activate([1, 4])
        rows, ids = bank.active_rows()
        assert ids.tolist() == [1, 4]
        assert np.allclose(np.linalg.norm(rows.data, axis=1), 1.0)
        ag.sum_(rows).backward()
        grad_rows = np.abs(bank.focuses.grad).sum(axis=1)
        assert np.all(grad_rows[[1, 4]] > 0)
        assert np.all(grad_rows[[0, 2, 3, 5]] == 0)  # inactive rows get no gradient

    def test_empty_bank_returns_none(self):
        bank = FocusBank(6, 8, rng_from(0, 9))
        rows, ids = bank.active_rows()
        assert rows is None and ids.size == 0


class TestCountParameters:
    def test_single_linear_layer(self):
        assert count_parameters(Linear(3, 4, np.random.default_rng(0))) == 16

    def test_doubling_embed_dim_strictly_increases(self):
        a = count_parameters(CvtModel(CvtConfig(num_classes=10), rng_from(0, 1)))
        b = count_parameters(
            CvtModel(CvtConfig(num_classes=10, embed_dim=192), rng_from(0, 1))
        )
        assert b > a

    def test_deterministic_across_constructions(self):
        a = count_parameters(CvtModel(CvtConfig(num_classes=10), rng_from(0, 1)))
        b = count_parameters(CvtModel(CvtConfig(num_classes=10), rng_from(5, 2)))
        assert a == b

    def test_includes_focuses_bias_and_external_key(self):
        cfg = tiny_config()
        model = CvtModel(cfg, rng_from(0, 1))
        names = [n for n, _ in model.named_parameters()]
        assert any("focus_bank.focuses" in n for n in names)
        assert any(".attn.key" in n for n in names)
        assert any(".attn.bias" in n for n in names)


class TestConfigValidation:
    def test_mismatched_stage_lists(self):
        with pytest.raises(ConfigurationError, match="lengths differ"):
            CvtConfig(num_classes=4, stage_dims=(64,), heads_per_stage=(2, 2))

    def test_key_dim_head_divisibility(self):
        with pytest.raises(ConfigurationError, match="not divisible"):
            CvtConfig(num_classes=4, key_dim=30, heads_per_stage=(4, 4))

    def test_slot_token_coupling(self):
        with pytest.raises(ConfigurationError, match="external_slots"):
            CvtConfig(num_classes=4, external_slots=8)

    def test_json_roundtrip(self):
        cfg = CvtConfig(num_classes=10)
        again = CvtConfig.from_json(cfg.to_json())
        assert again == cfg


class TestCheckpoint:
    def test_roundtrip_preserves_outputs_and_mask(self, tmp_path):
        model = CvtModel(tiny_config(), rng_from(0, 11))
        model.activate_classes([0, 2])
        x = np.random.default_rng(5).random((4, 3, 8, 8))
        before = model.forward(x).logits_accumulation.data
        path = tmp_path / "model.ckpt"
        save_checkpoint(path, model)
        loaded, buffer = load_checkpoint(path)
        assert buffer is None
        assert loaded.seen_classes().tolist() == [0, 2]
        after = loaded.forward(x).logits_accumulation.data
        # float32 storage quantizes parameters
        assert np.max(np.abs(before - after)) < 1e-5

    def test_arrays_stored_as_little_endian_float32(self, tmp_path):
        from cvt.checkpoint import read_archive

        model = CvtModel(tiny_config(), rng_from(0, 12))
        path = tmp_path / "model.ckpt"
        save_checkpoint(path, model)
        arrays, meta = read_archive(path)
        params = {k: v for k, v in arrays.items() if k.startswith("param/")}
        assert params
        for arr in params.values():
            assert arr.dtype == np.dtype("<f4")
        assert "config" in meta

    def test_byte_identical_for_identical_state(self):
        a = checkpoint_bytes(CvtModel(tiny_config(), rng_from(3, 1)))
        b = checkpoint_bytes(CvtModel(tiny_config(), rng_from(3, 1)))
        assert a == b

    def test_buffer_snapshot_roundtrip(self, tmp_path):
        from cvt.replay import MemoryBuffer

        model = CvtModel(tiny_config(), rng_from(0, 13))
        buf = MemoryBuffer(4, seed=7)
        rng = np.random.default_rng(8)
        for k in range(9):
            buf.add(rng.integers(0, 256, size=(3, 8, 8)) / 255.0, k % 3)
        path = tmp_path / "with_buffer.ckpt"
        save_checkpoint(path, model, buf)
        _, restored = load_checkpoint(path)
        assert restored.capacity == 4 and restored.seen_count == 9
        # exact resumption: the restored rng continues the original stream
        img = rng.integers(0, 256, size=(3, 8, 8)) / 255.0
        buf.add(img, 0)
        restored.add(img, 0)
        assert np.array_equal(buf.labels_stored(), restored.labels_stored())
        a, _ = buf.sample(3)
        b, _ = restored.sample(3)
        assert np.array_equal(a, b)
