"""Metrics against brute-force references; protocol semantics."""

import numpy as np
import pytest

from cvt.evaluation import (
    AccuracyMatrix,
    evaluate_task,
    forgetting,
    incremental_metrics,
    overall_accuracy,
    results_payload,
)
from cvt.model import CvtConfig, CvtModel
from cvt.seeding import MODEL, rng_from

from oracles import forgetting_reference, overall_accuracy_reference


def random_matrix(rng, T):
    return [list(rng.uniform(0, 100, size=i + 1)) for i in range(T)]


class TestAccuracyMatrix:
    def test_row_length_validation(self):
        m = AccuracyMatrix()
        m.add_row([50.0])
        with pytest.raises(ValueError, match="expected 2 entries"):
            m.add_row([1.0, 2.0, 3.0])

    def test_one_based_accessor(self):
        m = AccuracyMatrix([[80.0], [60.0, 70.0]])
        assert m.accuracy(1, 1) == 80.0
        assert m.accuracy(2, 1) == 60.0

    def test_csv_has_blank_upper_triangle(self):
        m = AccuracyMatrix([[80.0], [60.0, 70.0]])
        lines = m.to_csv().strip().split("\n")
        assert lines[1].endswith(",")  # undefined entry stays blank, never 0


class TestOverallAccuracy:
    def test_all_hundred(self):
        m = AccuracyMatrix([[100.0], [100.0, 100.0]])
        assert overall_accuracy(m) == 100.0

    def test_worked_example(self):
        m = AccuracyMatrix([[80.0], [60.0, 70.0]])
        assert overall_accuracy(m) == pytest.approx(65.0)

    def test_single_task(self):
        assert overall_accuracy(AccuracyMatrix([[83.0]])) == pytest.approx(83.0)

    def test_permutation_invariant_over_last_row(self):
        rng = np.random.default_rng(0)
        rows = random_matrix(rng, 4)
        base = overall_accuracy(rows)
        shuffled = [list(r) for r in rows]
        rng.shuffle(shuffled[-1])
        assert overall_accuracy(shuffled) == pytest.approx(base)

    def test_incomplete_final_row_rejected(self):
        with pytest.raises(ValueError, match="incomplete"):
            overall_accuracy([[80.0], [60.0]])


class TestForgetting:
    def test_worked_example(self):
        assert forgetting([[80.0], [60.0, 70.0]]) == pytest.approx(20.0)

    def test_constant_accuracy_means_zero(self):
        rows = [[70.0], [70.0, 55.0], [70.0, 55.0, 90.0]]
        assert forgetting(rows) == pytest.approx(0.0)

    def test_improvement_gives_non_positive(self):
        rows = [[50.0], [60.0, 40.0], [70.0, 55.0, 30.0]]
        assert forgetting(rows) <= 0.0

    def test_single_task_is_undefined(self):
        assert forgetting([[83.0]]) is None

    def test_matches_brute_force_on_random_matrices(self):
        rng = np.random.default_rng(1)
        for _ in range(400):
            T = int(rng.integers(2, 7))
            rows = random_matrix(rng, T)
            assert forgetting(rows) == pytest.approx(forgetting_reference(rows), abs=1e-12)
            assert overall_accuracy(rows) == pytest.approx(
                overall_accuracy_reference(rows), abs=1e-12
            )


class TestIncrementalMetrics:
    def test_uses_prefix_rows_only(self):
        rows = [[80.0], [60.0, 70.0], [40.0, 50.0, 90.0]]
        curve = incremental_metrics(rows)
        assert [c["task"] for c in curve] == [1, 2, 3]
        assert curve[0]["A_i"] == pytest.approx(80.0)
        assert curve[0]["F_i"] is None  # F_1 undefined, not zero
        assert curve[1]["A_i"] == pytest.approx(65.0)
        assert curve[1]["F_i"] == pytest.approx(20.0)
        assert curve[2]["F_i"] == pytest.approx(
            forgetting_reference([list(r) for r in rows])
        )

    def test_results_payload_structure(self):
        m = AccuracyMatrix([[80.0], [60.0, 70.0]])
        payload = results_payload("task_free", 3, m)
        assert payload["protocol"] == "task_free"
        assert payload["seed"] == 3
        assert payload["accuracy_matrix"] == [[80.0], [60.0, 70.0]]
        assert payload["overall_accuracy"] == pytest.approx(65.0)
        assert payload["forgetting"] == pytest.approx(20.0)
        assert len(payload["per_boundary"]) == 2


class _StubModel:
    """Accumulation head emits chosen logits; injection head would mislead."""

    def __init__(self, make_logits, num_classes):
        self._make = make_logits
        self._num_classes = num_classes
        self._seen = np.arange(num_classes)

    def forward(self, images, train=False):
        from cvt.model import ModelOutputs
        from cvt.autograd import Tensor

        n = len(images)
        logits = self._make(n, self._num_classes)
        return ModelOutputs(
            z=Tensor(np.zeros((n, 4))),
            logits_injection=Tensor(-logits),  # deliberately wrong head
            logits_accumulation=Tensor(logits),
        )

    def seen_classes(self):
        return self._seen


class TestEvaluateTask:
    def test_random_logits_near_chance_for_two_classes(self):
        rng = np.random.default_rng(7)
        stub = _StubModel(lambda n, c: rng.normal(size=(n, c)), 10)
        labels = np.repeat([3, 4], 500)
        acc = evaluate_task(stub, np.zeros((1000, 1)), labels, "task_aware", [3, 4])
        sigma = 100 * np.sqrt(0.25 / 1000)
        assert abs(acc - 50.0) <= 3 * sigma

    def test_always_correct_accumulation_head(self):
        labels = np.array([2, 0, 1, 2])

        def perfect(n, c):
            logits = np.zeros((n, c))
            logits[np.arange(n), labels[:n]] = 5.0
            return logits

        stub = _StubModel(perfect, 3)
        acc = evaluate_task(stub, np.zeros((4, 1)), labels, "task_free", [0, 1, 2])
        assert acc == 100.0  # predictions come from f_A, not the poisoned f_I

    def test_task_aware_dominates_task_free(self):
        model = CvtModel(
            CvtConfig(num_classes=10, image_size=8, stem_channels=8, stage_dims=(12, 16),
                      heads_per_stage=(2, 2), key_dim=8, external_slots=4,
                      blocks_per_stage=(1, 1), embed_dim=16, projection_dim=8),
            rng_from(0, MODEL),
        )
        model.activate_classes(np.arange(10))
        rng = np.random.default_rng(9)
        images = rng.random((60, 3, 8, 8))
        labels = rng.integers(4, 6, size=60)
        aware = evaluate_task(model, images, labels, "task_aware", [4, 5])
        free = evaluate_task(model, images, labels, "task_free", [4, 5])
        assert aware >= free

    def test_empty_test_set_rejected(self):
        stub = _StubModel(lambda n, c: np.zeros((n, c)), 4)
        with pytest.raises(ValueError, match="empty"):
            evaluate_task(stub, np.zeros((0, 1)), np.zeros(0), "task_free", [0])

    def test_unknown_protocol_rejected(self):
        stub = _StubModel(lambda n, c: np.zeros((n, c)), 4)
        with pytest.raises(ValueError, match="protocol"):
            evaluate_task(stub, np.zeros((2, 1)), np.zeros(2), "oracle", [0])
