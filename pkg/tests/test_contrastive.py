import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from chartadapter import tensor as T
from chartadapter.contrastive import (
    ContrastiveBatch,
    info_nce_loss,
    retrieval_binary_metrics,
    run_stage1,
)
from chartadapter.data import generate_synthetic
from chartadapter.errors import ContractError, NumericError, ShapeError
from chartadapter.model import ChartSummarizer
from chartadapter.training import STAGE1_GROUPS, StagePlan
from tests.conftest import tiny_run_config


def batch(chart, text):
    return ContrastiveBatch(
        chart_embeddings=T.Tensor(np.asarray(chart, dtype=np.float32)),
        text_embeddings=T.Tensor(np.asarray(text, dtype=np.float32)),
    )


class TestInfoNCE:
    def test_identical_embeddings_score_log_b(self):
        rows = [[0.3, 0.4, 0.1], [0.3, 0.4, 0.1], [0.3, 0.4, 0.1], [0.3, 0.4, 0.1]]
        loss = info_nce_loss(batch(rows, rows), temperature=0.07)
        assert loss.item() == pytest.approx(math.log(4), rel=1e-5)

    def test_matched_orthogonal_pairs_small_temperature(self):
        eye = np.eye(3).tolist()
        loss = info_nce_loss(batch(eye, eye), temperature=0.01)
        assert loss.item() < 1e-6

    def test_hand_built_two_pair_batch(self):
        """Loss equals an independent scalar recomputation of the same batch."""
        chart = [[1.0, 0.0], [0.6, 0.8]]
        text = [[0.8, 0.6], [0.0, 1.0]]
        tau = 0.5
        # scalar oracle: all four rows are unit norm already
        s = [[(c[0] * t[0] + c[1] * t[1]) / tau for t in text] for c in chart]

        def ce(logits, target):
            m = max(logits)
            z = [math.exp(v - m) for v in logits]
            return -math.log(z[target] / sum(z))

        by_chart = (ce(s[0], 0) + ce(s[1], 1)) / 2
        by_text = (ce([s[0][0], s[1][0]], 0) + ce([s[0][1], s[1][1]], 1)) / 2
        expected = 0.5 * (by_chart + by_text)
        assert expected == pytest.approx(0.5248968, abs=1e-6)
        loss = info_nce_loss(batch(chart, text), temperature=tau)
        assert loss.item() == pytest.approx(expected, rel=1e-6)

    def test_scale_invariance(self):
        rng = np.random.default_rng(0)
        chart = rng.standard_normal((4, 6))
        text = rng.standard_normal((4, 6))
        base = info_nce_loss(batch(chart, text), 0.07).item()
        scaled = info_nce_loss(batch(chart * 37.5, text * 0.004), 0.07).item()
        assert scaled == pytest.approx(base, rel=1e-4)

    @given(st.floats(0.05, 4.0), st.integers(2, 6))
    @settings(max_examples=30, deadline=None)
    def test_nonnegative(self, tau, b):
        rng = np.random.default_rng(b)
        loss = info_nce_loss(batch(rng.standard_normal((b, 5)),
                                   rng.standard_normal((b, 5))), tau)
        assert loss.item() >= 0.0

    def test_zero_norm_embedding_guarded(self):
        with pytest.raises(NumericError):
            info_nce_loss(batch([[0.0, 0.0], [1.0, 0.0]],
                                [[1.0, 0.0], [0.0, 1.0]]), 0.07)

    def test_batch_of_one_rejected(self):
        with pytest.raises(ContractError):
            batch([[1.0, 0.0]], [[1.0, 0.0]])

    def test_mismatched_sides_rejected(self):
        with pytest.raises(ShapeError):
            batch([[1.0, 0.0], [0.0, 1.0]], [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])

    def test_nonpositive_temperature_rejected(self):
        eye = np.eye(2).tolist()
        with pytest.raises(ContractError):
            info_nce_loss(batch(eye, eye), 0.0)


class TestRetrievalMetrics:
    def test_perfectly_separated_auc_one(self):
        scores = np.array([[0.9, 0.1, 0.2],
                           [0.3, 0.8, 0.1],
                           [0.2, 0.3, 0.7]])
        assert retrieval_binary_metrics(scores, 0.5)["auc"] == 1.0

    def test_all_equal_scores_auc_half(self):
        metrics = retrieval_binary_metrics(np.full((4, 4), 0.3), 0.5)
        assert metrics["auc"] == 0.5

    def test_hand_built_three_by_three_matches_enumeration(self):
        scores = np.array([[0.9, 0.2, 0.4],
                           [0.1, 0.8, 0.3],
                           [0.5, 0.6, 0.55]])
        got = retrieval_binary_metrics(scores, threshold=0.5)

        # brute-force enumeration over every (positive, negative) pair
        pos = [scores[i, i] for i in range(3)]
        neg = [scores[i, j] for i in range(3) for j in range(3) if i != j]
        wins = sum(1.0 if p > n else 0.5 if p == n else 0.0
                   for p in pos for n in neg)
        assert got["auc"] == pytest.approx(wins / (len(pos) * len(neg)))
        assert got["auc"] == pytest.approx(17 / 18)

        tp = sum(p >= 0.5 for p in pos)
        fp = sum(n >= 0.5 for n in neg)
        fn = len(pos) - tp
        tn = len(neg) - fp
        assert got["accuracy"] == pytest.approx((tp + tn) / 9)
        assert got["precision"] == pytest.approx(tp / (tp + fp))
        assert got["recall"] == pytest.approx(tp / (tp + fn))
        f1 = 2 * got["precision"] * got["recall"] / (got["precision"] + got["recall"])
        assert got["f1"] == pytest.approx(f1)

    def test_rectangular_rejected(self):
        with pytest.raises(ContractError):
            retrieval_binary_metrics(np.zeros((2, 3)), 0.5)


class TestRunStage1:
    def test_only_stage1_groups_move(self):
        model = ChartSummarizer.create(tiny_run_config(seed=1))
        samples = generate_synthetic(12, seed=1)
        before = model.group_hashes()
        plan = StagePlan(1, STAGE1_GROUPS, epochs=4, lr=3e-4, batch_size=6,
                         max_steps=6)
        report = run_stage1(model, samples, plan, np.random.default_rng(0))
        after = model.group_hashes()
        for group in before:
            if group in STAGE1_GROUPS:
                assert before[group] != after[group], f"{group} did not train"
            else:
                assert before[group] == after[group], f"{group} leaked"
        assert report.steps == 6
        assert set(report.retrieval) == {"auc", "accuracy", "precision",
                                         "recall", "f1"}

    def test_plan_mismatch_rejected(self):
        model = ChartSummarizer.create(tiny_run_config(seed=1))
        samples = generate_synthetic(4, seed=1)
        bad = StagePlan(1, ("projector",), epochs=1, lr=1e-3, batch_size=4)
        with pytest.raises(ContractError):
            run_stage1(model, samples, bad, np.random.default_rng(0))

    def test_single_sample_rejected(self):
        model = ChartSummarizer.create(tiny_run_config(seed=1))
        plan = StagePlan(1, STAGE1_GROUPS, epochs=1, lr=1e-3, batch_size=4)
        with pytest.raises(ContractError):
            run_stage1(model, generate_synthetic(1, 0), plan,
                       np.random.default_rng(0))
