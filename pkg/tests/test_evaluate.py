import numpy as np
import pytest

from dipme.evaluate import (
    ConfusionMatrix,
    MetricReport,
    SplitPlan,
    confusion,
    folder_holdout,
    kfold,
    leave_one_operator_out,
    metrics,
    stratified_holdout,
)


def brute_force_metrics(preds, labels):
    """Independent recount: iterate raw prediction pairs, no vectorization."""
    n_correct = sum(1 for p, t in zip(preds, labels) if p == t)
    accuracy = n_correct / len(labels)
    precision, recall, f1 = [], [], []
    for c in range(6):
        tp = sum(1 for p, t in zip(preds, labels) if p == c and t == c)
        fp = sum(1 for p, t in zip(preds, labels) if p == c and t != c)
        fn = sum(1 for p, t in zip(preds, labels) if p != c and t == c)
        prec = tp / (tp + fp) if tp + fp else 0.0
        rec = tp / (tp + fn) if tp + fn else 0.0
        precision.append(prec)
        recall.append(rec)
        f1.append(2 * prec * rec / (prec + rec) if prec + rec else 0.0)
    return {
        "accuracy": accuracy,
        "macro_precision": sum(precision) / 6,
        "macro_recall": sum(recall) / 6,
        "macro_f1": sum(f1) / 6,
    }


class TestConfusion:
    def test_perfect_diagonal(self):
        labels = np.repeat(np.arange(6), 4)
        cm = confusion(labels, labels)
        assert np.all(np.diag(cm.counts) == 4)
        np.testing.assert_array_equal(cm.row_normalized(), np.eye(6))

    def test_all_predicted_class_zero(self):
        labels = np.repeat(np.arange(6), 2)
        cm = confusion(np.zeros_like(labels), labels)
        assert cm.counts[:, 0].sum() == len(labels)
        assert cm.counts[:, 1:].sum() == 0

    def test_hand_counted_case(self):
        cm = confusion(preds=[0, 1, 1], labels=[0, 0, 1])
        rn = cm.row_normalized()
        np.testing.assert_allclose(rn[0, :2], [0.5, 0.5])
        np.testing.assert_allclose(rn[1, :2], [0.0, 1.0])

    def test_out_of_range_label_rejected(self):
        with pytest.raises(ValueError):
            confusion([0], [7])

    def test_row_sums_equal_class_counts(self):
        rng = np.random.default_rng(0)
        labels = rng.integers(0, 6, 100)
        preds = rng.integers(0, 6, 100)
        cm = confusion(preds, labels)
        np.testing.assert_array_equal(cm.counts.sum(axis=1), np.bincount(labels, minlength=6))


class TestMetrics:
    def test_identity_all_ones(self):
        r = metrics(confusion(np.repeat(np.arange(6), 3), np.repeat(np.arange(6), 3)))
        assert r.accuracy == r.macro_precision == r.macro_recall == r.macro_f1 == 1.0

    def test_hand_case(self):
        with pytest.warns(UserWarning):
            r = metrics(confusion(preds=[0, 1, 1], labels=[0, 0, 1]))
        assert r.accuracy == pytest.approx(2 / 3)
        # per-class over the two active classes: precision (1, 0.5), recall (0.5, 1)
        assert r.per_class_precision[0] == pytest.approx(1.0)
        assert r.per_class_precision[1] == pytest.approx(0.5)
        assert r.per_class_recall[0] == pytest.approx(0.5)
        assert r.per_class_recall[1] == pytest.approx(1.0)

    def test_balanced_accuracy_equals_macro_recall(self):
        rng = np.random.default_rng(1)
        labels = np.repeat(np.arange(6), 10)
        preds = rng.integers(0, 6, 60)
        r = metrics(confusion(preds, labels))
        assert r.accuracy == pytest.approx(r.macro_recall, abs=1e-12)

    def test_empty_matrix_rejected(self):
        with pytest.raises(ValueError):
            metrics(ConfusionMatrix(np.zeros((6, 6), int)))

    @pytest.mark.parametrize("seed", range(20))
    def test_matches_brute_force_recount(self, seed):
        rng = np.random.default_rng(seed)
        n = rng.integers(20, 200)
        labels = rng.integers(0, 6, n)
        preds = rng.integers(0, 6, n)
        import warnings

        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            r = metrics(confusion(preds, labels))
        b = brute_force_metrics(preds, labels)
        assert r.accuracy == b["accuracy"]
        assert r.macro_precision == pytest.approx(b["macro_precision"], abs=1e-15)
        assert r.macro_recall == pytest.approx(b["macro_recall"], abs=1e-15)
        assert r.macro_f1 == pytest.approx(b["macro_f1"], abs=1e-15)


class TestKfold:
    def test_240_samples_10_folds_stratified(self):
        labels = np.repeat(np.arange(6), 40)
        plan = kfold(labels, k=10, seed=0)
        assert len(plan.splits) == 10
        for train_ids, test_ids in plan.splits:
            assert len(test_ids) == 24
            fold_labels = labels[test_ids]
            assert all(np.sum(fold_labels == c) == 4 for c in range(6))

    def test_partition_contract(self):
        labels = np.repeat(np.arange(6), 7)
        plan = kfold(labels, k=5, seed=1)
        all_test = sorted(i for _, te in plan.splits for i in te)
        assert all_test == list(range(len(labels)))

    def test_k1_rejected(self):
        with pytest.raises(ValueError):
            kfold(np.zeros(10, int), k=1)

    def test_k_exceeding_size_rejected(self):
        with pytest.raises(ValueError):
            kfold(np.zeros(5, int), k=10)

    def test_deterministic(self):
        labels = np.repeat(np.arange(6), 10)
        assert kfold(labels, k=5, seed=3).splits == kfold(labels, k=5, seed=3).splits


class TestLeaveOneOperatorOut:
    def test_group_size_two_gives_144_36(self):
        operators = np.repeat(np.arange(10), 18)
        plan = leave_one_operator_out(operators, group_size=2)
        assert len(plan.splits) == 5
        for train_ids, test_ids in plan.splits:
            assert len(train_ids) == 144 and len(test_ids) == 36

    def test_operator_disjointness(self):
        rng = np.random.default_rng(0)
        operators = rng.integers(0, 6, 60)
        plan = leave_one_operator_out(operators)
        for train_ids, test_ids in plan.splits:
            assert not (set(operators[train_ids]) & set(operators[test_ids]))

    def test_group_size_one_count(self):
        operators = np.repeat(np.arange(10), 3)
        assert len(leave_one_operator_out(operators, group_size=1).splits) == 10

    def test_single_operator_rejected(self):
        with pytest.raises(ValueError):
            leave_one_operator_out(np.zeros(10, int))


class TestFolderHoldout:
    def test_seven_folders_three_held_out(self):
        labels = np.tile(np.repeat(np.arange(6), 10), 7)
        ops = np.repeat(np.arange(7), 60)
        plan = folder_holdout(labels, ops, seed=0)
        assert plan.protocol == "folder-holdout"
        (train_ids, test_ids), = plan.splits
        assert len(test_ids) == pytest.approx(len(labels) * 3 / 7, abs=6)
        # stratification: each class appears in the test side
        assert set(labels[test_ids]) == set(range(6))

    def test_disjoint(self):
        labels = np.repeat(np.arange(6), 14)
        plan = folder_holdout(labels, seed=2)
        (train_ids, test_ids), = plan.splits
        assert not (set(train_ids) & set(test_ids))


class TestStratifiedHoldout:
    def test_240_gives_200_40(self):
        labels = np.repeat(np.arange(6), 40)
        plan = stratified_holdout(labels, seed=0)
        (train_ids, test_ids), = plan.splits
        assert len(train_ids) == 200 and len(test_ids) == 40
        assert all(np.sum(labels[test_ids] == c) == 7 or np.sum(labels[test_ids] == c) == 6 for c in range(6))


class TestSplitPlanInvariant:
    def test_overlap_rejected(self):
        with pytest.raises(ValueError):
            SplitPlan(protocol="x", splits=[([1, 2], [2, 3])])
