import itertools

import numpy as np
import pytest

from bioprobe import metrics
from bioprobe.errors import DegenerateInputError, ValidationError
from bioprobe.store import MULTI_LABEL, SINGLE_LABEL, LabelSpace


def ap_oracle(scores, positives):
    """Brute-force AP by definition: walk the ranked list, average precision
    at each positive rank.  Stable descending sort, ties by original index."""
    order = sorted(range(len(scores)), key=lambda i: (-scores[i], i))
    hits = 0
    total = 0.0
    for rank, idx in enumerate(order, start=1):
        if positives[idx]:
            hits += 1
            total += hits / rank
    return total / hits


def map_oracle(scores, targets):
    values = []
    for c in range(targets.shape[1]):
        if targets[:, c].sum() == 0:
            continue
        values.append(ap_oracle(list(scores[:, c]), list(targets[:, c])))
    return sum(values) / len(values)


def clf_batch(scores, targets):
    return metrics.PredictionBatch(
        scores=np.asarray(scores, dtype=float),
        targets=np.asarray(targets),
        task_kind=SINGLE_LABEL,
    )


def det_batch(scores, targets):
    return metrics.PredictionBatch(
        scores=np.asarray(scores, dtype=float),
        targets=np.asarray(targets),
        task_kind=MULTI_LABEL,
    )


class TestAccuracy:
    def test_all_correct(self):
        scores = np.eye(3) * 5.0
        assert metrics.accuracy(clf_batch(scores, [0, 1, 2])) == 1.0

    def test_constant_scores_tie_break_to_zero(self):
        scores = np.ones((4, 3))
        assert metrics.accuracy(clf_batch(scores, [0, 0, 0, 0])) == 1.0
        assert metrics.accuracy(clf_batch(scores, [1, 1, 1, 1])) == 0.0

    def test_matches_counting_oracle(self):
        rng = np.random.default_rng(11)
        scores = rng.standard_normal((7, 4))
        targets = rng.integers(0, 4, size=7)
        correct = sum(int(np.argmax(scores[i]) == targets[i]) for i in range(7))
        assert metrics.accuracy(clf_batch(scores, targets)) == correct / 7

    def test_empty_batch_rejected(self):
        with pytest.raises(DegenerateInputError):
            metrics.accuracy(clf_batch(np.zeros((0, 2)), np.zeros(0, dtype=int)))


class TestAveragePrecision:
    def test_perfect_ranking(self):
        assert metrics.average_precision([3.0, 2.0, 1.0], [1, 1, 0]) == 1.0

    def test_positives_at_ranks_one_and_three(self):
        # AP = (1/2)(1/1 + 2/3) = 5/6
        value = metrics.average_precision([3.0, 2.0, 1.0], [1, 0, 1])
        assert value == pytest.approx(5 / 6, abs=1e-12)
        assert value == ap_oracle([3.0, 2.0, 1.0], [1, 0, 1])

    def test_all_positive(self):
        rng = np.random.default_rng(0)
        scores = rng.standard_normal(9)
        assert metrics.average_precision(scores, np.ones(9)) == 1.0

    def test_monotone_transform_invariance(self):
        rng = np.random.default_rng(1)
        scores = rng.standard_normal(12)
        positives = rng.integers(0, 2, size=12)
        positives[0] = 1
        base = metrics.average_precision(scores, positives)
        squashed = metrics.average_precision(np.tanh(scores) * 3 + 7, positives)
        assert base == pytest.approx(squashed, abs=1e-12)

    def test_zero_positives_rejected(self):
        with pytest.raises(DegenerateInputError):
            metrics.average_precision([1.0, 2.0], [0, 0])


class TestMeanAveragePrecision:
    def test_single_class_perfect(self):
        scores = np.array([[3.0], [2.0], [1.0]])
        targets = np.array([[1], [1], [0]])
        assert metrics.mean_average_precision(det_batch(scores, targets)) == 1.0

    def test_mean_of_two_classes(self):
        # class 0 perfectly ranked (AP 1.0); class 1 positive at rank 2 (AP 0.5)
        scores = np.array([[2.0, 2.0], [1.0, 3.0]])
        targets = np.array([[1, 1], [0, 0]])
        value = metrics.mean_average_precision(det_batch(scores, targets))
        assert value == pytest.approx(0.75, abs=1e-12)

    def test_matches_exhaustive_oracle(self):
        rng = np.random.default_rng(2)
        scores = rng.standard_normal((6, 3))
        targets = rng.integers(0, 2, size=(6, 3))
        targets[0] = 1
        value = metrics.mean_average_precision(det_batch(scores, targets))
        assert value == map_oracle(scores, targets)

    def test_all_orderings_match_oracle(self):
        # every permutation of a 6-item batch, scores containing ties
        rng = np.random.default_rng(3)
        scores = np.round(rng.standard_normal((6, 3)), 1)  # rounding forces ties
        targets = rng.integers(0, 2, size=(6, 3))
        targets[2] = 1
        for perm in itertools.permutations(range(6)):
            p = list(perm)
            value = metrics.mean_average_precision(det_batch(scores[p], targets[p]))
            assert value == map_oracle(scores[p], targets[p])

    def test_class_without_positives_is_skipped(self):
        scores = np.array([[1.0, 9.0], [0.5, 3.0]])
        targets = np.array([[1, 0], [0, 0]])
        assert metrics.mean_average_precision(det_batch(scores, targets)) == 1.0

    def test_no_positives_anywhere_rejected(self):
        with pytest.raises(DegenerateInputError):
            metrics.mean_average_precision(det_batch(np.ones((2, 2)), np.zeros((2, 2))))


class TestRandomBaseline:
    def test_fifty_balanced_classes(self):
        space = LabelSpace(
            task_kind=SINGLE_LABEL, label_names=tuple(f"c{i}" for i in range(50))
        )
        targets = np.repeat(np.arange(50), 4)
        assert metrics.random_baseline(space, targets) == pytest.approx(0.02, abs=1e-12)

    def test_majority_class_wins(self):
        space = LabelSpace(task_kind=SINGLE_LABEL, label_names=("a", "b"))
        targets = np.array([0] * 7 + [1] * 3)
        assert metrics.random_baseline(space, targets) == pytest.approx(0.7, abs=1e-12)

    def test_detection_equals_constant_score_ap(self):
        # evenly spaced positives: every 4th item, AP of tied scores is exactly 0.25
        space = LabelSpace(task_kind=MULTI_LABEL, label_names=("a",))
        targets = np.zeros((20, 1), dtype=int)
        targets[3::4, 0] = 1
        value = metrics.random_baseline(space, targets)
        assert value == ap_oracle([0.0] * 20, list(targets[:, 0]))
        assert value == pytest.approx(0.25, abs=1e-12)

    def test_detection_27_percent_prevalence(self):
        # 27 positives spread over 100 items; the oracle pins the exact value,
        # which sits within half a point of the 0.27 prevalence
        space = LabelSpace(task_kind=MULTI_LABEL, label_names=("a",))
        targets = np.zeros((100, 1), dtype=int)
        ranks = [-(-100 * (j + 1) // 27) for j in range(27)]  # ceil spread
        for r in ranks:
            targets[r - 1, 0] = 1
        value = metrics.random_baseline(space, targets)
        assert value == ap_oracle([0.0] * 100, list(targets[:, 0]))
        assert abs(value - 0.27) < 0.005


class TestShuffledTargetsConvergeToBaseline:
    def test_accuracy_within_three_sigma_of_chance(self):
        # scores fixed, targets shuffled: accuracy is a binomial draw around
        # the random baseline
        rng = np.random.default_rng(6)
        m, c = 8000, 4
        scores = rng.standard_normal((m, c))
        targets = np.repeat(np.arange(c), m // c)
        space = LabelSpace(task_kind=SINGLE_LABEL, label_names=tuple("abcd"))
        baseline = metrics.random_baseline(space, targets)
        sigma = np.sqrt(baseline * (1 - baseline) / m)
        for _ in range(3):
            shuffled = targets[rng.permutation(m)]
            acc = metrics.accuracy(clf_batch(scores, shuffled))
            assert abs(acc - baseline) <= 3 * sigma


class TestSelectBest:
    def rows(self, *entries):
        return [
            metrics.SweepResult(layer=l, learning_rate=lr, head="linear_TA",
                                dev_metric=d, test_metric=t)
            for (l, lr, d, t) in entries
        ]

    def test_single_result(self):
        rows = self.rows((3, 1e-4, 0.8, 0.7))
        assert metrics.select_best(rows) == rows[0]

    def test_tie_breaks_to_lower_layer(self):
        rows = self.rows((9, 1e-4, 0.8, 0.7), (3, 1e-4, 0.8, 0.6))
        assert metrics.select_best(rows).layer == 3

    def test_tie_breaks_to_lower_lr(self):
        rows = self.rows((3, 5e-5, 0.8, 0.7), (3, 1e-5, 0.8, 0.6))
        assert metrics.select_best(rows).learning_rate == 1e-5

    def test_grid_scan_oracle(self):
        rng = np.random.default_rng(4)
        rows = []
        for layer in range(8):
            for lr in (1e-5, 5e-5, 1e-4):
                rows.append(
                    metrics.SweepResult(
                        layer=layer, learning_rate=lr, head="linear_TA",
                        dev_metric=float(rng.uniform(0, 0.9)), test_metric=0.5,
                    )
                )
        rows[13] = metrics.SweepResult(layer=4, learning_rate=5e-5, head="linear_TA",
                                       dev_metric=0.99, test_metric=0.5)
        # linear-scan oracle
        best = rows[0]
        for row in rows[1:]:
            if row.dev_metric > best.dev_metric:
                best = row
        assert metrics.select_best(rows) == best

    def test_permutation_invariant(self):
        rng = np.random.default_rng(5)
        rows = self.rows(*[(l, 1e-4, float(rng.uniform(0, 1)), 0.5) for l in range(10)])
        chosen = metrics.select_best(rows)
        for _ in range(5):
            shuffled = [rows[i] for i in rng.permutation(len(rows))]
            assert metrics.select_best(shuffled) == chosen

    def test_empty_rejected(self):
        with pytest.raises(DegenerateInputError):
            metrics.select_best([])

    def test_metrics_bounded(self):
        with pytest.raises(ValidationError):
            metrics.SweepResult(layer=0, learning_rate=1e-4, head="linear_TA",
                                dev_metric=1.2, test_metric=0.5)
