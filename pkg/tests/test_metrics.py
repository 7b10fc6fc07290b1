import math

import numpy as np
import pytest

from ordino.errors import LabelOutOfRange
from ordino.metrics import compute_metrics, group3, length_bucket


def metrics_bruteforce(truth, preds, k):
    """Independent per-class tally with plain Python arithmetic."""

    def grouped(y):
        return None if y is None else (y + 2) // 3

    def macro(values):
        return sum(values) / len(values)

    recalls, uaccs, umses = [], [], []
    for c in range(1, k + 1):
        members = [(y, p) for y, p in zip(truth, preds) if y == c]
        if not members:
            continue
        correct = sum(1 for _, p in members if p == c)
        within = sum(1 for _, p in members if p is not None and abs(p - c) <= 1)
        sse = sum(
            (k * k) if p is None else (p - c) ** 2 for _, p in members
        )
        recalls.append(correct / len(members))
        uaccs.append(within / len(members))
        umses.append(sse / len(members))

    if k <= 3:
        acc3 = 100.0 * macro(recalls)
    else:
        t3 = [grouped(y) for y in truth]
        p3 = [grouped(p) for p in preds]
        recalls3 = []
        for c in range(1, math.ceil(k / 3) + 1):
            members = [(y, p) for y, p in zip(t3, p3) if y == c]
            if members:
                recalls3.append(
                    sum(1 for _, p in members if p == c) / len(members)
                )
        acc3 = 100.0 * macro(recalls3)

    return {
        "acc_k": 100.0 * macro(recalls),
        "acc_3": acc3,
        "acc_pm1": 100.0 * macro(uaccs),
        "mse": macro(umses),
    }


def test_length_bucket():
    assert length_bucket(999) == 0
    assert length_bucket(1000) == 1
    assert length_bucket(30500) == 30


def test_group3():
    assert group3(4) == 2
    assert group3(1) == 1
    assert group3(9) == 3
    assert [group3(y) for y in range(1, 10)] == [1, 1, 1, 2, 2, 2, 3, 3, 3]


def test_perfect_predictions():
    truth = [1, 2, 3, 4, 5, 6, 7, 8, 9]
    report = compute_metrics(truth, truth, 9)
    assert report.acc_k == 100.0
    assert report.acc_3 == 100.0
    assert report.acc_pm1 == 100.0
    assert report.mse == 0.0
    assert report.undefined_count == 0


def test_off_by_one_everywhere():
    truth = [5] * 10
    preds = [6] * 10
    report = compute_metrics(truth, preds, 9)
    assert report.acc_k == 0.0
    assert report.acc_pm1 == 100.0
    assert report.mse == 1.0


def test_undefined_counts_as_worst_case():
    report = compute_metrics([3, 3], [3, None], 9)
    assert report.undefined_count == 1
    assert report.acc_k == 50.0
    assert report.acc_pm1 == 50.0
    assert report.mse == pytest.approx((0 + 81) / 2)
    assert report.per_class[3]["undefined"] == 1


def test_confusion_rows_plus_undefined_equals_support():
    rng = np.random.default_rng(0)
    k = 9
    truth = rng.integers(1, k + 1, size=300).tolist()
    preds = [
        None if rng.random() < 0.1 else int(rng.integers(1, k + 1))
        for _ in range(300)
    ]
    report = compute_metrics(truth, preds, k)
    confusion = np.array(report.confusion)
    for c, row in report.per_class.items():
        assert confusion[c - 1].sum() + row["undefined"] == row["support"]


@pytest.mark.parametrize("k", [3, 9])
def test_matches_bruteforce_oracle(k):
    rng = np.random.default_rng(17)
    truth = rng.integers(1, k + 1, size=1000).tolist()
    preds = [
        None if rng.random() < 0.05 else int(rng.integers(1, k + 1))
        for _ in range(1000)
    ]
    report = compute_metrics(truth, preds, k)
    oracle = metrics_bruteforce(truth, preds, k)
    assert abs(report.acc_k - oracle["acc_k"]) <= 1e-12
    assert abs(report.acc_3 - oracle["acc_3"]) <= 1e-12
    assert abs(report.acc_pm1 - oracle["acc_pm1"]) <= 1e-12
    assert abs(report.mse - oracle["mse"]) <= 1e-12


def test_permutation_invariance():
    rng = np.random.default_rng(3)
    truth = rng.integers(1, 10, size=200).tolist()
    preds = rng.integers(1, 10, size=200).tolist()
    base = compute_metrics(truth, preds, 9)
    perm = rng.permutation(200)
    shuffled = compute_metrics(
        [truth[i] for i in perm], [preds[i] for i in perm], 9
    )
    assert base.acc_k == shuffled.acc_k
    assert base.mse == shuffled.mse
    assert base.confusion == shuffled.confusion


def test_bijection_of_labels_keeps_perfect_score():
    rng = np.random.default_rng(4)
    truth = rng.integers(1, 10, size=100).tolist()
    mapping = dict(zip(range(1, 10), rng.permutation(range(1, 10)).tolist()))
    mapped = [mapping[y] for y in truth]
    report = compute_metrics(mapped, mapped, 9)
    assert report.acc_k == 100.0


def test_acc3_equals_group_mapped_recall():
    rng = np.random.default_rng(5)
    truth = rng.integers(1, 10, size=400).tolist()
    preds = rng.integers(1, 10, size=400).tolist()
    nine = compute_metrics(truth, preds, 9)
    three = compute_metrics(
        [group3(y) for y in truth], [group3(p) for p in preds], 3
    )
    assert nine.acc_3 == pytest.approx(three.acc_k, abs=1e-12)


def test_metric_bounds_random():
    rng = np.random.default_rng(6)
    truth = rng.integers(1, 10, size=250).tolist()
    preds = [
        None if rng.random() < 0.2 else int(rng.integers(1, 10))
        for _ in range(250)
    ]
    report = compute_metrics(truth, preds, 9)
    for value in (report.acc_k, report.acc_3, report.acc_pm1):
        assert 0.0 <= value <= 100.0
    assert report.mse >= 0.0
    assert 0.0 <= report.acc_k_paper_formula <= 100.0


def test_tp_tn_formula_shows_tn_inflation():
    # one error among many classes: TN keeps the (TP+TN)/N form high while
    # macro recall drops by a full class share
    truth = [1, 2, 3, 4, 5, 6, 7, 8, 9]
    preds = [1, 2, 3, 4, 5, 6, 7, 8, 1]
    report = compute_metrics(truth, preds, 9)
    assert report.acc_k == pytest.approx(100.0 * 8 / 9)
    assert report.acc_k_paper_formula > report.acc_k


def test_label_out_of_range():
    with pytest.raises(LabelOutOfRange):
        compute_metrics([1, 10], [1, 1], 9)
    with pytest.raises(LabelOutOfRange):
        compute_metrics([1, 1], [0, 1], 9)
