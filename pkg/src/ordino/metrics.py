"""Macro-averaged ordinal classification metrics.

All accuracies are percentages in [0, 100]; MSE is on the raw level scale.
Macro values average per-class values over classes that actually occur in
the ground truth. Undefined predictions (inconsistent ordinal decodes)
count as wrong for every accuracy and contribute a worst-case K^2 term to
the squared error so that refusing to decode is never advantageous.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import LabelOutOfRange


def length_bucket(n_notes: int) -> int:
    """Discretize piece length into 1000-note intervals."""
    if n_notes < 1:
        raise LabelOutOfRange(f"n_notes must be >= 1, got {n_notes}")
    return n_notes // 1000


def group3(label: int) -> int:
    """Map nine levels onto three groups: {1,2,3} {4,5,6} {7,8,9}."""
    if label < 1:
        raise LabelOutOfRange(f"label must be >= 1, got {label}")
    return (label + 2) // 3


@dataclass
class MetricsReport:
    k: int
    n: int
    acc_k: float
    acc_3: float
    acc_pm1: float
    mse: float
    acc_k_paper_formula: float
    undefined_count: int
    per_class: dict[int, dict] = field(default_factory=dict)
    confusion: list[list[int]] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "k": self.k,
            "n": self.n,
            "acc_k": self.acc_k,
            "acc_3": self.acc_3,
            "acc_pm1": self.acc_pm1,
            "mse": self.mse,
            "acc_k_paper_formula": self.acc_k_paper_formula,
            "undefined_count": self.undefined_count,
            "per_class": {str(c): v for c, v in sorted(self.per_class.items())},
            "confusion": self.confusion,
        }


def _macro_recall(truth: list[int], preds: list[int | None], k: int) -> float:
    recalls = []
    for c in range(1, k + 1):
        idx = [i for i, y in enumerate(truth) if y == c]
        if not idx:
            continue
        correct = sum(1 for i in idx if preds[i] == c)
        recalls.append(correct / len(idx))
    return 100.0 * float(np.mean(recalls)) if recalls else 0.0


def compute_metrics(
    truth, preds, k: int
) -> MetricsReport:
    """Score decoded predictions against ground truth labels.

    ``preds`` entries are labels in 1..K or None for an undefined decode.
    """
    truth = list(truth)
    preds = list(preds)
    if len(truth) != len(preds) or not truth:
        raise LabelOutOfRange("truth and preds must be equal-length and non-empty")
    for y in truth:
        if not (1 <= y <= k):
            raise LabelOutOfRange(f"truth label {y} outside 1..{k}")
    for p in preds:
        if p is not None and not (1 <= p <= k):
            raise LabelOutOfRange(f"prediction {p} outside 1..{k}")

    n = len(truth)
    confusion = np.zeros((k, k), dtype=np.int64)
    per_class: dict[int, dict] = {}
    recalls, uaccs, umses = [], [], []
    undefined_total = 0

    for c in range(1, k + 1):
        idx = [i for i, y in enumerate(truth) if y == c]
        support = len(idx)
        if support == 0:
            continue
        correct = within1 = undef = 0
        sse = 0.0
        for i in idx:
            p = preds[i]
            if p is None:
                undef += 1
                sse += float(k * k)
                continue
            confusion[c - 1, p - 1] += 1
            if p == c:
                correct += 1
            if abs(p - c) <= 1:
                within1 += 1
            sse += float((p - c) ** 2)
        undefined_total += undef
        recall = correct / support
        uacc = within1 / support
        umse = sse / support
        recalls.append(recall)
        uaccs.append(uacc)
        umses.append(umse)
        per_class[c] = {
            "support": support,
            "recall": recall,
            "uacc_pm1": uacc,
            "umse": umse,
            "undefined": undef,
        }

    acc_k = 100.0 * float(np.mean(recalls))
    acc_pm1 = 100.0 * float(np.mean(uaccs))
    mse = float(np.mean(umses))

    if k <= 3:
        acc_3 = acc_k
    else:
        k3 = math.ceil(k / 3)
        truth3 = [group3(y) for y in truth]
        preds3 = [None if p is None else group3(p) for p in preds]
        acc_3 = _macro_recall(truth3, preds3, k3)

    # the (TP+TN)/(TP+TN+FP+FN) form, kept for comparison; its TN term
    # inflates it far above macro recall once K grows
    tp_tn_terms = []
    for c in range(1, k + 1):
        tp = int(confusion[c - 1, c - 1])
        support = sum(1 for y in truth if y == c)
        fn = support - tp
        fp = int(confusion[:, c - 1].sum()) - tp
        tn = n - tp - fn - fp
        tp_tn_terms.append((tp + tn) / n)
    acc_k_tp_tn = 100.0 * float(np.mean(tp_tn_terms))

    return MetricsReport(
        k=k,
        n=n,
        acc_k=acc_k,
        acc_3=acc_3,
        acc_pm1=acc_pm1,
        mse=mse,
        acc_k_paper_formula=acc_k_tp_tn,
        undefined_count=undefined_total,
        per_class=per_class,
        confusion=confusion.tolist(),
    )
