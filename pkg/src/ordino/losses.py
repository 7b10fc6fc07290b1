"""Training criteria, label encodings and decoding rules.

Five heads are supported, selected by config string:

* ``nll``      log-softmax over K classes, weighted negative log-likelihood
* ``regclass`` nll plus an auxiliary scalar regression to the raw level
* ``msmooth``  per-class sigmoids against a Gaussian-smoothed target
* ``ordinal``  per-class sigmoids against a cumulative 0/1 prefix encoding
* ``coral``    one shared score plus K-1 bias units, one binary task each

Labels are integers in 1..K throughout. Each loss has a public mean-value
form and an internal sum-reduction form returning gradients with respect
to the raw head outputs, used by the trainer.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .errors import LabelOutOfRange, ShapeMismatch
from .nn.layers import sigmoid

log = logging.getLogger(__name__)

HEAD_KINDS = ("nll", "regclass", "msmooth", "ordinal", "coral")

UNDEFINED = None  # decoded value when an ordinal prediction is inconsistent

_EPS = 1e-7  # probability clamp for logs


def _check_labels(labels: np.ndarray, k: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size and (labels.min() < 1 or labels.max() > k):
        raise LabelOutOfRange(f"labels must lie in 1..{k}")
    return labels


# ---------------------------------------------------------------------------
# encodings


def ordinal_encode(label: int, k: int) -> np.ndarray:
    """Prefix-of-ones target: predicting level y implies levels 1..y."""
    if not 1 <= label <= k:
        raise LabelOutOfRange(f"label {label} outside 1..{k}")
    out = np.zeros(k)
    out[:label] = 1.0
    return out


def ordinal_encode_batch(labels: np.ndarray, k: int) -> np.ndarray:
    labels = _check_labels(labels, k)
    return (np.arange(1, k + 1)[None, :] <= labels[:, None]).astype(np.float64)


def ordinal_decode(pred: np.ndarray, threshold: float = 0.5) -> int | None:
    """Length of the contiguous prefix of above-threshold entries.

    Returns None (undefined) when nothing clears the threshold or the
    above-threshold entries are not a contiguous prefix; the metrics treat
    that as an error.
    """
    pred = np.asarray(pred, dtype=np.float64)
    if not np.all(np.isfinite(pred)):
        raise ShapeMismatch("ordinal prediction contains non-finite entries")
    on = pred > threshold
    count = int(on.sum())
    if count == 0 or not on[:count].all():
        return UNDEFINED
    return count


def coral_binary(label: int, k: int) -> np.ndarray:
    """K-1 binary targets, entry j = 1 when label > j (1-based j)."""
    if not 1 <= label <= k:
        raise LabelOutOfRange(f"label {label} outside 1..{k}")
    return (np.arange(1, k) < label).astype(np.float64)


def coral_binary_batch(labels: np.ndarray, k: int) -> np.ndarray:
    labels = _check_labels(labels, k)
    return (np.arange(1, k)[None, :] < labels[:, None]).astype(np.float64)


def coral_decode(
    logit_g: float, biases: np.ndarray, threshold: float = 0.5
) -> int:
    """1 + number of binary tasks predicting 'above'; always defined."""
    probs = sigmoid(np.asarray(logit_g, dtype=np.float64) + np.asarray(biases))
    return 1 + int(np.sum(probs > threshold))


# ---------------------------------------------------------------------------
# class weights


@dataclass
class ClassWeights:
    """Inverse-frequency class weights w_c = N / (K * N_c).

    Classes absent from the training split get weight zero; the metrics
    also exclude them from macro averages.
    """

    w: np.ndarray

    @classmethod
    def uniform(cls, k: int) -> "ClassWeights":
        return cls(w=np.ones(k))

    @classmethod
    def from_labels(cls, labels: np.ndarray, k: int) -> "ClassWeights":
        labels = _check_labels(labels, k)
        counts = np.bincount(labels, minlength=k + 1)[1:].astype(np.float64)
        w = np.zeros(k)
        present = counts > 0
        w[present] = labels.size / (k * counts[present])
        return cls(w=w)

    def per_sample(self, labels: np.ndarray) -> np.ndarray:
        return self.w[np.asarray(labels, dtype=np.int64) - 1]


def _sample_weights(
    labels: np.ndarray, k: int, weights: ClassWeights | None
) -> np.ndarray:
    if weights is None:
        return np.ones(len(labels))
    return weights.per_sample(labels)


# ---------------------------------------------------------------------------
# nll


def nll_sum_grad(log_probs, labels, k, weights=None):
    log_probs = np.asarray(log_probs, dtype=np.float64)
    labels = _check_labels(labels, k)
    w = _sample_weights(labels, k, weights)
    rows = np.arange(len(labels))
    cols = labels - 1
    per_sample = -w * log_probs[rows, cols]
    dlogp = np.zeros_like(log_probs)
    dlogp[rows, cols] = -w
    return per_sample, dlogp


def nll_loss(log_probs, labels, weights: ClassWeights | None = None) -> float:
    """Weighted negative log-likelihood; rows must be log-softmax outputs."""
    k = np.asarray(log_probs).shape[1]
    per_sample, _ = nll_sum_grad(log_probs, labels, k, weights)
    return float(per_sample.mean())


# ---------------------------------------------------------------------------
# regclass: nll plus scalar regression


def regclass_sum_grad(log_probs, scalar_pred, labels, k, alpha=1.0, weights=None):
    labels = _check_labels(labels, k)
    per_nll, dlogp = nll_sum_grad(log_probs, labels, k, weights)
    scalar_pred = np.asarray(scalar_pred, dtype=np.float64)
    w = _sample_weights(labels, k, weights)
    diff = scalar_pred - labels.astype(np.float64)
    per_mse = w * diff * diff
    dscalar = alpha * 2.0 * w * diff
    return per_nll + alpha * per_mse, dlogp, dscalar


def regclass_loss(
    log_probs,
    scalar_pred,
    labels,
    alpha: float = 1.0,
    weights: ClassWeights | None = None,
) -> float:
    """NLL plus alpha-weighted mean squared error of a scalar level estimate."""
    k = np.asarray(log_probs).shape[1]
    per_sample, _, _ = regclass_sum_grad(
        log_probs, scalar_pred, labels, k, alpha, weights
    )
    return float(per_sample.mean())


# ---------------------------------------------------------------------------
# multilabel smoothed bce


def msmooth_target(label: int, k: int, sigma: float = 0.5) -> np.ndarray:
    """Gaussian bump around the label, peak 1, truncated past +/-1 level."""
    if not 1 <= label <= k:
        raise LabelOutOfRange(f"label {label} outside 1..{k}")
    idx = np.arange(1, k + 1, dtype=np.float64)
    target = np.exp(-((idx - label) ** 2) / (2.0 * sigma * sigma))
    target[np.abs(idx - label) > 1] = 0.0
    return target


def msmooth_target_batch(labels, k, sigma=0.5):
    return np.stack([msmooth_target(int(y), k, sigma) for y in labels])


def msmooth_sum_grad(probs, labels, k, sigma=0.5, weights=None):
    probs = np.asarray(probs, dtype=np.float64)
    labels = _check_labels(labels, k)
    w = _sample_weights(labels, k, weights)
    target = msmooth_target_batch(labels, k, sigma)
    clamped = np.clip(probs, _EPS, 1.0 - _EPS)
    bce = -(target * np.log(clamped) + (1.0 - target) * np.log(1.0 - clamped))
    per_sample = w * bce.sum(axis=1)
    inside = (probs > _EPS) & (probs < 1.0 - _EPS)
    dprobs = np.where(
        inside,
        w[:, None] * (-(target / clamped) + (1.0 - target) / (1.0 - clamped)),
        0.0,
    )
    return per_sample, dprobs


def msmooth_loss(
    probs, labels, sigma: float = 0.5, weights: ClassWeights | None = None
) -> float:
    """Binary cross-entropy against the smoothed multilabel target."""
    k = np.asarray(probs).shape[1]
    per_sample, _ = msmooth_sum_grad(probs, labels, k, sigma, weights)
    return float(per_sample.mean())


# ---------------------------------------------------------------------------
# ordinal mse


def ordinal_sum_grad(pred, labels, k):
    pred = np.asarray(pred, dtype=np.float64)
    target = ordinal_encode_batch(labels, k)
    diff = pred - target
    per_sample = np.mean(diff * diff, axis=1)
    dpred = 2.0 * diff / k
    return per_sample, dpred


def ordinal_loss(pred, labels) -> float:
    """MSE against the cumulative encoding, averaged over classes and batch."""
    k = np.asarray(pred).shape[1]
    per_sample, _ = ordinal_sum_grad(pred, labels, k)
    return float(per_sample.mean())


# ---------------------------------------------------------------------------
# coral


def coral_sum_grad(logit_g, biases, labels, k, lam=None):
    logit_g = np.asarray(logit_g, dtype=np.float64)
    biases = np.asarray(biases, dtype=np.float64)
    if biases.shape != (k - 1,):
        raise ShapeMismatch(f"coral needs {k - 1} bias units, got {biases.shape}")
    labels = _check_labels(labels, k)
    lam = np.ones(k - 1) if lam is None else np.asarray(lam, dtype=np.float64)
    target = coral_binary_batch(labels, k)
    z = logit_g[:, None] + biases[None, :]
    # bce with logits: t*softplus(-z) + (1-t)*softplus(z)
    per_task = target * np.logaddexp(0.0, -z) + (1.0 - target) * np.logaddexp(0.0, z)
    per_sample = (lam[None, :] * per_task).sum(axis=1)
    dz = lam[None, :] * (sigmoid(z) - target)
    dg = dz.sum(axis=1)
    dbias = dz.sum(axis=0)
    return per_sample, dg, dbias


def coral_loss(logit_g, biases, labels, lam=None) -> float:
    """Weighted binary cross-entropy over the K-1 'label > j' tasks."""
    biases = np.asarray(biases)
    k = biases.shape[0] + 1
    per_sample, _, _ = coral_sum_grad(logit_g, biases, labels, k, lam)
    return float(per_sample.mean())


# ---------------------------------------------------------------------------
# distributions and decoding


def _telescope(exceed: np.ndarray, k: int) -> np.ndarray:
    bounds = np.concatenate([[1.0], np.asarray(exceed, dtype=np.float64), [0.0]])
    diffs = bounds[:-1] - bounds[1:]
    clipped = np.clip(diffs, 0.0, None)
    total = clipped.sum()
    if total <= 0.0:
        log.warning("degenerate distribution after clamping; using uniform")
        return np.full(k, 1.0 / k)
    return clipped / total


def probs_from_head(head: str, raw, k: int) -> np.ndarray:
    """Single-sample class distribution for ensemble averaging.

    Softmax heads pass through; the sigmoid multilabel head renormalizes;
    cumulative heads telescope P(y=j) = P(y>j-1) - P(y>j) with the implicit
    bounds P(y>0)=1 and P(y>K)=0, clamping negatives then renormalizing.
    """
    if head in ("nll", "regclass"):
        log_probs = raw[0] if head == "regclass" else raw
        p = np.exp(np.asarray(log_probs, dtype=np.float64))
        total = p.sum()
        if total <= 0.0:
            log.warning("degenerate distribution from %s head; using uniform", head)
            return np.full(k, 1.0 / k)
        return p / total
    if head == "msmooth":
        p = np.asarray(raw, dtype=np.float64)
        total = p.sum()
        if total <= 0.0:
            log.warning("degenerate distribution from msmooth head; using uniform")
            return np.full(k, 1.0 / k)
        return p / total
    if head == "ordinal":
        pred = np.asarray(raw, dtype=np.float64)
        if pred.shape != (k,):
            raise ShapeMismatch(f"ordinal head expects {k} outputs, got {pred.shape}")
        return _telescope(pred[1:], k)
    if head == "coral":
        logit_g, biases = raw
        exceed = sigmoid(float(logit_g) + np.asarray(biases, dtype=np.float64))
        return _telescope(exceed, k)
    raise ShapeMismatch(f"unknown head kind {head!r}")


def decode_head(head: str, raw, k: int, threshold: float = 0.5) -> int | None:
    """Head-specific label decode; only ordinal decodes can be undefined."""
    if head == "nll":
        return int(np.argmax(raw)) + 1
    if head == "regclass":
        return int(np.argmax(raw[0])) + 1
    if head == "msmooth":
        return int(np.argmax(raw)) + 1
    if head == "ordinal":
        return ordinal_decode(np.asarray(raw), threshold)
    if head == "coral":
        logit_g, biases = raw
        return coral_decode(float(logit_g), np.asarray(biases), threshold)
    raise ShapeMismatch(f"unknown head kind {head!r}")
