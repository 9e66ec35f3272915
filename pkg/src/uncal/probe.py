"""Span-aware linear wrongness probe over hidden states at emission points.

Features pool the hidden vectors around the first emitted uncertainty span
and append three scalar response features. The probe itself is L2-regularized
logistic regression fit by fixed-step full-batch gradient descent, with the
decision threshold tuned for trigger F1 on held-out data. The positive class
is "final answer is wrong", i.e. "trigger retrieval".
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, replace
from typing import Mapping, Sequence

import numpy as np

from .errors import AlignmentError, DegenerateFit, NotEmitted, UndefinedMetric
from .rewards import (
    DEFAULT_F1_THRESHOLD,
    PredictionRecord,
    first_emit_fraction,
    record_correct,
)

DEFAULT_WINDOW = 4
DEFAULT_SPAN_TOKENS = 1
DEFAULT_L2 = 1e-2
PROBE_STEP = 0.1
PROBE_ITERS = 2000
LOSS_TRACE_EVERY = 100
TRAIN_FRACTION = 0.8
MIN_FIT_EXAMPLES = 10


def _sigmoid(x):
    return np.exp(-np.logaddexp(0.0, -x))


@dataclass(frozen=True)
class HiddenMatrix:
    """Rows of hidden-state vectors with one id per row."""

    layer: int
    values: np.ndarray
    row_ids: tuple[str, ...]

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 2:
            raise ValueError("hidden matrix must be 2-dimensional")
        if not np.all(np.isfinite(values)):
            raise ValueError("hidden matrix must be finite")
        if len(self.row_ids) != values.shape[0]:
            raise ValueError("row_ids length must equal the number of rows")
        if len(set(self.row_ids)) != len(self.row_ids):
            raise ValueError("row_ids must be unique")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "row_ids", tuple(self.row_ids))

    @property
    def rows(self) -> int:
        return self.values.shape[0]

    @property
    def dims(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class ProbeFeatures:
    """Mean-pooled span vector plus (token count, emission count, first-emit
    fraction)."""

    span_mean: np.ndarray
    scalars: tuple[float, float, float]

    def vector(self) -> np.ndarray:
        return np.concatenate([np.asarray(self.span_mean, dtype=float), self.scalars])


def build_features(
    token_hidden: np.ndarray,
    record: PredictionRecord,
    window: int = DEFAULT_WINDOW,
    span_token_count: int = DEFAULT_SPAN_TOKENS,
) -> ProbeFeatures:
    """Pool hidden vectors over [first_emit - window, first_emit + span + window).

    `token_hidden` is the (tokens x dims) matrix for this record's response;
    the range is clipped to the sequence bounds.
    """
    if not record.emissions:
        raise NotEmitted(f"record {record.qid!r} has no emission")
    hidden = np.asarray(token_hidden, dtype=float)
    if hidden.ndim != 2 or hidden.shape[0] == 0:
        raise AlignmentError(f"record {record.qid!r}: empty or malformed hidden states")
    first = record.emissions[0].token_index
    if first is None:
        raise AlignmentError(f"record {record.qid!r}: first emission has no token index")
    n_tokens = hidden.shape[0]
    if not 0 <= first < n_tokens:
        raise AlignmentError(
            f"record {record.qid!r}: emission token {first} outside 0..{n_tokens - 1}"
        )
    lo = max(0, first - window)
    hi = min(n_tokens, first + span_token_count + window)
    span_mean = hidden[lo:hi].mean(axis=0)
    fraction = first_emit_fraction(record)
    return ProbeFeatures(
        span_mean=span_mean,
        scalars=(
            float(record.response_token_count),
            float(len(record.emissions)),
            float(fraction if fraction is not None else 0.0),
        ),
    )


@dataclass(frozen=True)
class ProbeModel:
    layer: int
    weights: np.ndarray
    bias: float
    threshold: float
    feature_means: np.ndarray
    feature_stds: np.ndarray
    loss_trace: tuple[float, ...]

    def scores(self, features: Sequence[ProbeFeatures] | np.ndarray) -> np.ndarray:
        """Predicted probability that each example is wrong."""
        x = _as_matrix(features)
        phi = (x - self.feature_means) / self.feature_stds
        return _sigmoid(phi @ self.weights + self.bias)

    def decide(self, features) -> np.ndarray:
        return self.scores(features) >= self.threshold


def _as_matrix(features) -> np.ndarray:
    if isinstance(features, np.ndarray):
        return features if features.ndim == 2 else features.reshape(1, -1)
    return np.stack([f.vector() for f in features])


def fit_probe(
    features: Sequence[ProbeFeatures] | np.ndarray,
    labels: Sequence[int],
    l2: float = DEFAULT_L2,
    layer: int = -1,
) -> ProbeModel:
    """L2-regularized logistic regression, fixed step 0.1, 2000 iterations,
    zero init, features standardized on the fit set.

    The threshold is left at 0.5 until tuned. The loss is recorded every 100
    iterations; with this step size it decreases monotonically on reasonably
    conditioned inputs, which the tests assert.
    """
    x = _as_matrix(features)
    y = np.asarray(labels, dtype=float)
    if x.shape[0] != y.shape[0]:
        raise ValueError("features and labels must align")
    if x.shape[0] < MIN_FIT_EXAMPLES:
        raise DegenerateFit(f"need at least {MIN_FIT_EXAMPLES} examples")
    if len(set(y.tolist())) < 2:
        raise DegenerateFit("both classes must be present")
    means = x.mean(axis=0)
    stds = x.std(axis=0)
    if np.all(stds == 0.0):
        raise DegenerateFit("every feature is constant; nothing to fit")
    stds = np.where(stds == 0.0, 1.0, stds)
    phi = (x - means) / stds
    n, d = phi.shape

    w = np.zeros(d)
    b = 0.0
    trace = []

    def loss(w_, b_):
        z = phi @ w_ + b_
        # mean logistic loss, computed stably via logaddexp
        ce = np.logaddexp(0.0, z) - y * z
        return float(np.mean(ce)) + l2 * float(w_ @ w_)

    for it in range(PROBE_ITERS):
        if it % LOSS_TRACE_EVERY == 0:
            trace.append(loss(w, b))
        p = _sigmoid(phi @ w + b)
        grad_w = phi.T @ (p - y) / n + 2.0 * l2 * w
        grad_b = float(np.mean(p - y))
        w = w - PROBE_STEP * grad_w
        b = b - PROBE_STEP * grad_b
    trace.append(loss(w, b))
    return ProbeModel(
        layer=layer,
        weights=w,
        bias=b,
        threshold=0.5,
        feature_means=means,
        feature_stds=stds,
        loss_trace=tuple(trace),
    )


def auroc(scores: Sequence[float], labels: Sequence[int]) -> float:
    """Area under the ROC curve via the rank-sum statistic with midranks for
    ties."""
    s = np.asarray(scores, dtype=float)
    y = np.asarray(labels, dtype=int)
    n_pos = int(np.sum(y == 1))
    n_neg = int(np.sum(y == 0))
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetric("AUROC needs both classes")
    order = np.argsort(s, kind="mergesort")
    ranks = np.empty(len(s), dtype=float)
    sorted_scores = s[order]
    i = 0
    while i < len(s):
        j = i
        while j < len(s) and sorted_scores[j] == sorted_scores[i]:
            j += 1
        # midrank for the tie block [i, j)
        ranks[order[i:j]] = (i + j + 1) / 2.0
        i = j
    rank_sum = float(np.sum(ranks[y == 1]))
    u = rank_sum - n_pos * (n_pos + 1) / 2.0
    return u / (n_pos * n_neg)


def auprc(scores: Sequence[float], labels: Sequence[int]) -> float:
    """Area under the precision-recall curve by step integration over
    distinct score thresholds (descending)."""
    s = np.asarray(scores, dtype=float)
    y = np.asarray(labels, dtype=int)
    n_pos = int(np.sum(y == 1))
    if n_pos == 0 or int(np.sum(y == 0)) == 0:
        raise UndefinedMetric("AUPRC needs both classes")
    order = np.argsort(-s, kind="mergesort")
    s_sorted = s[order]
    y_sorted = y[order]
    area = 0.0
    prev_recall = 0.0
    tp = 0
    seen = 0
    i = 0
    n = len(s)
    while i < n:
        j = i
        while j < n and s_sorted[j] == s_sorted[i]:
            tp += int(y_sorted[j])
            seen += 1
            j += 1
        recall = tp / n_pos
        precision = tp / seen
        area += (recall - prev_recall) * precision
        prev_recall = recall
        i = j
    return area


def trigger_prf(
    scores: Sequence[float], labels: Sequence[int], threshold: float
) -> tuple[float, float, float]:
    """Precision, recall, F1 of `score >= threshold` against wrong labels."""
    s = np.asarray(scores, dtype=float)
    y = np.asarray(labels, dtype=int)
    predicted = s >= threshold
    tp = int(np.sum(predicted & (y == 1)))
    fp = int(np.sum(predicted & (y == 0)))
    fn = int(np.sum(~predicted & (y == 1)))
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return precision, recall, f1


def tune_threshold(
    model: ProbeModel,
    dev_features: Sequence[ProbeFeatures] | np.ndarray,
    dev_labels: Sequence[int],
) -> ProbeModel:
    """Pick the threshold maximizing trigger F1 on the dev set.

    Candidates are the midpoints between consecutive distinct dev scores plus
    the all-trigger boundary at 0. Ties break toward the lower threshold
    (higher recall).
    """
    y = np.asarray(dev_labels, dtype=int)
    if len(set(y.tolist())) < 2:
        raise UndefinedMetric("threshold tuning needs both classes on dev")
    scores = model.scores(dev_features)
    distinct = np.unique(scores)
    candidates = [0.0] + [
        float((a + b) / 2.0) for a, b in zip(distinct, distinct[1:])
    ]
    best_threshold = 0.0
    best_f1 = -1.0
    for theta in candidates:
        _, _, f1 = trigger_prf(scores, y, theta)
        if f1 > best_f1 or (f1 == best_f1 and theta < best_threshold):
            best_f1 = f1
            best_threshold = theta
    return replace(model, threshold=best_threshold)


def split_by_qid(qids: Sequence[str], seed: int = 0, train_fraction: float = TRAIN_FRACTION):
    """Deterministic train/dev split by hashing qids (stable across runs)."""
    cut = int(round(train_fraction * 100))
    train_idx = []
    dev_idx = []
    for i, qid in enumerate(qids):
        digest = hashlib.md5(f"{seed}:{qid}".encode("utf-8")).hexdigest()
        if int(digest, 16) % 100 < cut:
            train_idx.append(i)
        else:
            dev_idx.append(i)
    return train_idx, dev_idx


@dataclass(frozen=True)
class LayerSweepRow:
    layer: int
    auroc: float
    auprc: float
    precision: float
    recall: float
    f1: float
    n_train: int
    n_dev: int


def layer_sweep(
    stacks: Mapping[int, Mapping[str, np.ndarray]],
    records: Sequence[PredictionRecord],
    layers: Sequence[int],
    window: int = DEFAULT_WINDOW,
    span_token_count: int = DEFAULT_SPAN_TOKENS,
    l2: float = DEFAULT_L2,
    seed: int = 0,
    f1_threshold: float = DEFAULT_F1_THRESHOLD,
) -> list[LayerSweepRow]:
    """Full fit + threshold tuning per layer on a fixed qid-hash split.

    `stacks` maps layer -> qid -> (tokens x dims) hidden matrix. Only emitted
    records with hidden states for the layer participate. Rows come back
    sorted by layer index.
    """
    rows = []
    for layer in sorted(layers):
        per_qid = stacks[layer]
        feats = []
        labels = []
        qids = []
        for record in records:
            if not record.emissions or record.qid not in per_qid:
                continue
            feats.append(
                build_features(per_qid[record.qid], record, window, span_token_count)
            )
            labels.append(0 if record_correct(record, f1_threshold) else 1)
            qids.append(record.qid)
        train_idx, dev_idx = split_by_qid(qids, seed)
        x = _as_matrix(feats)
        y = np.asarray(labels, dtype=int)
        model = fit_probe(x[train_idx], y[train_idx], l2=l2, layer=layer)
        model = tune_threshold(model, x[dev_idx], y[dev_idx])
        dev_scores = model.scores(x[dev_idx])
        precision, recall, f1 = trigger_prf(dev_scores, y[dev_idx], model.threshold)
        rows.append(
            LayerSweepRow(
                layer=layer,
                auroc=auroc(dev_scores, y[dev_idx]),
                auprc=auprc(dev_scores, y[dev_idx]),
                precision=precision,
                recall=recall,
                f1=f1,
                n_train=len(train_idx),
                n_dev=len(dev_idx),
            )
        )
    return rows
