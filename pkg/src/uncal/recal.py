"""Post-hoc recalibration: global and adaptive temperature scaling, P(True).

Confidences are clamped away from {0, 1} before the logit transform so that
grid-valued traces (0.05, 0.9, ...) and the occasional hard 0/1 survive the
mapping. Both fitters are deterministic: global scaling uses golden-section
search over log-temperature, adaptive scaling uses fixed-step full-batch
gradient descent from a fixed initialization.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import DegenerateFit
from .rewards import (
    DEFAULT_F1_THRESHOLD,
    PredictionRecord,
    extract_answer_line,
    reasoning_depth,
    record_confidence,
    record_correct,
)

CONF_CLAMP = 1e-4
LOG_T_RANGE = (-5.0, 5.0)
GOLDEN_TOL = 1e-6
ATS_TEMPERATURE_FLOOR = 0.05
ATS_STEP = 0.1
ATS_ITERS = 2000
ATS_FEATURE_NAMES = ("conf_logit", "response_length", "answer_length", "reasoning_depth")


def _clamp_conf(c: float) -> float:
    return min(max(c, CONF_CLAMP), 1.0 - CONF_CLAMP)


def _logit(c: float) -> float:
    c = _clamp_conf(c)
    return math.log(c / (1.0 - c))


def _sigmoid(x):
    # exp(-logaddexp(0, -x)): stable in both tails
    return np.exp(-np.logaddexp(0.0, -x))


def _softplus(x):
    return np.logaddexp(0.0, x)


def _softplus_inv(y: float) -> float:
    return math.log(math.expm1(y))


def _fit_rows(records, f1_threshold):
    """(logit, outcome) pairs for records usable in a temperature fit."""
    logits = []
    outcomes = []
    raw = []
    for r in records:
        conf = record_confidence(r)
        if conf is None:
            continue
        logits.append(_logit(conf))
        outcomes.append(1.0 if record_correct(r, f1_threshold) else 0.0)
        raw.append(conf)
    if len(logits) < 2:
        raise DegenerateFit("need at least two records with parseable confidence")
    if len(set(outcomes)) < 2:
        raise DegenerateFit("both outcome classes must be present")
    if all(c in (0.0, 1.0) for c in raw):
        raise DegenerateFit("all confidences sit at 0 or 1; no usable spread")
    return np.array(logits), np.array(outcomes)


def _bernoulli_nll(probs: np.ndarray, outcomes: np.ndarray) -> float:
    p = np.clip(probs, 1e-12, 1.0 - 1e-12)
    return float(-np.mean(outcomes * np.log(p) + (1.0 - outcomes) * np.log(1.0 - p)))


@dataclass(frozen=True)
class TsModel:
    """Single scalar temperature applied in logit space."""

    temperature: float
    fit_nll: float = float("nan")

    def __post_init__(self):
        if self.temperature <= 0.0:
            raise ValueError("temperature must be positive")


def fit_global_ts(
    records: Sequence[PredictionRecord], f1_threshold: float = DEFAULT_F1_THRESHOLD
) -> TsModel:
    """Fit the temperature minimizing Bernoulli NLL of sigmoid(logit(c)/T).

    Golden-section search over log T in [-5, 5] to 1e-6; the NLL is convex in
    1/T, so the search is over a unimodal function. If the numerical optimum
    is not at least as good as T = 1 (possible only by the search tolerance),
    T = 1 is returned.
    """
    logits, outcomes = _fit_rows(records, f1_threshold)

    def objective(log_t):
        return _bernoulli_nll(_sigmoid(logits / math.exp(log_t)), outcomes)

    lo, hi = LOG_T_RANGE
    inv_phi = (math.sqrt(5.0) - 1.0) / 2.0
    x1 = hi - inv_phi * (hi - lo)
    x2 = lo + inv_phi * (hi - lo)
    f1 = objective(x1)
    f2 = objective(x2)
    while hi - lo > GOLDEN_TOL:
        if f1 <= f2:
            hi, x2, f2 = x2, x1, f1
            x1 = hi - inv_phi * (hi - lo)
            f1 = objective(x1)
        else:
            lo, x1, f1 = x1, x2, f2
            x2 = lo + inv_phi * (hi - lo)
            f2 = objective(x2)
    log_t = (lo + hi) / 2.0
    best = objective(log_t)
    if objective(0.0) < best:
        log_t, best = 0.0, objective(0.0)
    return TsModel(temperature=math.exp(log_t), fit_nll=best)


def apply_ts(model: TsModel, confidence: float) -> float:
    """sigmoid(logit(c)/T); strictly monotone in c, so rank order survives."""
    return float(_sigmoid(np.array(_logit(confidence) / model.temperature)))


def ts_nll(
    model: TsModel,
    records: Sequence[PredictionRecord],
    f1_threshold: float = DEFAULT_F1_THRESHOLD,
) -> float:
    logits, outcomes = _fit_rows(records, f1_threshold)
    return _bernoulli_nll(_sigmoid(logits / model.temperature), outcomes)


# ---------------------------------------------------------------------------
# Adaptive temperature scaling
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AtsModel:
    """Per-example temperature softplus(w . f + b) + floor over standardized
    features (confidence logit, response length, answer length, reasoning
    depth)."""

    weights: tuple[float, float, float, float]
    bias: float
    l2: float
    feature_means: tuple[float, float, float, float]
    feature_stds: tuple[float, float, float, float]
    fit_nll: float = float("nan")


def ats_features(record: PredictionRecord) -> tuple[float, float, float, float]:
    """Raw (unstandardized) feature vector for one record.

    Response length counts tokens (the record's token count, or whitespace
    tokens when absent); answer length counts characters of the extracted
    answer; reasoning depth counts nonempty lines before the answer line.
    """
    conf = record_confidence(record)
    if conf is None:
        raise DegenerateFit(f"record {record.qid!r} has no parseable confidence")
    length = record.response_token_count
    if length <= 0:
        length = len(record.response_text.split())
    answer = record.extracted_answer
    if answer is None:
        answer = extract_answer_line(record.response_text) or ""
    return (
        _logit(conf),
        float(length),
        float(len(answer)),
        float(reasoning_depth(record.response_text)),
    )


def _ats_design(records, f1_threshold):
    rows = []
    outcomes = []
    logits = []
    raw_confs = []
    for r in records:
        conf = record_confidence(r)
        if conf is None:
            continue
        rows.append(ats_features(r))
        logits.append(_logit(conf))
        outcomes.append(1.0 if record_correct(r, f1_threshold) else 0.0)
        raw_confs.append(conf)
    if len(rows) < 2:
        raise DegenerateFit("need at least two records with parseable confidence")
    if len(set(outcomes)) < 2:
        raise DegenerateFit("both outcome classes must be present")
    if all(c in (0.0, 1.0) for c in raw_confs):
        raise DegenerateFit("all confidences sit at 0 or 1; no usable spread")
    return np.array(rows), np.array(logits), np.array(outcomes)


def _standardize(features):
    means = features.mean(axis=0)
    stds = features.std(axis=0)
    stds = np.where(stds == 0.0, 1.0, stds)
    return (features - means) / stds, means, stds


def fit_ats(
    records: Sequence[PredictionRecord],
    l2: float = 0.0,
    f1_threshold: float = DEFAULT_F1_THRESHOLD,
) -> AtsModel:
    """Fit adaptive temperature scaling by full-batch gradient descent.

    Fixed step 0.1 for 2000 iterations from w = 0 and a bias chosen so the
    initial temperature is exactly 1 (i.e. the identity mapping). The best
    parameters seen along the trajectory are returned, so the fit never ends
    worse than an iterate it already visited.
    """
    features, logits, outcomes = _ats_design(records, f1_threshold)
    phi, means, stds = _standardize(features)
    n, d = phi.shape

    w = np.zeros(d)
    b = _softplus_inv(1.0 - ATS_TEMPERATURE_FLOOR)

    def objective(w_, b_):
        t = _softplus(phi @ w_ + b_) + ATS_TEMPERATURE_FLOOR
        return _bernoulli_nll(_sigmoid(logits / t), outcomes) + l2 * float(w_ @ w_)

    best_w, best_b = w.copy(), b
    best_obj = objective(w, b)
    # a fixed step can diverge when l2 is extreme; divergent iterates simply
    # never become the best-seen parameters, so overflow there is harmless
    with np.errstate(over="ignore", invalid="ignore"):
        for _ in range(ATS_ITERS):
            u = phi @ w + b
            t = _softplus(u) + ATS_TEMPERATURE_FLOOR
            p = _sigmoid(logits / t)
            # d(nll)/dT_i = (p_i - y_i) * (-logit_i / T_i^2); dT/du = sigmoid(u)
            du = (p - outcomes) * (-logits / t**2) * _sigmoid(u)
            grad_w = phi.T @ du / n + 2.0 * l2 * w
            grad_b = float(np.mean(du))
            w = w - ATS_STEP * grad_w
            b = b - ATS_STEP * grad_b
            obj = objective(w, b)
            if obj < best_obj:
                best_obj = obj
                best_w, best_b = w.copy(), b
    return AtsModel(
        weights=tuple(float(v) for v in best_w),
        bias=float(best_b),
        l2=l2,
        feature_means=tuple(float(v) for v in means),
        feature_stds=tuple(float(v) for v in stds),
        fit_nll=best_obj - l2 * float(best_w @ best_w),
    )


def ats_temperature(model: AtsModel, record: PredictionRecord) -> float:
    raw = np.array(ats_features(record))
    phi = (raw - np.array(model.feature_means)) / np.array(model.feature_stds)
    u = float(phi @ np.array(model.weights)) + model.bias
    return float(_softplus(np.array(u))) + ATS_TEMPERATURE_FLOOR


def apply_ats(model: AtsModel, record: PredictionRecord) -> float:
    """Recalibrated confidence sigmoid(logit(c)/T_record)."""
    conf = record_confidence(record)
    if conf is None:
        raise DegenerateFit(f"record {record.qid!r} has no parseable confidence")
    return float(_sigmoid(np.array(_logit(conf) / ats_temperature(model, record))))


def ats_nll(
    model: AtsModel,
    records: Sequence[PredictionRecord],
    f1_threshold: float = DEFAULT_F1_THRESHOLD,
) -> float:
    probs = []
    outcomes = []
    for r in records:
        conf = record_confidence(r)
        if conf is None:
            continue
        probs.append(apply_ats(model, r))
        outcomes.append(1.0 if record_correct(r, f1_threshold) else 0.0)
    return _bernoulli_nll(np.array(probs), np.array(outcomes))


def ptrue_combine(record: PredictionRecord, p_affirmative: float) -> float:
    """Replace the verbalized confidence with the affirmative-token
    probability supplied in the trace."""
    if not 0.0 <= p_affirmative <= 1.0:
        raise ValueError("p_affirmative must lie in [0,1]")
    return p_affirmative
