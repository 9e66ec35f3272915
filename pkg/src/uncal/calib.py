"""Calibration and behavioral metrics over batches of prediction records.

Records without a parseable confidence are excluded from confidence metrics
but still count toward accuracy and the parse rate. All aggregations are pure
and deterministic; per-dataset partitions can be computed independently and
merged.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .errors import EmptyBatch, UndefinedCorrelation
from .rewards import (
    DEFAULT_F1_THRESHOLD,
    PredictionRecord,
    extract_answer_line,
    match_record,
    record_confidence,
    record_correct,
    scan_emissions,
)

DEFAULT_ECE_BINS = 10
DEFAULT_NLL_EPSILON = 1e-6

# fixed confidence bands for wrong answers, highest first: (lo, hi] except
# the last band which includes 0
ERROR_BANDS = (
    ("c>0.7", 0.7, 1.0),
    ("0.5<c<=0.7", 0.5, 0.7),
    ("0.3<c<=0.5", 0.3, 0.5),
    ("0.1<c<=0.3", 0.1, 0.3),
    ("c<=0.1", 0.0, 0.1),
)


@dataclass(frozen=True)
class CalibBin:
    lo: float
    hi: float
    count: int
    mean_conf: float
    accuracy: float


@dataclass(frozen=True)
class CalibrationReport:
    n: int
    accuracy: float
    mean_confidence: float
    overconfidence_gap: float
    ece: float
    brier: float
    nll: float
    parse_rate: float
    ausc: float
    bins: tuple[CalibBin, ...]


def _usable(records, f1_threshold):
    """(confidence, correct, qid) triples for records with parsed confidence."""
    out = []
    for r in records:
        conf = record_confidence(r)
        if conf is None:
            continue
        out.append((conf, record_correct(r, f1_threshold), r.qid))
    return out


def ece(
    records: Sequence[PredictionRecord],
    num_bins: int = DEFAULT_ECE_BINS,
    f1_threshold: float = DEFAULT_F1_THRESHOLD,
) -> float:
    """Expected calibration error over equal-width confidence bins."""
    if num_bins < 1:
        raise ValueError("num_bins must be >= 1")
    rows = _usable(records, f1_threshold)
    if not rows:
        raise EmptyBatch("no records with parseable confidence")
    return _ece_from_bins(_fill_bins(rows, num_bins), len(rows))


def _fill_bins(rows, num_bins):
    bins = [[] for _ in range(num_bins)]
    for conf, correct, _ in rows:
        idx = min(int(conf * num_bins), num_bins - 1)
        bins[idx].append((conf, correct))
    return bins


def _ece_from_bins(bins, n):
    total = 0.0
    for members in bins:
        if not members:
            continue
        mean_conf = math.fsum(c for c, _ in members) / len(members)
        acc = sum(1 for _, y in members if y) / len(members)
        total += (len(members) / n) * abs(acc - mean_conf)
    return total


def reliability_bins(
    records: Sequence[PredictionRecord],
    num_bins: int = DEFAULT_ECE_BINS,
    f1_threshold: float = DEFAULT_F1_THRESHOLD,
) -> tuple[CalibBin, ...]:
    rows = _usable(records, f1_threshold)
    if not rows:
        raise EmptyBatch("no records with parseable confidence")
    out = []
    for i, members in enumerate(_fill_bins(rows, num_bins)):
        lo = i / num_bins
        hi = (i + 1) / num_bins
        if members:
            mean_conf = math.fsum(c for c, _ in members) / len(members)
            acc = sum(1 for _, y in members if y) / len(members)
        else:
            mean_conf = 0.0
            acc = 0.0
        out.append(CalibBin(lo=lo, hi=hi, count=len(members), mean_conf=mean_conf, accuracy=acc))
    return tuple(out)


def brier(
    records: Sequence[PredictionRecord], f1_threshold: float = DEFAULT_F1_THRESHOLD
) -> float:
    """Mean squared gap between confidence and the 0/1 outcome."""
    rows = _usable(records, f1_threshold)
    if not rows:
        raise EmptyBatch("no records with parseable confidence")
    return math.fsum((c - (1.0 if y else 0.0)) ** 2 for c, y, _ in rows) / len(rows)


def nll(
    records: Sequence[PredictionRecord],
    epsilon: float = DEFAULT_NLL_EPSILON,
    f1_threshold: float = DEFAULT_F1_THRESHOLD,
) -> float:
    """Mean negative log-likelihood of the outcome under the stated confidence,
    with confidences clamped to [epsilon, 1 - epsilon] to stay finite."""
    if not 0.0 < epsilon < 0.5:
        raise ValueError("epsilon must lie in (0, 0.5)")
    rows = _usable(records, f1_threshold)
    if not rows:
        raise EmptyBatch("no records with parseable confidence")
    total = 0.0
    for conf, correct, _ in rows:
        p = conf if correct else 1.0 - conf
        total += -math.log(min(max(p, epsilon), 1.0 - epsilon))
    return total / len(rows)


def ausc(
    records: Sequence[PredictionRecord], f1_threshold: float = DEFAULT_F1_THRESHOLD
) -> float:
    """Area under the selective accuracy vs. coverage curve.

    Records are ranked by confidence descending (ties broken by qid for a
    stable order, then grouped: tied confidences enter coverage together, so
    the curve has one point per distinct confidence). The trapezoidal area
    between the first point and full coverage is normalized by that coverage
    span; a batch with a single distinct confidence degenerates to its
    accuracy. Grouping ties makes the value invariant to duplicating every
    record.
    """
    rows = _usable(records, f1_threshold)
    if not rows:
        raise EmptyBatch("no records with parseable confidence")
    rows.sort(key=lambda t: (-t[0], t[2]))
    n = len(rows)
    points = []  # (coverage, selective accuracy) at each distinct confidence
    seen = 0
    correct = 0
    i = 0
    while i < n:
        j = i
        while j < n and rows[j][0] == rows[i][0]:
            correct += 1 if rows[j][1] else 0
            seen += 1
            j += 1
        points.append((seen / n, correct / seen))
        i = j
    if len(points) == 1:
        return points[0][1]
    area = 0.0
    for (c0, a0), (c1, a1) in zip(points, points[1:]):
        area += (c1 - c0) * (a0 + a1) / 2.0
    return area / (points[-1][0] - points[0][0])


def calibration_report(
    records: Sequence[PredictionRecord],
    num_bins: int = DEFAULT_ECE_BINS,
    nll_epsilon: float = DEFAULT_NLL_EPSILON,
    f1_threshold: float = DEFAULT_F1_THRESHOLD,
) -> CalibrationReport:
    records = list(records)
    if not records:
        raise EmptyBatch("no records")
    rows = _usable(records, f1_threshold)
    if not rows:
        raise EmptyBatch("no records with parseable confidence")
    n = len(records)
    accuracy = sum(1 for r in records if record_correct(r, f1_threshold)) / n
    mean_conf = math.fsum(c for c, _, _ in rows) / len(rows)
    return CalibrationReport(
        n=n,
        accuracy=accuracy,
        mean_confidence=mean_conf,
        overconfidence_gap=mean_conf - accuracy,
        ece=ece(records, num_bins, f1_threshold),
        brier=brier(records, f1_threshold),
        nll=nll(records, nll_epsilon, f1_threshold),
        parse_rate=len(rows) / n,
        ausc=ausc(records, f1_threshold),
        bins=reliability_bins(records, num_bins, f1_threshold),
    )


@dataclass(frozen=True)
class ErrorBand:
    label: str
    count: int
    fraction: float


@dataclass(frozen=True)
class ErrorTaxonomy:
    total_wrong: int
    epistemic: int
    aleatoric: int
    strict_epistemic: int
    bands: tuple[ErrorBand, ...]
    epistemic_with_emit: int
    epistemic_without_emit: int


def error_taxonomy(
    records: Sequence[PredictionRecord],
    epistemic_threshold: float = 0.5,
    strict_threshold: float = 0.7,
    f1_threshold: float = DEFAULT_F1_THRESHOLD,
) -> ErrorTaxonomy:
    """Decompose wrong answers by stated confidence.

    Epistemic errors are wrong answers above the confidence threshold;
    aleatoric ones sit at or below it. Only records with a parseable
    confidence participate. The emission split rescans the response text for
    the uncertainty marker.
    """
    if not 0.0 < epistemic_threshold < 1.0 or not 0.0 < strict_threshold < 1.0:
        raise ValueError("thresholds must lie in (0,1)")
    if strict_threshold < epistemic_threshold:
        raise ValueError("strict threshold must be >= epistemic threshold")
    wrong = []
    for r in records:
        conf = record_confidence(r)
        if conf is None:
            continue
        if not record_correct(r, f1_threshold):
            wrong.append((conf, bool(scan_emissions(r.response_text))))
    if not records:
        raise EmptyBatch("no records")
    total_wrong = len(wrong)
    epistemic = sum(1 for c, _ in wrong if c > epistemic_threshold)
    strict = sum(1 for c, _ in wrong if c > strict_threshold)
    bands = []
    for label, lo, hi in ERROR_BANDS:
        if lo == 0.0:
            count = sum(1 for c, _ in wrong if c <= hi)
        else:
            count = sum(1 for c, _ in wrong if lo < c <= hi)
        fraction = count / total_wrong if total_wrong else 0.0
        bands.append(ErrorBand(label=label, count=count, fraction=fraction))
    with_emit = sum(1 for c, e in wrong if c > epistemic_threshold and e)
    return ErrorTaxonomy(
        total_wrong=total_wrong,
        epistemic=epistemic,
        aleatoric=total_wrong - epistemic,
        strict_epistemic=strict,
        bands=tuple(bands),
        epistemic_with_emit=with_emit,
        epistemic_without_emit=epistemic - with_emit,
    )


@dataclass(frozen=True)
class NearMissSplit:
    """Wrong answers split by token overlap with the gold: near misses keep
    meaningful overlap, factual misses do not.

    Wrongness here is strict (token overlap below 1.0 does not make an answer
    correct), otherwise the near-miss cell would be empty by construction.
    """

    near_miss: int
    factual_miss: int


def near_miss_split(
    records: Sequence[PredictionRecord], overlap_threshold: float = DEFAULT_F1_THRESHOLD
) -> NearMissSplit:
    near = 0
    factual = 0
    for r in records:
        result = match_record(r, f1_threshold=1.0)
        if result.correct:
            continue
        if result.f1 >= overlap_threshold:
            near += 1
        else:
            factual += 1
    return NearMissSplit(near_miss=near, factual_miss=factual)


@dataclass(frozen=True)
class ConsistencySummary:
    greedy_conf_passrate_corr: float
    mean_conf_passrate_corr: float
    mean_within_question_conf_std: float
    pass_rate_high_conf: float | None
    pass_rate_low_conf: float | None
    high_low_gap: float | None


def _pearson(x, y):
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    dx = x - x.mean()
    dy = y - y.mean()
    denom = math.sqrt(float(dx @ dx) * float(dy @ dy))
    if denom == 0.0:
        raise UndefinedCorrelation("zero variance in a correlation input")
    return float(dx @ dy) / denom


def consistency_stats(
    groups: Mapping[str, Sequence[tuple[float, bool]]],
    high: float = 0.7,
    low: float = 0.3,
) -> ConsistencySummary:
    """Question-level agreement between stated confidence and pass rate.

    Each group holds (confidence, correct) samples for one question; the
    greedy sample is the first one. Within-question spread uses the
    population standard deviation. High/low pass rates average the per-
    question pass rate over questions whose mean confidence clears the cut.
    """
    if any(not samples for samples in groups.values()):
        raise ValueError("every question group must be non-empty")
    if len(groups) < 2:
        raise UndefinedCorrelation("need at least two question groups")
    keys = sorted(groups)
    greedy = [groups[k][0][0] for k in keys]
    mean_conf = [float(np.mean([c for c, _ in groups[k]])) for k in keys]
    pass_rate = [
        sum(1 for _, ok in groups[k] if ok) / len(groups[k]) for k in keys
    ]
    stds = [float(np.std([c for c, _ in groups[k]])) for k in keys]
    high_rates = [p for m, p in zip(mean_conf, pass_rate) if m >= high]
    low_rates = [p for m, p in zip(mean_conf, pass_rate) if m < low]
    rate_high = float(np.mean(high_rates)) if high_rates else None
    rate_low = float(np.mean(low_rates)) if low_rates else None
    gap = rate_high - rate_low if rate_high is not None and rate_low is not None else None
    return ConsistencySummary(
        greedy_conf_passrate_corr=_pearson(greedy, pass_rate),
        mean_conf_passrate_corr=_pearson(mean_conf, pass_rate),
        mean_within_question_conf_std=float(np.mean(stds)),
        pass_rate_high_conf=rate_high,
        pass_rate_low_conf=rate_low,
        high_low_gap=gap,
    )


@dataclass(frozen=True)
class BehaviorRow:
    n: int
    accuracy: float
    answer_line_rate: float
    emit_rate: float
    wrong_and_emit_rate: float | None
    correct_and_emit_rate: float | None


@dataclass(frozen=True)
class BehavioralSummary:
    per_dataset: dict[str, BehaviorRow]
    macro: BehaviorRow


def _behavior_row(records, f1_threshold):
    n = len(records)
    correct_flags = [record_correct(r, f1_threshold) for r in records]
    emit_flags = [len(r.emissions) >= 1 for r in records]
    wrong_total = sum(1 for ok in correct_flags if not ok)
    correct_total = n - wrong_total
    wrong_emit = sum(1 for ok, e in zip(correct_flags, emit_flags) if not ok and e)
    correct_emit = sum(1 for ok, e in zip(correct_flags, emit_flags) if ok and e)
    return BehaviorRow(
        n=n,
        accuracy=correct_total / n,
        answer_line_rate=sum(
            1 for r in records if extract_answer_line(r.response_text) is not None
        )
        / n,
        emit_rate=sum(1 for e in emit_flags if e) / n,
        wrong_and_emit_rate=wrong_emit / wrong_total if wrong_total else None,
        correct_and_emit_rate=correct_emit / correct_total if correct_total else None,
    )


def _macro(rows):
    def mean_of(values):
        defined = [v for v in values if v is not None]
        return float(np.mean(defined)) if defined else None

    return BehaviorRow(
        n=sum(r.n for r in rows),
        accuracy=float(np.mean([r.accuracy for r in rows])),
        answer_line_rate=float(np.mean([r.answer_line_rate for r in rows])),
        emit_rate=float(np.mean([r.emit_rate for r in rows])),
        wrong_and_emit_rate=mean_of([r.wrong_and_emit_rate for r in rows]),
        correct_and_emit_rate=mean_of([r.correct_and_emit_rate for r in rows]),
    )


def behavioral_summary(
    records: Sequence[PredictionRecord], f1_threshold: float = DEFAULT_F1_THRESHOLD
) -> BehavioralSummary:
    """Per-dataset and macro-averaged behavior: accuracy, answer-line
    completion, emission rate, and emission co-occurrence with wrong/correct
    answers. Macro rates are unweighted means over datasets, skipping cells
    that are undefined for a dataset."""
    records = list(records)
    if not records:
        raise EmptyBatch("no records")
    datasets = sorted({r.dataset for r in records})
    per_dataset = {}
    for name in datasets:
        members = [r for r in records if r.dataset == name]
        per_dataset[name] = _behavior_row(members, f1_threshold)
    return BehavioralSummary(
        per_dataset=per_dataset, macro=_macro(list(per_dataset.values()))
    )
