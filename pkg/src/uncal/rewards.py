"""Answer extraction, normalization, correctness matching, and rewards.

Operates on recorded model responses. Matching follows the usual QA recipe:
normalized exact match first, then yes/no canonicalization, then calendar-date
agreement, then a token-F1 fallback against the best gold answer.
"""

from __future__ import annotations

import enum
import re
import string
from collections import Counter
from dataclasses import dataclass, replace
from typing import Sequence

from .errors import MissingSignal

UNCERTAIN_MARKER = "<uncertain>"

# Base rewards for the emission interface, ordered so that a silent failure
# costs more than an admitted one: correct+silent > correct+emit >
# wrong+emit > wrong+silent.
EMISSION_REWARD_TABLE = {
    (True, False): 5.0,
    (True, True): 3.5,
    (False, True): 0.0,
    (False, False): -2.0,
}
DEFAULT_REPETITION_PENALTY = 1.0
DEFAULT_F1_THRESHOLD = 0.3

_ANSWER_LINE_RE = re.compile(r"^[ \t]*answer[ \t]*:(.*)$", re.IGNORECASE | re.MULTILINE)
_CONFIDENCE_RE = re.compile(r"confidence[ \t]*:[ \t]*([-+]?\d+(?:\.\d+)?)", re.IGNORECASE)
_ARTICLES = ("a", "an", "the")
_PUNCT_TABLE = str.maketrans("", "", string.punctuation)

_YES_WORDS = {"yes", "true", "correct"}
_NO_WORDS = {"no", "false", "incorrect"}

_MONTHS = {
    name: i + 1
    for i, name in enumerate(
        [
            "january", "february", "march", "april", "may", "june",
            "july", "august", "september", "october", "november", "december",
        ]
    )
}
_MONTHS.update({name[:3]: num for name, num in _MONTHS.items()})

_ISO_DATE_RE = re.compile(r"^(\d{4})(?:-(\d{1,2})(?:-(\d{1,2}))?)?$")
_MDY_RE = re.compile(r"^([a-z]+)\s+(?:(\d{1,2})(?:st|nd|rd|th)?\s*,?\s+)?(\d{4})$")
_DMY_RE = re.compile(r"^(\d{1,2})(?:st|nd|rd|th)?\s+([a-z]+),?\s+(\d{4})$")


@dataclass(frozen=True)
class EmissionEvent:
    """One occurrence of the uncertainty marker inside a response."""

    char_position: int
    token_index: int | None = None


class MatchRule(enum.Enum):
    EXACT_MATCH = "ExactMatch"
    YES_NO = "YesNo"
    DATE = "Date"
    TOKEN_F1 = "TokenF1"


@dataclass(frozen=True)
class MatchResult:
    correct: bool
    rule: MatchRule
    f1: float


@dataclass(frozen=True)
class PredictionRecord:
    """One recorded model response plus the signals evaluation needs.

    `emissions` must be sorted by character position and lie inside the
    response text. `verbal_confidence`, `token_probs`, and `p_affirmative`
    are optional per-trace signals; `match` caches a MatchResult once the
    record has been annotated.
    """

    qid: str
    gold_answers: tuple[str, ...]
    response_text: str
    dataset: str = ""
    question: str = ""
    extracted_answer: str | None = None
    verbal_confidence: float | None = None
    emissions: tuple[EmissionEvent, ...] = ()
    response_token_count: int = 0
    token_probs: tuple[float, ...] | None = None
    p_affirmative: float | None = None
    match: MatchResult | None = None

    def __post_init__(self):
        if not self.gold_answers:
            raise ValueError("gold_answers must be non-empty")
        object.__setattr__(self, "gold_answers", tuple(self.gold_answers))
        object.__setattr__(self, "emissions", tuple(self.emissions))
        if self.token_probs is not None:
            object.__setattr__(self, "token_probs", tuple(self.token_probs))
        if self.verbal_confidence is not None and not 0.0 <= self.verbal_confidence <= 1.0:
            raise ValueError("verbal_confidence must lie in [0,1]")
        positions = [e.char_position for e in self.emissions]
        if positions != sorted(positions):
            raise ValueError("emissions must be sorted by char_position")
        for e in self.emissions:
            if not 0 <= e.char_position < max(len(self.response_text), 1):
                raise ValueError("emission position outside response text")


def extract_answer_line(response_text: str) -> str | None:
    """Payload of the last `Answer:` line, or None if no such line exists.

    A trailing `Confidence: x` on the same physical line is not part of the
    answer and is stripped.
    """
    matches = _ANSWER_LINE_RE.findall(response_text)
    if not matches:
        return None
    payload = matches[-1]
    lowered = payload.lower()
    cut = lowered.find("confidence:")
    if cut == -1:
        cut = lowered.find("confidence :")
    if cut != -1:
        payload = payload[:cut]
    return payload.strip()


def extract_confidence_flagged(response_text: str) -> tuple[float | None, bool]:
    """Parse the last `Confidence:` value; clamp out-of-range values.

    Returns (value, clamped). Absence of a parseable value is (None, False);
    that absence is what the parse-rate metric counts.
    """
    matches = _CONFIDENCE_RE.findall(response_text)
    if not matches:
        return None, False
    value = float(matches[-1])
    if value < 0.0:
        return 0.0, True
    if value > 1.0:
        return 1.0, True
    return value, False


def extract_confidence(response_text: str) -> float | None:
    return extract_confidence_flagged(response_text)[0]


def normalize_answer(text: str) -> str:
    """Lowercase, strip punctuation, collapse whitespace, drop a leading article."""
    text = text.lower().translate(_PUNCT_TABLE)
    tokens = text.split()
    if tokens and tokens[0] in _ARTICLES:
        tokens = tokens[1:]
    return " ".join(tokens)


def token_f1(pred: str, gold: str) -> float:
    """Whitespace-token multiset F1 on normalized text.

    Both sides empty after normalization counts as 1.0; exactly one side
    empty counts as 0.0.
    """
    pred_tokens = normalize_answer(pred).split()
    gold_tokens = normalize_answer(gold).split()
    if not pred_tokens and not gold_tokens:
        return 1.0
    if not pred_tokens or not gold_tokens:
        return 0.0
    overlap = sum((Counter(pred_tokens) & Counter(gold_tokens)).values())
    if overlap == 0:
        return 0.0
    precision = overlap / len(pred_tokens)
    recall = overlap / len(gold_tokens)
    return 2.0 * precision * recall / (precision + recall)


def _canonical_yesno(text: str) -> str | None:
    norm = normalize_answer(text)
    if norm in _YES_WORDS:
        return "yes"
    if norm in _NO_WORDS:
        return "no"
    return None


def parse_date(text: str) -> tuple[int, int | None, int | None] | None:
    """Parse YYYY / YYYY-MM / YYYY-MM-DD / month-name forms to (y, m, d)."""
    cleaned = text.strip().strip(".").strip().lower()
    m = _ISO_DATE_RE.match(cleaned)
    if m:
        year = int(m.group(1))
        month = int(m.group(2)) if m.group(2) else None
        day = int(m.group(3)) if m.group(3) else None
    else:
        m = _MDY_RE.match(cleaned)
        if m:
            month_name, day_s, year_s = m.group(1), m.group(2), m.group(3)
        else:
            m = _DMY_RE.match(cleaned)
            if not m:
                return None
            day_s, month_name, year_s = m.group(1), m.group(2), m.group(3)
        if month_name not in _MONTHS:
            return None
        year = int(year_s)
        month = _MONTHS[month_name]
        day = int(day_s) if day_s else None
    if month is not None and not 1 <= month <= 12:
        return None
    if day is not None and not 1 <= day <= 31:
        return None
    return year, month, day


def _dates_agree(a: tuple[int, int | None, int | None], b) -> bool:
    # all components present on both sides must agree
    for x, y in zip(a, b):
        if x is not None and y is not None and x != y:
            return False
    return True


def match_answer(
    pred: str, golds: Sequence[str], f1_threshold: float = DEFAULT_F1_THRESHOLD
) -> MatchResult:
    """Match a predicted answer against gold answers.

    Rules fire in order: normalized exact match, yes/no canonicalization,
    calendar-date agreement, token-F1 >= threshold. The first rule that fires
    wins; if none fires the result is incorrect with the best token F1.
    """
    if not golds:
        raise ValueError("golds must be non-empty")
    if not 0.0 <= f1_threshold <= 1.0:
        raise ValueError("f1_threshold must lie in [0,1]")
    norm_pred = normalize_answer(pred)
    if any(norm_pred == normalize_answer(g) for g in golds):
        return MatchResult(True, MatchRule.EXACT_MATCH, 1.0)
    pred_yn = _canonical_yesno(pred)
    if pred_yn is not None:
        for g in golds:
            if _canonical_yesno(g) == pred_yn:
                return MatchResult(True, MatchRule.YES_NO, 1.0)
    pred_date = parse_date(pred)
    if pred_date is not None:
        for g in golds:
            gold_date = parse_date(g)
            if gold_date is not None and _dates_agree(pred_date, gold_date):
                return MatchResult(True, MatchRule.DATE, 1.0)
    best_f1 = max(token_f1(pred, g) for g in golds)
    return MatchResult(best_f1 >= f1_threshold, MatchRule.TOKEN_F1, best_f1)


def match_record(
    record: PredictionRecord, f1_threshold: float = DEFAULT_F1_THRESHOLD
) -> MatchResult:
    """Correctness of a record's answer; a record without any extractable
    answer is incorrect with F1 = 0."""
    answer = record.extracted_answer
    if answer is None:
        answer = extract_answer_line(record.response_text)
    if answer is None:
        return MatchResult(False, MatchRule.TOKEN_F1, 0.0)
    return match_answer(answer, record.gold_answers, f1_threshold)


def record_correct(
    record: PredictionRecord, f1_threshold: float = DEFAULT_F1_THRESHOLD
) -> bool:
    if record.match is not None:
        return record.match.correct
    return match_record(record, f1_threshold).correct


def annotate_record(
    record: PredictionRecord, f1_threshold: float = DEFAULT_F1_THRESHOLD
) -> PredictionRecord:
    """Copy of the record with `extracted_answer` and `match` filled in."""
    answer = record.extracted_answer
    if answer is None:
        answer = extract_answer_line(record.response_text)
    return replace(
        record,
        extracted_answer=answer,
        match=match_record(record, f1_threshold),
    )


def verbal_reward(
    record: PredictionRecord, f1_threshold: float = DEFAULT_F1_THRESHOLD
) -> float:
    """Signed-confidence reward: +p when the answer is correct, -p when not."""
    conf = record_confidence(record)
    if conf is None:
        raise MissingSignal(f"record {record.qid!r} has no parseable confidence")
    value = conf if record_correct(record, f1_threshold) else -conf
    return value + 0.0


def emission_reward(
    record: PredictionRecord,
    penalty_per_extra: float = DEFAULT_REPETITION_PENALTY,
    f1_threshold: float = DEFAULT_F1_THRESHOLD,
) -> float:
    """Emission-interface reward from the (correct, emitted) table, minus a
    repetition penalty for each marker beyond the second."""
    correct = record_correct(record, f1_threshold)
    emitted = len(record.emissions) >= 1
    base = EMISSION_REWARD_TABLE[(correct, emitted)]
    extra = max(0, len(record.emissions) - 2)
    return base - penalty_per_extra * extra


def scan_emissions(response_text: str) -> list[EmissionEvent]:
    """All non-overlapping occurrences of the uncertainty marker, left to right."""
    events = []
    start = 0
    while True:
        idx = response_text.find(UNCERTAIN_MARKER, start)
        if idx == -1:
            return events
        events.append(EmissionEvent(char_position=idx))
        start = idx + len(UNCERTAIN_MARKER)


def first_emit_fraction(record: PredictionRecord) -> float | None:
    """Position of the first emission as a fraction of response length."""
    if not record.emissions or not record.response_text:
        return None
    return record.emissions[0].char_position / len(record.response_text)


def record_confidence(record: PredictionRecord) -> float | None:
    """The record's stated confidence: the explicit field when present,
    otherwise parsed from the response text."""
    if record.verbal_confidence is not None:
        return record.verbal_confidence
    return extract_confidence(record.response_text)


def reasoning_depth(response_text: str) -> int:
    """Number of nonempty lines before the last answer line (all nonempty
    lines when no answer line exists)."""
    lines = response_text.splitlines()
    last_answer = None
    for i, line in enumerate(lines):
        if re.match(r"^[ \t]*answer[ \t]*:", line, re.IGNORECASE):
            last_answer = i
    upto = last_answer if last_answer is not None else len(lines)
    return sum(1 for line in lines[:upto] if line.strip())
