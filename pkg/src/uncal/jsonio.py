"""JSON Lines record streams and deterministic report serialization.

Loading is strict: every line is validated against the record schema, invalid
lines are reported with their line numbers, and a file where more than half
the lines fail is rejected outright. Report writing controls float formatting
(17 significant digits, round-trip exact) and key order so that identical
configurations produce byte-identical files.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

from .errors import CorruptInput, IoError
from .ragctl import RagTraceRecord
from .rewards import (
    EmissionEvent,
    MatchResult,
    MatchRule,
    PredictionRecord,
    scan_emissions,
)

_PRED_FIELDS = {
    "qid", "dataset", "question", "gold_answers", "response_text",
    "extracted_answer", "verbal_confidence", "emissions",
    "response_token_count", "token_probs", "p_affirmative", "match",
}
_RAG_FIELDS = {
    "qid", "dataset", "gold_answers", "noret_answer", "noret_confidence",
    "noret_emissions", "noret_probe_score", "noret_token_probs", "ret_answer",
    "noret_response_text", "external_trigger",
}


# ---------------------------------------------------------------------------
# Canonical serialization
# ---------------------------------------------------------------------------


def format_float(value: float) -> str:
    """17-significant-digit decimal form; round-trips float64 exactly."""
    if value != value or math.isinf(value):
        raise ValueError("reports must not contain NaN or infinity")
    if value == 0.0:
        return "0"  # canonicalize -0.0
    text = format(value, ".17g")
    return text


def dumps_canonical(obj) -> str:
    """Deterministic JSON: sorted keys, fixed float format, no whitespace drift."""
    pieces = []
    _write_canonical(obj, pieces)
    return "".join(pieces)


def _write_canonical(obj, out: list[str]) -> None:
    if obj is None:
        out.append("null")
    elif obj is True:
        out.append("true")
    elif obj is False:
        out.append("false")
    elif isinstance(obj, int):
        out.append(str(obj))
    elif isinstance(obj, float):
        out.append(format_float(obj))
    elif isinstance(obj, str):
        out.append(json.dumps(obj, ensure_ascii=False))
    elif isinstance(obj, dict):
        out.append("{")
        for i, key in enumerate(sorted(obj)):
            if i:
                out.append(",")
            if not isinstance(key, str):
                raise TypeError(f"report keys must be strings, got {key!r}")
            out.append(json.dumps(key, ensure_ascii=False))
            out.append(":")
            _write_canonical(obj[key], out)
        out.append("}")
    elif isinstance(obj, (list, tuple)):
        out.append("[")
        for i, item in enumerate(obj):
            if i:
                out.append(",")
            _write_canonical(item, out)
        out.append("]")
    else:
        raise TypeError(f"cannot serialize {type(obj).__name__} into a report")


def write_report(path, obj) -> None:
    try:
        Path(path).write_text(dumps_canonical(obj) + "\n", encoding="utf-8")
    except OSError as exc:
        raise IoError(f"cannot write report {path}: {exc}") from exc


def write_jsonl(path, objs: Sequence[dict]) -> None:
    try:
        with open(path, "w", encoding="utf-8") as fh:
            for obj in objs:
                fh.write(dumps_canonical(obj) + "\n")
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def write_csv(path, header: Sequence[str], rows: Sequence[Sequence]) -> None:
    """Plot-ready CSV with the same float discipline as the JSON reports."""

    def cell(value):
        if value is None:
            return ""
        if isinstance(value, bool):
            return "true" if value else "false"
        if isinstance(value, float):
            return format_float(value)
        return str(value)

    try:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(",".join(header) + "\n")
            for row in rows:
                fh.write(",".join(cell(v) for v in row) + "\n")
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


# ---------------------------------------------------------------------------
# Record <-> dict
# ---------------------------------------------------------------------------


def prediction_to_dict(record: PredictionRecord) -> dict:
    out = {
        "qid": record.qid,
        "dataset": record.dataset,
        "question": record.question,
        "gold_answers": list(record.gold_answers),
        "response_text": record.response_text,
        "response_token_count": record.response_token_count,
        "emissions": [
            {"char_position": e.char_position}
            | ({"token_index": e.token_index} if e.token_index is not None else {})
            for e in record.emissions
        ],
    }
    if record.extracted_answer is not None:
        out["extracted_answer"] = record.extracted_answer
    if record.verbal_confidence is not None:
        out["verbal_confidence"] = record.verbal_confidence
    if record.token_probs is not None:
        out["token_probs"] = list(record.token_probs)
    if record.p_affirmative is not None:
        out["p_affirmative"] = record.p_affirmative
    if record.match is not None:
        out["match"] = {
            "correct": record.match.correct,
            "rule": record.match.rule.value,
            "f1": record.match.f1,
        }
    return out


def _require(obj: dict, key: str, kind, line_label: str):
    if key not in obj:
        raise ValueError(f"{line_label}: missing required field {key!r}")
    value = obj[key]
    if not isinstance(value, kind):
        raise ValueError(f"{line_label}: field {key!r} has wrong type")
    return value


def prediction_from_dict(obj: dict, line_label: str = "record") -> PredictionRecord:
    if not isinstance(obj, dict):
        raise ValueError(f"{line_label}: not a JSON object")
    unknown = set(obj) - _PRED_FIELDS
    if unknown:
        raise ValueError(f"{line_label}: unknown fields {sorted(unknown)}")
    qid = _require(obj, "qid", str, line_label)
    golds = _require(obj, "gold_answers", list, line_label)
    if not golds or not all(isinstance(g, str) for g in golds):
        raise ValueError(f"{line_label}: gold_answers must be non-empty strings")
    text = _require(obj, "response_text", str, line_label)
    conf = obj.get("verbal_confidence")
    if conf is not None:
        if not isinstance(conf, (int, float)) or isinstance(conf, bool):
            raise ValueError(f"{line_label}: verbal_confidence must be a number")
        conf = float(conf)
        if not 0.0 <= conf <= 1.0:
            raise ValueError(f"{line_label}: verbal_confidence outside [0,1]")
    emissions_raw = obj.get("emissions")
    if emissions_raw is None:
        emissions = tuple(scan_emissions(text))
    else:
        if not isinstance(emissions_raw, list):
            raise ValueError(f"{line_label}: emissions must be a list")
        emissions = tuple(
            EmissionEvent(
                char_position=int(e["char_position"]),
                token_index=int(e["token_index"]) if e.get("token_index") is not None else None,
            )
            for e in emissions_raw
        )
    token_probs = obj.get("token_probs")
    if token_probs is not None:
        if not isinstance(token_probs, list) or not all(
            isinstance(p, (int, float)) and not isinstance(p, bool) and 0.0 < p <= 1.0
            for p in token_probs
        ):
            raise ValueError(f"{line_label}: token_probs must be numbers in (0,1]")
        token_probs = tuple(float(p) for p in token_probs)
    count = obj.get("response_token_count")
    if count is None:
        count = len(text.split())
    elif not isinstance(count, int) or isinstance(count, bool) or count < 0:
        raise ValueError(f"{line_label}: response_token_count must be a nonnegative int")
    p_aff = obj.get("p_affirmative")
    if p_aff is not None:
        p_aff = float(p_aff)
        if not 0.0 <= p_aff <= 1.0:
            raise ValueError(f"{line_label}: p_affirmative outside [0,1]")
    match = obj.get("match")
    if match is not None:
        match = MatchResult(
            correct=bool(match["correct"]),
            rule=MatchRule(match["rule"]),
            f1=float(match["f1"]),
        )
    try:
        return PredictionRecord(
            qid=qid,
            dataset=str(obj.get("dataset", "")),
            question=str(obj.get("question", "")),
            gold_answers=tuple(golds),
            response_text=text,
            extracted_answer=obj.get("extracted_answer"),
            verbal_confidence=conf,
            emissions=emissions,
            response_token_count=count,
            token_probs=token_probs,
            p_affirmative=p_aff,
            match=match,
        )
    except ValueError as exc:
        raise ValueError(f"{line_label}: {exc}") from exc


def rag_to_dict(record: RagTraceRecord) -> dict:
    out = {
        "qid": record.qid,
        "dataset": record.dataset,
        "gold_answers": list(record.gold_answers),
        "noret_answer": record.noret_answer,
        "ret_answer": record.ret_answer,
        "noret_emissions": record.noret_emissions,
    }
    if record.noret_confidence is not None:
        out["noret_confidence"] = record.noret_confidence
    if record.noret_probe_score is not None:
        out["noret_probe_score"] = record.noret_probe_score
    if record.noret_token_probs is not None:
        out["noret_token_probs"] = list(record.noret_token_probs)
    if record.noret_response_text is not None:
        out["noret_response_text"] = record.noret_response_text
    if record.external_trigger is not None:
        out["external_trigger"] = record.external_trigger
    return out


def rag_from_dict(obj: dict, line_label: str = "record") -> RagTraceRecord:
    if not isinstance(obj, dict):
        raise ValueError(f"{line_label}: not a JSON object")
    unknown = set(obj) - _RAG_FIELDS
    if unknown:
        raise ValueError(f"{line_label}: unknown fields {sorted(unknown)}")
    qid = _require(obj, "qid", str, line_label)
    golds = _require(obj, "gold_answers", list, line_label)
    if not golds or not all(isinstance(g, str) for g in golds):
        raise ValueError(f"{line_label}: gold_answers must be non-empty strings")
    noret = _require(obj, "noret_answer", str, line_label)
    ret = _require(obj, "ret_answer", str, line_label)
    conf = obj.get("noret_confidence")
    if conf is not None:
        conf = float(conf)
        if not 0.0 <= conf <= 1.0:
            raise ValueError(f"{line_label}: noret_confidence outside [0,1]")
    probs = obj.get("noret_token_probs")
    if probs is not None:
        probs = tuple(float(p) for p in probs)
    try:
        return RagTraceRecord(
            qid=qid,
            dataset=str(obj.get("dataset", "")),
            gold_answers=tuple(golds),
            noret_answer=noret,
            ret_answer=ret,
            noret_confidence=conf,
            noret_emissions=int(obj.get("noret_emissions", 0)),
            noret_probe_score=(
                float(obj["noret_probe_score"])
                if obj.get("noret_probe_score") is not None
                else None
            ),
            noret_token_probs=probs,
            noret_response_text=obj.get("noret_response_text"),
            external_trigger=(
                bool(obj["external_trigger"])
                if obj.get("external_trigger") is not None
                else None
            ),
        )
    except ValueError as exc:
        raise ValueError(f"{line_label}: {exc}") from exc


# ---------------------------------------------------------------------------
# Loading
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LoadResult:
    records: list
    errors: list[tuple[int, str]]  # (line number, message)
    total_lines: int


def load_lines(path, parse: Callable[[dict, str], object]) -> LoadResult:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    records = []
    errors = []
    total = 0
    for i, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        total += 1
        label = f"{path}:{i}"
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            errors.append((i, f"invalid JSON: {exc.msg}"))
            continue
        try:
            records.append(parse(obj, label))
        except (ValueError, KeyError, TypeError) as exc:
            errors.append((i, str(exc)))
    if total and len(errors) > total / 2:
        raise CorruptInput(
            f"{path}: {len(errors)} of {total} lines failed validation"
        )
    return LoadResult(records=records, errors=errors, total_lines=total)


def load_predictions(path) -> LoadResult:
    """Strictly validated PredictionRecord stream."""
    return load_lines(path, prediction_from_dict)


def load_rag_traces(path) -> LoadResult:
    return load_lines(path, rag_from_dict)
