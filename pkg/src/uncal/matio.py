"""Binary matrix container: `UNCAL-MAT v1` header plus row-major f32 payload.

The header is a single ASCII line `UNCAL-MAT v1 rows=<n> dims=<d> dtype=f32le`
followed by rows*dims little-endian 32-bit floats. Row identities live in a
sidecar JSON Lines file, one object per row (for example {"qid": ...} or
{"qid": ..., "token_index": ...}).
"""

from __future__ import annotations

import json
import re
from pathlib import Path

import numpy as np

from .errors import IoError

_HEADER_RE = re.compile(rb"^UNCAL-MAT v1 rows=(\d+) dims=(\d+) dtype=f32le\n$")


def write_matrix(path, values) -> None:
    values = np.asarray(values, dtype=np.float32)
    if values.ndim != 2:
        raise ValueError("matrix must be 2-dimensional")
    rows, dims = values.shape
    header = f"UNCAL-MAT v1 rows={rows} dims={dims} dtype=f32le\n".encode("ascii")
    try:
        with open(path, "wb") as fh:
            fh.write(header)
            fh.write(values.astype("<f4").tobytes(order="C"))
    except OSError as exc:
        raise IoError(f"cannot write matrix file {path}: {exc}") from exc


def read_matrix(path) -> np.ndarray:
    try:
        with open(path, "rb") as fh:
            header = fh.readline()
            m = _HEADER_RE.match(header)
            if not m:
                raise IoError(f"{path}: not an UNCAL-MAT v1 file")
            rows, dims = int(m.group(1)), int(m.group(2))
            payload = fh.read()
    except OSError as exc:
        raise IoError(f"cannot read matrix file {path}: {exc}") from exc
    expected = rows * dims * 4
    if len(payload) != expected:
        raise IoError(f"{path}: expected {expected} payload bytes, got {len(payload)}")
    return np.frombuffer(payload, dtype="<f4").reshape(rows, dims).astype(np.float32)


def write_row_ids(path, rows) -> None:
    try:
        with open(path, "w", encoding="utf-8") as fh:
            for row in rows:
                fh.write(json.dumps(row, sort_keys=True) + "\n")
    except OSError as exc:
        raise IoError(f"cannot write sidecar {path}: {exc}") from exc


def read_row_ids(path) -> list[dict]:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise IoError(f"cannot read sidecar {path}: {exc}") from exc
    rows = []
    for i, line in enumerate(text.splitlines()):
        if not line.strip():
            continue
        try:
            rows.append(json.loads(line))
        except json.JSONDecodeError as exc:
            raise IoError(f"{path}:{i + 1}: invalid JSON: {exc}") from exc
    return rows
