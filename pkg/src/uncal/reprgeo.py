"""Representation and distribution analytics over recorded matrices.

Covers token-level KL divergence (optionally grouped by token type), linear
centered kernel alignment between representation matrices, PCA by power
iteration with deflation, digit-mass binning for logit-lens readouts, and
relative Frobenius drift between weight matrices.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .errors import ShapeError, UndefinedSimilarity

KL_EPSILON = 1e-9
DEFAULT_BIN_EDGES = (0.3, 0.7)
PCA_ITERS = 1000
PCA_TOL = 1e-10


class TokenType(enum.Enum):
    CONFIDENCE_DIGIT = "ConfidenceDigit"
    STRUCTURAL_LABEL = "StructuralLabel"
    REASONING_TOKEN = "ReasoningToken"
    UNCERTAINTY_TOKEN = "UncertaintyToken"
    NEARBY_CONTEXT = "NearbyContext"
    OTHER = "Other"


@dataclass(frozen=True)
class TokenAnnotation:
    position: int
    type: TokenType


@dataclass(frozen=True)
class TokenDistPair:
    """Base and calibrated next-token distributions at one position."""

    position: int
    base_probs: np.ndarray
    calibrated_probs: np.ndarray

    def __post_init__(self):
        base = np.asarray(self.base_probs, dtype=float)
        cal = np.asarray(self.calibrated_probs, dtype=float)
        if base.shape != cal.shape or base.ndim != 1:
            raise ShapeError("distribution pair must be two equal-length vectors")
        for name, v in (("base", base), ("calibrated", cal)):
            if np.any(v < 0.0):
                raise ValueError(f"{name} distribution has negative entries")
            if abs(float(np.sum(v)) - 1.0) > 1e-6:
                raise ValueError(f"{name} distribution does not sum to 1")
        object.__setattr__(self, "base_probs", base)
        object.__setattr__(self, "calibrated_probs", cal)


def kl(p: Sequence[float], q: Sequence[float], epsilon: float = KL_EPSILON) -> float:
    """KL(p || q) with the reference floored at epsilon so missing support
    stays finite; 0 * log 0 counts as 0 and tiny negative round-off clips to 0."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if p.shape != q.shape or p.ndim != 1:
        raise ShapeError("KL needs two equal-length vectors")
    q_floor = np.maximum(q, epsilon)
    mask = p > 0.0
    value = float(np.sum(p[mask] * (np.log(p[mask]) - np.log(q_floor[mask]))))
    return max(value, 0.0)


@dataclass(frozen=True)
class TypeKlRow:
    count: int
    mean_kl: float
    mass_fraction: float | None


def kl_by_type(
    pairs: Sequence[TokenDistPair],
    annotations: Sequence[TokenAnnotation],
    epsilon: float = KL_EPSILON,
) -> dict[TokenType, TypeKlRow]:
    """Per-type mean KL and each type's share of the total KL mass.

    Every pair position must be annotated. Types with no positions are
    absent from the result; mass fractions are None when the total KL is 0.
    """
    type_of = {a.position: a.type for a in annotations}
    groups: dict[TokenType, list[float]] = {}
    for pair in pairs:
        if pair.position not in type_of:
            raise ValueError(f"position {pair.position} has no annotation")
        value = kl(pair.base_probs, pair.calibrated_probs, epsilon)
        groups.setdefault(type_of[pair.position], []).append(value)
    total = math.fsum(v for values in groups.values() for v in values)
    out = {}
    for token_type, values in groups.items():
        mass = math.fsum(values)
        out[token_type] = TypeKlRow(
            count=len(values),
            mean_kl=mass / len(values),
            mass_fraction=mass / total if total > 0.0 else None,
        )
    return out


def _as_2d(x) -> np.ndarray:
    values = getattr(x, "values", x)
    values = np.asarray(values, dtype=float)
    if values.ndim != 2:
        raise ShapeError("expected a 2-dimensional matrix")
    return values


def linear_cka(x, y) -> float:
    """Linear centered kernel alignment between two row-aligned matrices.

    Invariant to orthogonal right-multiplication and isotropic scaling of
    either argument; 1.0 means geometrically identical representations.
    """
    xm = _as_2d(x)
    ym = _as_2d(y)
    if xm.shape[0] != ym.shape[0]:
        raise ShapeError("matrices must have the same number of rows")
    if xm.shape[0] < 2:
        raise ShapeError("need at least two rows")
    xc = xm - xm.mean(axis=0)
    yc = ym - ym.mean(axis=0)
    cross = float(np.linalg.norm(yc.T @ xc, "fro") ** 2)
    norm_x = float(np.linalg.norm(xc.T @ xc, "fro"))
    norm_y = float(np.linalg.norm(yc.T @ yc, "fro"))
    if norm_x == 0.0 or norm_y == 0.0:
        raise UndefinedSimilarity("a zero-variance matrix has no geometry to compare")
    return cross / (norm_x * norm_y)


@dataclass(frozen=True)
class PcaResult:
    projection: np.ndarray  # rows x k scores
    explained_variance_ratio: np.ndarray  # length k, non-increasing
    components: np.ndarray  # k x dims, rows unit-norm


def pca_project(x, k: int, seed: int = 0, iters: int = PCA_ITERS, tol: float = PCA_TOL) -> PcaResult:
    """Top-k principal components via power iteration with deflation.

    Deterministic: start vectors come from a seeded generator and each
    component's largest-magnitude entry is flipped positive.
    """
    values = _as_2d(x)
    n, d = values.shape
    if k > d:
        raise ShapeError(f"k={k} exceeds dims={d}")
    if n <= k:
        raise ShapeError(f"need more rows than components, got rows={n}, k={k}")
    centered = values - values.mean(axis=0)
    cov = centered.T @ centered / (n - 1)
    total_var = float(np.trace(cov))
    if total_var == 0.0:
        raise UndefinedSimilarity("zero-variance matrix has no principal directions")
    rng = np.random.default_rng(seed)
    components = []
    eigenvalues = []
    work = cov.copy()
    for _ in range(k):
        v = rng.standard_normal(d)
        v /= np.linalg.norm(v)
        for _ in range(iters):
            av = work @ v
            norm = np.linalg.norm(av)
            if norm < 1e-300:
                break  # deflated to (numerical) zero; eigenvalue is 0
            nxt = av / norm
            if np.linalg.norm(nxt - v) < tol:
                v = nxt
                break
            v = nxt
        peak = int(np.argmax(np.abs(v)))
        if v[peak] < 0.0:
            v = -v
        lam = float(v @ work @ v)
        components.append(v)
        eigenvalues.append(max(lam, 0.0))
        work = work - lam * np.outer(v, v)
    comp = np.stack(components)
    ratios = np.array(eigenvalues) / total_var
    return PcaResult(
        projection=centered @ comp.T,
        explained_variance_ratio=ratios,
        components=comp,
    )


@dataclass(frozen=True)
class BinMasses:
    low: float
    mid: float
    high: float


def logit_lens_bins(
    digit_probs: Mapping[int, float],
    edges: tuple[float, float] = DEFAULT_BIN_EDGES,
) -> BinMasses:
    """Sum digit masses (digits 0..10, value = digit/10) into low/mid/high
    bins: value <= edges[0] is low, <= edges[1] is mid, above is high."""
    low_hi, mid_hi = edges
    if not 0.0 <= low_hi < mid_hi <= 1.0:
        raise ValueError("edges must satisfy 0 <= low < mid <= 1")
    low = mid = high = 0.0
    for digit, prob in digit_probs.items():
        if not 0 <= digit <= 10:
            raise ValueError(f"digit {digit} outside the 0..10 scale")
        if prob < 0.0:
            raise ValueError("digit masses must be nonnegative")
        value = digit / 10.0
        if value <= low_hi:
            low += prob
        elif value <= mid_hi:
            mid += prob
        else:
            high += prob
    return BinMasses(low=low, mid=mid, high=high)


def frobenius_drift(w_base, w_cal) -> float:
    """Relative Frobenius drift ||cal - base||_F / ||base||_F."""
    base = np.asarray(w_base, dtype=float)
    cal = np.asarray(w_cal, dtype=float)
    if base.shape != cal.shape:
        raise ShapeError("weight matrices must have the same shape")
    base_norm = float(np.linalg.norm(base))
    if base_norm == 0.0:
        raise UndefinedSimilarity("zero base norm makes relative drift undefined")
    return float(np.linalg.norm(cal - base)) / base_norm


@dataclass(frozen=True)
class EmbeddingDriftReport:
    interest_mean_drift: float
    baseline_mean_drift: float
    ratio: float | None  # None when 0/0; +inf when only the baseline is still


def embedding_drift_report(
    rows_of_interest: Sequence[int],
    baseline_rows: Sequence[int],
    w_base,
    w_cal,
) -> EmbeddingDriftReport:
    """Mean per-row relative drift of interest rows vs. a baseline row set."""
    base = np.asarray(w_base, dtype=float)
    cal = np.asarray(w_cal, dtype=float)
    if base.shape != cal.shape:
        raise ShapeError("weight matrices must have the same shape")
    interest = list(rows_of_interest)
    baseline = list(baseline_rows)
    if not interest or not baseline:
        raise ValueError("row sets must be non-empty")
    if set(interest) & set(baseline):
        raise ValueError("row sets must be disjoint")

    def row_drift(indices):
        drifts = []
        for i in indices:
            norm = float(np.linalg.norm(base[i]))
            if norm == 0.0:
                raise UndefinedSimilarity(f"row {i} of the base matrix has zero norm")
            drifts.append(float(np.linalg.norm(cal[i] - base[i])) / norm)
        return float(np.mean(drifts))

    interest_mean = row_drift(interest)
    baseline_mean = row_drift(baseline)
    if baseline_mean > 0.0:
        ratio = interest_mean / baseline_mean
    elif interest_mean > 0.0:
        ratio = math.inf
    else:
        ratio = None
    return EmbeddingDriftReport(
        interest_mean_drift=interest_mean,
        baseline_mean_drift=baseline_mean,
        ratio=ratio,
    )
