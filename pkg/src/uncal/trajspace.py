"""Exact exponential-tilting simulator over finite trajectory distributions.

A TrajectorySpace is a finite distribution over reasoning trajectories for a
single input, each trajectory carrying a final answer, a stated confidence,
and a base probability. Tilting reweights the distribution by
exp(eta * reward) and renormalizes; every derived quantity here (log-odds
shifts, answer masses, mass-ratio bounds, confidence-weighted margins) can be
computed exactly on these finite spaces, which is what makes brute-force
verification possible.

All operations are pure: they never mutate their inputs and return fresh
spaces, so concurrent use over distinct spaces is safe.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .errors import (
    DegenerateRatio,
    HypothesisViolated,
    InvalidStep,
    MissingReward,
    NumericOverflow,
    UndefinedLogOdds,
    UnknownTrajectory,
)

# exp() overflows float64 a little above 709; linear exposure of the tilted
# probabilities additionally requires the reward spread to stay representable.
_EXP_LIMIT = 700.0

_PROB_SUM_TOL = 1e-12


@dataclass(frozen=True)
class Trajectory:
    """One reasoning trajectory: answer, stated confidence, base probability."""

    id: str
    answer: str
    confidence: float
    base_prob: float
    correct: bool

    def __post_init__(self):
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence must lie in [0,1], got {self.confidence}")
        if self.base_prob < 0.0:
            raise ValueError(f"base_prob must be nonnegative, got {self.base_prob}")


@dataclass(frozen=True)
class TrajectorySpace:
    """A normalized finite distribution over trajectories for one input.

    Invariants enforced at construction: probabilities sum to 1 (within
    1e-12), ids are unique, at least one trajectory exists, and each
    trajectory's `correct` flag agrees with `answer == gold_answer`.
    """

    trajectories: tuple[Trajectory, ...]
    gold_answer: str

    def __post_init__(self):
        if not self.trajectories:
            raise ValueError("a trajectory space needs at least one trajectory")
        object.__setattr__(self, "trajectories", tuple(self.trajectories))
        ids = [t.id for t in self.trajectories]
        if len(set(ids)) != len(ids):
            raise ValueError("trajectory ids must be unique")
        total = math.fsum(t.base_prob for t in self.trajectories)
        if abs(total - 1.0) > _PROB_SUM_TOL:
            raise ValueError(f"base probabilities must sum to 1, got {total!r}")
        for t in self.trajectories:
            if t.correct != (t.answer == self.gold_answer):
                raise ValueError(
                    f"trajectory {t.id}: correct flag disagrees with gold answer"
                )

    def __len__(self) -> int:
        return len(self.trajectories)

    def by_id(self, traj_id: str) -> Trajectory:
        for t in self.trajectories:
            if t.id == traj_id:
                return t
        raise UnknownTrajectory(f"no trajectory with id {traj_id!r}")

    def probs(self) -> np.ndarray:
        return np.array([t.base_prob for t in self.trajectories], dtype=float)

    def answers(self) -> tuple[str, ...]:
        return tuple(t.answer for t in self.trajectories)

    def with_probs(self, probs: Sequence[float]) -> "TrajectorySpace":
        """Copy of this space with replaced base probabilities."""
        if len(probs) != len(self.trajectories):
            raise ValueError("probability vector length mismatch")
        new = tuple(
            Trajectory(t.id, t.answer, t.confidence, float(p), t.correct)
            for t, p in zip(self.trajectories, probs)
        )
        return TrajectorySpace(new, self.gold_answer)


class RewardKind(enum.Enum):
    VERBAL_CONFIDENCE = "VerbalConfidence"
    CUSTOM = "Custom"


@dataclass(frozen=True)
class RewardSpec:
    """Which reward drives the tilt: signed confidence, or an explicit table."""

    kind: RewardKind
    custom_values: Mapping[str, float] | None = None

    @staticmethod
    def verbal() -> "RewardSpec":
        return RewardSpec(RewardKind.VERBAL_CONFIDENCE)

    @staticmethod
    def custom(values: Mapping[str, float]) -> "RewardSpec":
        return RewardSpec(RewardKind.CUSTOM, dict(values))


def reward(traj: Trajectory, spec: RewardSpec) -> float:
    """Reward of one trajectory: +confidence if correct, -confidence if not,
    or the custom table entry."""
    if spec.kind is RewardKind.VERBAL_CONFIDENCE:
        value = traj.confidence if traj.correct else -traj.confidence
        return value + 0.0  # canonicalize -0.0
    if spec.custom_values is None or traj.id not in spec.custom_values:
        raise MissingReward(f"custom reward table has no entry for {traj.id!r}")
    return float(spec.custom_values[traj.id])


def space_rewards(space: TrajectorySpace, spec: RewardSpec) -> np.ndarray:
    return np.array([reward(t, spec) for t in space.trajectories], dtype=float)


def tilt(space: TrajectorySpace, spec: RewardSpec, eta: float) -> TrajectorySpace:
    """Reweight the space by exp(eta * reward) and renormalize.

    Computed in log space so that large eta * reward values do not overflow
    before normalization; the output is exposed as linear probabilities and
    preserves the support of the input exactly (zero stays zero, positive
    stays positive).
    """
    if eta <= 0.0:
        raise InvalidStep(f"eta must be strictly positive, got {eta}")
    r = space_rewards(space, spec)
    scaled = eta * r
    if np.max(np.abs(scaled)) > _EXP_LIMIT:
        raise NumericOverflow(
            f"|eta * reward| exceeds {_EXP_LIMIT}; tilted weights not representable"
        )
    if np.max(scaled) - np.min(scaled) > _EXP_LIMIT:
        # a spread beyond exp(700) would silently underflow small survivors
        # to zero, violating support preservation
        raise NumericOverflow(
            f"eta * reward spread exceeds {_EXP_LIMIT}; support would be lost"
        )
    p = space.probs()
    positive = p > 0.0
    logw = np.full_like(p, -np.inf)
    logw[positive] = np.log(p[positive]) + scaled[positive]
    peak = np.max(logw[positive])
    lse = peak + math.log(math.fsum(np.exp(logw[positive] - peak)))
    out = np.zeros_like(p)
    out[positive] = np.exp(logw[positive] - lse)
    out /= math.fsum(out)
    return space.with_probs(out)


def log_odds_delta(
    space: TrajectorySpace,
    spec: RewardSpec,
    eta: float,
    z1: str,
    z2: str,
) -> float:
    """Change in log(p(z1)/p(z2)) induced by one tilt step: eta * (r1 - r2).

    This closed form equals the measured log-odds change under `tilt` for any
    pair of positive-probability trajectories, because the partition function
    cancels in the ratio.
    """
    t1 = space.by_id(z1)
    t2 = space.by_id(z2)
    if t1.base_prob <= 0.0 or t2.base_prob <= 0.0:
        raise UndefinedLogOdds("log-odds need both base probabilities positive")
    return eta * (reward(t1, spec) - reward(t2, spec))


def answer_mass(space: TrajectorySpace, answer: str) -> float:
    """Total probability of trajectories producing the given answer."""
    return math.fsum(t.base_prob for t in space.trajectories if t.answer == answer)


@dataclass(frozen=True)
class BoundCheck:
    """Result of a mass-ratio bound verification.

    lhs is the post-tilt mass ratio M'(favored)/M'(competing); rhs is the
    guaranteed floor exp(eta*(a-b)) times the pre-tilt ratio. `holds` uses an
    absolute slack of 1e-10. `support_preserved` records that the set of
    positive-probability trajectories is unchanged by the tilt.
    """

    a: float
    b: float
    lhs: float
    rhs: float
    holds: bool
    support_preserved: bool


def _mass_ratio_check(
    space: TrajectorySpace,
    spec: RewardSpec,
    eta: float,
    correct_label: str,
    competing_label: str,
    a: float,
    b: float,
) -> BoundCheck:
    m_correct = answer_mass(space, correct_label)
    m_competing = answer_mass(space, competing_label)
    if m_competing <= 0.0 or m_correct <= 0.0:
        raise DegenerateRatio("both answers need positive mass for a ratio bound")
    tilted = tilt(space, spec, eta)
    lhs = answer_mass(tilted, correct_label) / answer_mass(tilted, competing_label)
    rhs = math.exp(eta * (a - b)) * m_correct / m_competing
    support_before = {t.id for t in space.trajectories if t.base_prob > 0.0}
    support_after = {t.id for t in tilted.trajectories if t.base_prob > 0.0}
    return BoundCheck(
        a=a,
        b=b,
        lhs=lhs,
        rhs=rhs,
        holds=lhs >= rhs - 1e-10,
        support_preserved=support_before == support_after,
    )


def verify_mass_ratio_bound(
    space: TrajectorySpace,
    spec: RewardSpec,
    eta: float,
    correct: str,
    competing: str,
) -> BoundCheck:
    """Check that tilting amplifies M(correct)/M(competing) by >= exp(eta*(a-b)).

    a is the minimum reward among (positive-probability) trajectories that
    produce `correct`; b is the maximum among those producing `competing`.
    The bound only applies when a > b; otherwise HypothesisViolated is raised.
    """
    a, b = _reward_envelope(space, spec, correct, competing)
    if a <= b:
        raise HypothesisViolated(
            f"need min correct reward > max competing reward, got a={a} <= b={b}"
        )
    return _mass_ratio_check(space, spec, eta, correct, competing, a, b)


def verbal_specialized_bound(
    space: TrajectorySpace,
    eta: float,
    correct: str,
    competing: str,
) -> BoundCheck:
    """Mass-ratio bound specialized to the signed-confidence reward.

    With alpha the minimum confidence on correct-answer trajectories and beta
    the minimum confidence on competing-answer trajectories, the envelope is
    a = alpha and b = -beta, so the guaranteed factor is exp(eta*(alpha+beta)).
    alpha = beta = 0 degenerates to plain ratio non-decrease and is allowed.
    """
    spec = RewardSpec.verbal()
    alpha = _confidence_floor(space, correct)
    beta = _confidence_floor(space, competing)
    return _mass_ratio_check(space, spec, eta, correct, competing, alpha, -beta)


def _reward_envelope(space, spec, correct_label, competing_label):
    correct_rewards = [
        reward(t, spec)
        for t in space.trajectories
        if t.answer == correct_label and t.base_prob > 0.0
    ]
    competing_rewards = [
        reward(t, spec)
        for t in space.trajectories
        if t.answer == competing_label and t.base_prob > 0.0
    ]
    if not correct_rewards or not competing_rewards:
        raise DegenerateRatio("both answers need positive mass for a ratio bound")
    return min(correct_rewards), max(competing_rewards)


def _confidence_floor(space, answer):
    confs = [
        t.confidence
        for t in space.trajectories
        if t.answer == answer and t.base_prob > 0.0
    ]
    if not confs:
        raise DegenerateRatio(f"answer {answer!r} has no positive-probability mass")
    return min(confs)


def confidence_weighted_score(space: TrajectorySpace, answer: str) -> float:
    """Sum of base_prob * confidence over trajectories with the given answer."""
    return math.fsum(
        t.base_prob * t.confidence for t in space.trajectories if t.answer == answer
    )


def answer_margin(space: TrajectorySpace) -> float:
    """Confidence-weighted score of the gold answer minus the best competitor.

    If no competing answer exists the margin is the gold score itself.
    """
    gold_score = confidence_weighted_score(space, space.gold_answer)
    competitors = {t.answer for t in space.trajectories} - {space.gold_answer}
    if not competitors:
        return gold_score
    best = max(confidence_weighted_score(space, y) for y in competitors)
    return gold_score - best


@dataclass(frozen=True)
class TiltStepSummary:
    gold_mass: float
    margin: float
    mean_wrong_confidence: float | None


@dataclass(frozen=True)
class TiltStep:
    step: int
    space: TrajectorySpace
    summary: TiltStepSummary


def summarize(space: TrajectorySpace) -> TiltStepSummary:
    wrong_mass = math.fsum(t.base_prob for t in space.trajectories if not t.correct)
    if wrong_mass > 0.0:
        mean_wrong = (
            math.fsum(
                t.base_prob * t.confidence for t in space.trajectories if not t.correct
            )
            / wrong_mass
        )
    else:
        mean_wrong = None
    return TiltStepSummary(
        gold_mass=answer_mass(space, space.gold_answer),
        margin=answer_margin(space),
        mean_wrong_confidence=mean_wrong,
    )


def iterate_tilt(
    space: TrajectorySpace,
    spec: RewardSpec,
    eta: float,
    steps: int,
) -> list[TiltStep]:
    """Apply `tilt` repeatedly, recording a summary after every step.

    Because exponential tilts compose additively in eta, k steps at eta equal
    one step at k*eta; the per-step trace exists to expose the trajectory of
    the gold-answer mass and margin.
    """
    if steps < 1:
        raise InvalidStep(f"steps must be >= 1, got {steps}")
    out = []
    current = space
    for k in range(1, steps + 1):
        current = tilt(current, spec, eta)
        out.append(TiltStep(step=k, space=current, summary=summarize(current)))
    return out


# ---------------------------------------------------------------------------
# Serialization (one JSON object per space) and the random-space generator
# used by the verification sweeps.
# ---------------------------------------------------------------------------


def space_to_dict(space: TrajectorySpace) -> dict:
    return {
        "gold_answer": space.gold_answer,
        "trajectories": [
            {
                "id": t.id,
                "answer": t.answer,
                "confidence": t.confidence,
                "base_prob": t.base_prob,
            }
            for t in space.trajectories
        ],
    }


def space_from_dict(obj: Mapping) -> TrajectorySpace:
    gold = obj["gold_answer"]
    if not isinstance(gold, str):
        raise ValueError("gold_answer must be a string")
    rows = obj["trajectories"]
    if not isinstance(rows, list) or not rows:
        raise ValueError("trajectories must be a non-empty list")
    trajs = []
    for row in rows:
        trajs.append(
            Trajectory(
                id=str(row["id"]),
                answer=str(row["answer"]),
                confidence=float(row["confidence"]),
                base_prob=float(row["base_prob"]),
                correct=str(row["answer"]) == gold,
            )
        )
    return TrajectorySpace(tuple(trajs), gold)


_ALPHABET = ("A", "B", "C")


def random_space(rng: np.random.Generator, max_trajectories: int = 20) -> TrajectorySpace:
    """Small random space: 2..max trajectories, Dirichlet(1) probabilities,
    uniform confidences, answers over a 3-symbol alphabet, gold drawn from the
    answers actually present."""
    n = int(rng.integers(2, max_trajectories + 1))
    probs = rng.dirichlet(np.ones(n))
    answers = [str(rng.choice(_ALPHABET)) for _ in range(n)]
    gold = str(rng.choice(sorted(set(answers))))
    trajs = tuple(
        Trajectory(
            id=f"t{i}",
            answer=answers[i],
            confidence=float(rng.uniform(0.0, 1.0)),
            base_prob=float(probs[i]),
            correct=answers[i] == gold,
        )
        for i in range(n)
    )
    # fsum of the Dirichlet draw can sit a hair off 1.0; renormalize exactly
    total = math.fsum(t.base_prob for t in trajs)
    trajs = tuple(
        Trajectory(t.id, t.answer, t.confidence, t.base_prob / total, t.correct)
        for t in trajs
    )
    return TrajectorySpace(trajs, gold)


def random_custom_rewards(
    rng: np.random.Generator, space: TrajectorySpace, low: float = -1.0, high: float = 1.0
) -> RewardSpec:
    values = {t.id: float(rng.uniform(low, high)) for t in space.trajectories}
    return RewardSpec.custom(values)
