"""Exception taxonomy shared across the toolkit.

Every error raised by library code derives from UncalError so callers (and
the CLI) can distinguish validation failures from genuine bugs.
"""

from __future__ import annotations


class UncalError(Exception):
    """Base class for all toolkit errors."""


class MissingReward(UncalError):
    """A custom reward table has no entry for a trajectory id."""


class UnknownTrajectory(UncalError):
    """A trajectory id was requested that the space does not contain."""


class InvalidStep(UncalError):
    """A tilt step size eta must be strictly positive."""


class NumericOverflow(UncalError):
    """eta * reward is too large to expose linear probabilities safely."""


class UndefinedLogOdds(UncalError):
    """Log-odds are undefined when a trajectory has zero base probability."""


class HypothesisViolated(UncalError):
    """The reward-separation hypothesis (a > b) does not hold."""


class DegenerateRatio(UncalError):
    """An answer-mass ratio is undefined because one mass is zero."""


class MissingSignal(UncalError):
    """A record lacks a signal (confidence, probe score, ...) an operation needs."""


class EmptyBatch(UncalError):
    """A metric was requested over zero usable records."""


class UndefinedCorrelation(UncalError):
    """A correlation is undefined (fewer than two groups, or zero variance)."""


class DegenerateFit(UncalError):
    """A model fit cannot proceed (single class, too few records, no spread)."""


class NotEmitted(UncalError):
    """Span features were requested for a record without any emission."""


class AlignmentError(UncalError):
    """Token-aligned hidden states are missing or inconsistent with the record."""


class UndefinedMetric(UncalError):
    """A rank metric needs both classes present."""


class ShapeError(UncalError):
    """Two arrays that must agree in shape do not."""


class UndefinedSimilarity(UncalError):
    """A similarity or drift ratio is undefined (zero variance or zero norm)."""


class CorruptInput(UncalError):
    """More than half of the lines in an input file failed validation."""


class IoError(UncalError):
    """An input or output file could not be read or written."""
