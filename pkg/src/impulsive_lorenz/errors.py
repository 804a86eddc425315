"""Exception types shared across the package.

Every numerical failure derives from :class:`NumericalFailure` so that the
command line layer can map it to a single exit code.
"""

from __future__ import annotations


class NumericalFailure(RuntimeError):
    """Base class for failures of a numerical procedure."""


class StepFailure(NumericalFailure):
    """Adaptive step size underflowed."""


class Escape(NumericalFailure):
    """Trajectory left the trapping ball."""


class NoReturn(NumericalFailure):
    """No section crossing within the configured flight-time horizon."""


class SingularInput(NumericalFailure, ValueError):
    """Input lies on (or within the guard band of) the singular line u = 0."""


class OutOfSection(NumericalFailure):
    """A displaced point left the normalized square."""


class NotInFlowBox(NumericalFailure):
    """Backward flow did not reach the section within the flow-box depth."""


class ConeEscape(NumericalFailure):
    """A tangent vector left the unstable cone."""


class ConeBroken(NumericalFailure):
    """Cone escape rate exceeded the admissible threshold.

    The computed result is attached as ``result`` so callers can still
    inspect the estimate.
    """

    def __init__(self, message: str, result=None):
        super().__init__(message)
        self.result = result


class PoorFit(NumericalFailure):
    """A regression did not reach the required coefficient of determination."""

    def __init__(self, message: str, result=None):
        super().__init__(message)
        self.result = result


class GridTooCoarse(NumericalFailure):
    """Refining the evaluation grid changed a supremum by more than 5%."""


class Unstable(NumericalFailure):
    """Cluster count changed when the number of seeds was doubled."""


class DegenerateRoof(NumericalFailure):
    """Mean roof is not positive."""


class FamilyMismatch(ValueError):
    """Two measure-evaluation vectors come from different test families."""


class ConfigError(ValueError):
    """Invalid experiment configuration."""
