"""Exception hierarchy.

Every error raised by the library derives from :class:`SeaError`; the CLI maps
the subclasses onto exit codes.
"""


class SeaError(Exception):
    """Base class for all library errors."""


class StateError(SeaError, ValueError):
    """Invalid probability / square-root state or malformed vector input."""

    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


class MetricError(SeaError, ValueError):
    """Metric tensor is not symmetric positive-definite or is ill-conditioned."""

    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


class DegenerateConstraintsError(SeaError):
    """Constraint gradients are (nearly) linearly dependent on the active support."""

    def __init__(self, message, combination=None, rows=None):
        super().__init__(message)
        self.combination = combination
        self.rows = rows


class InfeasibleTargetsError(SeaError):
    """Target mean values are not strictly inside the attainable hull."""


class NumericalError(SeaError):
    """A numerical procedure failed to converge or lost accuracy."""


class StiffnessError(NumericalError):
    """Step size fell below the underflow threshold."""


class EquilibriumError(SeaError):
    """Relaxation time undefined at equilibrium (affinity is zero)."""


class ConsistencyError(NumericalError):
    """An identity that must hold exactly was violated beyond roundoff."""
