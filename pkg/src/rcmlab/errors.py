"""Exception hierarchy shared by all modules.

The harness maps these onto process exit codes, so every error raised on a
user-reachable path should derive from :class:`RcmError`.
"""

from __future__ import annotations


class RcmError(Exception):
    """Base class for all library errors."""


class ParameterError(RcmError, ValueError):
    """Invalid law, box, trap or operation parameters."""


class BoundaryError(RcmError, ValueError):
    """A planted object does not fit inside a free-topology box."""


class TopologyError(RcmError, ValueError):
    """Operation is not supported on this box topology."""


class HorizonError(RcmError):
    """A time-t statistic would feel the finite box."""


class DegenerateDecompositionError(RcmError):
    """The strong-edge graph is empty at the requested cut-off."""


class DomainError(RcmError, ValueError):
    """An argument lies outside the domain of the operation."""


class NoBridgeError(RcmError):
    """Return to the origin at the requested time has probability zero."""


class ResourceError(RcmError):
    """A memory or work guard was exceeded."""


class BudgetError(ResourceError):
    """Monte Carlo budget exhausted before producing a usable estimate."""


class ErgodicityError(RcmError):
    """The coarse chain is not irreducible on the giant cluster."""


class NumericalError(RcmError):
    """An iterative routine failed to converge."""

    def __init__(self, message: str, residual: float | None = None):
        super().__init__(message)
        self.residual = residual


class EmptyHoleError(RcmError):
    """G_xy is empty; excursion mass through it is identically zero."""


class InsufficientTraceError(RcmError):
    """The coarse trace does not cover the requested number of fine steps."""


class ConfigError(RcmError, ValueError):
    """Experiment configuration failed validation."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field
