"""Exception taxonomy shared across the package.

The CLI maps these onto process exit codes: configuration errors exit 2,
numerical failures exit 3, precondition failures exit 4.
"""

from __future__ import annotations


class SpdeLabError(Exception):
    """Base class for errors raised by this package."""


class ConfigurationError(SpdeLabError):
    """Invalid configuration, schema violation, or incompatible arguments."""


class NumericalFailure(SpdeLabError):
    """An iterative or linear-algebra kernel failed to produce a usable result."""


class PreconditionFailure(SpdeLabError):
    """A documented mathematical precondition was violated by the inputs."""


class BlownUp(SpdeLabError):
    """Signal that a quantity has left its finite regime.

    Raised when the analytic lower solution is evaluated at or past its
    divergence time, or when a simulated field crosses the blowup cutoff.
    Carries the time at which the event fired.
    """

    def __init__(self, t: float, message: str | None = None):
        self.t = float(t)
        super().__init__(message or f"blown up at t={self.t:.6g}")
