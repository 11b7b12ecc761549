"""Exception types raised across the toolkit."""


class PmkvError(Exception):
    """Base class for all toolkit errors."""


class ScenarioError(PmkvError):
    """A scenario definition produced an invalid value or was not found."""


class GeometryError(PmkvError):
    """Invalid domain parameters or a projection that failed to converge."""


class DomainError(GeometryError):
    """A point was not where an operation requires it to be (e.g. not on the boundary)."""


class BlowUpError(PmkvError):
    """A particle position became non-finite during a step."""


class SimConfigError(PmkvError):
    """Inconsistent simulation configuration."""


class NonConvergenceError(PmkvError):
    """An iterative procedure hit its cap; ``trace`` holds the diagnostic sequence.

    ``last`` is the final iterate when the procedure has one (an ensemble for the fixed point).
    """

    def __init__(self, message, trace=None, last=None):
        super().__init__(message)
        self.trace = list(trace) if trace is not None else []
        self.last = last


class TransportError(PmkvError):
    """Invalid input to a transport distance."""


class CostError(TransportError):
    """A cost function violates the requirements of the requested distance."""


class EstimatorError(PmkvError):
    """The entropy estimator cannot be evaluated on the given samples."""


class EigenproblemError(PmkvError):
    """Root bracketing for the mixed eigenproblem failed."""


class FitError(PmkvError):
    """Not enough usable points for a decay fit."""


class ConfigError(PmkvError):
    """Configuration file violates the schema; ``problems`` lists every offending key."""

    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("invalid configuration:\n" + "\n".join("  " + p for p in self.problems))
