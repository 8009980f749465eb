"""Exception types shared across the planner."""


class CovplanError(Exception):
    """Base class for all planner errors."""


class ConfigError(CovplanError):
    """Bad configuration, map, or input file."""


class InfeasibleEdgeError(CovplanError):
    """A steering subproblem has no admissible solution.

    Carries the terminal residual (if any) in ``residual``.
    """

    def __init__(self, msg, residual=None):
        super().__init__(msg)
        self.residual = residual


class NumericalInstabilityError(CovplanError):
    """An integration or solve lost validity (blow-up, lost PSD)."""


class SamplingError(CovplanError):
    """The belief sampler exhausted its rejection budget."""
