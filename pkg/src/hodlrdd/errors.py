"""Exception hierarchy shared by all modules."""


class HodlrError(Exception):
    """Base class for library errors."""


class GeometryError(HodlrError):
    """Points outside the domain, level mismatches, malformed boxes."""


class KernelEvaluationError(HodlrError):
    """A kernel was evaluated where it is undefined (e.g. r == 0 with no diagonal value)."""


class ConvergenceError(HodlrError):
    """An iterative procedure failed to converge or diverged."""


class GuardError(HodlrError):
    """A request exceeds a configured size guard (memory or dense-oracle caps)."""


class NumericalError(HodlrError):
    """Non-finite or degenerate numerical input (NaN/inf entries, zero matrices)."""
