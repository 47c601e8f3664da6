"""Exception hierarchy shared by the library and the command line."""


class ConfigError(ValueError):
    """Invalid configuration, detected before any numeric work."""


class TailConfigError(ConfigError):
    """Extrapolation rule that would make the frequency integral diverge."""


class DomainError(ValueError):
    """Argument outside the domain where a formula is defined."""


class ConvergenceError(RuntimeError):
    """Adaptive quadrature ran out of subdivisions.

    The best available estimate is kept on the exception so callers can still
    report it.
    """

    def __init__(self, message, best=None, est_error=None, node_count=0):
        super().__init__(message)
        self.best = best
        self.est_error = est_error
        self.node_count = node_count


class FitError(RuntimeError):
    """Least-squares fit failed or produced a non-physical result."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}
