"""Exception types shared across the package."""


class BosonicLinkError(Exception):
    """Base class for all errors raised by this package."""


class InvalidDimensionError(BosonicLinkError, ValueError):
    pass


class ConfigError(BosonicLinkError, ValueError):
    """Raised when a device configuration cannot be parsed or validated.

    ``path`` is the dotted field path of the offending entry (e.g. ``module1.t1``).
    """

    def __init__(self, message, path=None):
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)


class NumericalError(BosonicLinkError, RuntimeError):
    """Base class for failures of a numerical procedure (integration, fits, solves)."""


class IntegrationError(NumericalError):
    pass


class ConvergenceError(NumericalError):
    """An iterative method stopped before meeting its tolerance.

    The last iterate is kept on ``result`` so callers can still inspect it.
    """

    def __init__(self, message, result=None):
        self.result = result
        super().__init__(message)


class FitError(NumericalError):
    pass


class TruncationError(NumericalError):
    def __init__(self, message, report=None):
        self.report = report
        super().__init__(message)


class LeakageError(BosonicLinkError, ValueError):
    def __init__(self, leakage):
        self.leakage = leakage
        super().__init__(f"population outside the qubit subspace is {leakage:.3%}")


class ProtocolError(NumericalError):
    pass
