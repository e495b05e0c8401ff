"""Exception hierarchy shared by all modules."""


class NsmgpError(Exception):
    """Base class for every error raised by this package."""

    exit_code = 4


class NotPositiveDefinite(NsmgpError, ValueError):
    pass


class NoConvergence(NsmgpError, RuntimeError):
    pass


class DimensionMismatch(NsmgpError, ValueError):
    exit_code = 2


class DegenerateData(NsmgpError, ValueError):
    exit_code = 3


class NonFinite(NsmgpError, FloatingPointError):
    pass


class ZeroVariance(NsmgpError, ValueError):
    pass


class EmptyHoldout(NsmgpError, ValueError):
    exit_code = 3


class EmptyTraining(NsmgpError, ValueError):
    exit_code = 2


class ParseError(NsmgpError, ValueError):
    exit_code = 3


class DuplicateTimestamp(ParseError):
    pass


class EmptyFile(ParseError):
    pass


class ConfigError(NsmgpError, ValueError):
    exit_code = 2
