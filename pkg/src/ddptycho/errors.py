"""Exception hierarchy; the CLI maps each class to its own exit code."""


class PtychoError(Exception):
    """Base class for all package errors."""


class ConfigError(PtychoError, ValueError):
    """Invalid parameter value or combination."""


class DimensionError(PtychoError, ValueError):
    """Array shapes disagree with a region, a geometry or each other."""


class FormatError(PtychoError):
    """Malformed array or metadata file; ``offset`` is the byte position when known."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} [byte {offset}]"
        super().__init__(message)
        self.offset = offset


class PlanError(PtychoError):
    """Infeasible decomposition or invalid neighbor query."""


class DivergenceError(PtychoError, ArithmeticError):
    """A solver iterate became non-finite."""

    def __init__(self, message, iteration=None):
        super().__init__(message)
        self.iteration = iteration


class MetricError(PtychoError, ValueError):
    """A diagnostic is undefined for its input (e.g. zero norm)."""
