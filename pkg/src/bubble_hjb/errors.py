"""Exception hierarchy shared by every module of the package."""


class BubbleError(Exception):
    """Base class for all package errors."""


class InvalidGridError(BubbleError):
    pass


class InvalidParameterError(BubbleError, ValueError):
    pass


class IterationError(BubbleError):
    """An iterative method failed to converge.

    Attributes:
        residual: Last residual reached before giving up.
    """

    def __init__(self, message: str, residual: float = float("nan")):
        super().__init__(message)
        self.residual = residual


class BracketError(BubbleError):
    pass


class GateViolationError(BubbleError):
    pass


class InnerSolveError(IterationError):
    pass


class SchemeFailureError(IterationError):
    pass


class StepError(IterationError):
    pass


class WeightExplosionError(BubbleError):
    pass


class BranchError(BubbleError):
    pass


class ScenarioConfigError(BubbleError, ValueError):
    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


class NoBubbleError(BubbleError):
    pass


class ConfigParseError(BubbleError, ValueError):
    def __init__(self, message: str, line: int | None = None, key: str | None = None):
        where = []
        if line is not None:
            where.append(f"line {line}")
        if key is not None:
            where.append(f"key '{key}'")
        prefix = f"{', '.join(where)}: " if where else ""
        super().__init__(prefix + message)
        self.line = line
        self.key = key
