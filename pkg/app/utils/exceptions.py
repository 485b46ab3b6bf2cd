from typing import Optional


class DomainError(ValueError):
    """A numeric argument lies outside the domain of an operation."""


class UsageError(ValueError):
    """An operation was called in a way it does not support."""


class ConfigurationError(ValueError):
    """
    A protocol or run configuration violates an invariant.

    Args:
        message: Human-readable description of the problem.
        key: Offending run-file key, when known.
        line: 1-based line number in the run file, when known.
    """

    def __init__(self, message: str, key: Optional[str] = None, line: Optional[int] = None):
        self.key = key
        self.line = line
        location = ""
        if key is not None:
            location = f"key '{key}'"
            if line is not None:
                location += f" (line {line})"
            location += ": "
        super().__init__(f"{location}{message}")


class LpSolverError(RuntimeError):
    """The simplex method could not process a linear program."""


class BoundInconsistencyError(RuntimeError):
    """Bound intervals handed between estimation steps are inconsistent."""
