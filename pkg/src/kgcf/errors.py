"""Shared exception types."""


class ParseError(ValueError):
    """A triple file line could not be parsed; carries file name and line number."""

    def __init__(self, path, line_no, message):
        super().__init__(f"{path}:{line_no}: {message}")
        self.path = str(path)
        self.line_no = line_no


class ConfigError(ValueError):
    """Invalid or inconsistent configuration / artifacts."""


class ShapeError(ValueError):
    """Array dimension mismatch."""


class NumericError(ArithmeticError):
    """Non-finite value encountered during model computation."""


class UndefinedStatisticError(ValueError):
    """A statistic was requested over an empty sample."""


class DegenerateStatisticError(ValueError):
    """Paired test differences have zero variance but nonzero mean."""


class CheckpointError(ValueError):
    """Checkpoint header does not match the expected format or shapes."""
