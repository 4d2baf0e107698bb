"""Exception hierarchy shared by all modules."""


class DualDistillError(Exception):
    """Base class for all errors raised by this package."""


class InvalidInputError(DualDistillError, ValueError):
    """An argument violates a documented precondition (shape, range, finiteness)."""


class ConfigError(DualDistillError, ValueError):
    """A configuration value violates its invariant."""


class ParseError(DualDistillError, ValueError):
    """A file could not be parsed; carries the offending line number."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class MissingPredictionError(DualDistillError, KeyError):
    """A file-backed oracle was queried with an unknown sample id."""


class DegenerateStateError(DualDistillError):
    """A computation reached a state with no usable content (e.g. all prototype classes empty)."""


class TrainingDivergenceError(DualDistillError, ArithmeticError):
    """A loss or gradient became non-finite; the diagnostic names epoch, batch and component."""


class UnsupportedEvaluationError(DualDistillError):
    """Accuracy evaluation was requested on data without ground-truth labels."""
