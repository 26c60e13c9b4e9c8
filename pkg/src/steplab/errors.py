"""Exception types shared across the package."""


class StepLabError(Exception):
    """Base class for all steplab errors."""


class ShapeError(StepLabError):
    """Tensor shapes are incompatible for the requested operation."""


class AxisError(StepLabError):
    """Axis index out of range."""


class ArgError(StepLabError):
    """Invalid argument value (counts, levels, k out of range, ...)."""


class CtxError(StepLabError):
    """A symbolic dimension is not bound in the stream context."""


class StepTypeError(StepLabError):
    """Simulator-level dtype/dims rule violation for a primitive."""


class StreamUnderflow(StepLabError):
    """Merge dequeued from an exhausted partition output."""


class StreamOverflow(StepLabError):
    """Partition output held leftover tokens after Merge completed."""


class ParseError(StepLabError):
    """Implementation text does not match the surface grammar."""

    def __init__(self, message, line=None, column=None):
        self.line = line
        self.column = column
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class SchemaError(StepLabError):
    """Task document is missing or mis-typing a required field."""

    def __init__(self, field, message=None):
        self.field = field
        super().__init__(message or f"bad or missing field: {field}")


class UndefinedVariable(StepLabError):
    """A statement reads a variable before any statement defines it."""


class PrimitiveRuleViolation(StepLabError):
    """Static per-primitive typing rule failed."""

    def __init__(self, stmt_index, rule):
        self.stmt_index = stmt_index
        self.rule = rule
        super().__init__(f"statement {stmt_index}: {rule}")


class SimError(StepLabError):
    """Runtime failure inside a program, tagged with the statement index."""

    def __init__(self, stmt_index, cause):
        self.stmt_index = stmt_index
        self.cause = cause
        super().__init__(f"statement {stmt_index}: {cause}")


class BackendError(StepLabError):
    """Generator backend failed after the configured retries."""
