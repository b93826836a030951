"""Exception types shared across the package."""


class CellNasError(Exception):
    """Base class for all package errors."""


class UnknownOperator(CellNasError):
    """Operator token matches no recognized pattern."""


class InvalidParameter(CellNasError):
    """Operator token parsed but carries a zero/negative kernel or dilation."""


class CellTooLarge(CellNasError):
    """Cell exceeds the configured canonicalization bound."""


class CellComplete(CellNasError):
    """Cell already holds the maximum number of blocks."""


class UnsupportedOperator(CellNasError):
    """Operator kind has no parameter-count convention."""


class DegenerateTimes(CellNasError):
    """Measured block times cannot anchor the reindex scale (max <= bias)."""


class MissingOperator(CellNasError):
    """An operator in the cell has no reindex entry."""


class InsufficientData(CellNasError):
    """Too few rows to fit a model."""


class DegenerateInput(CellNasError):
    """Metric undefined on this input (e.g. constant measured values)."""


class EvaluationFailed(CellNasError):
    """A candidate evaluation did not produce a result."""


class ProtocolError(EvaluationFailed):
    """Malformed frame on the worker wire."""


class WorkerError(EvaluationFailed):
    """Worker-reported evaluation error."""


class EvaluationTimeout(EvaluationFailed):
    """Worker did not answer within the configured timeout."""


class CorruptState(CellNasError):
    """Run directory state cannot support a resume."""


class SchemaError(CellNasError):
    """Configuration file violates the schema."""

    def __init__(self, field_path: str, message: str):
        self.field_path = field_path
        super().__init__(f"{field_path}: {message}")


class NoFeasibleConfig(CellNasError):
    """No macro configuration satisfies the parameter range."""
