"""Exception taxonomy shared across the package."""


class GatecalError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(GatecalError):
    """Operand shapes are inconsistent with the requested operation."""


class ContractError(GatecalError):
    """A documented precondition was violated by the caller."""


class NumericError(GatecalError):
    """A computation produced or detected invalid numbers (NaN/Inf,
    failed convergence, negative eigenvalues beyond tolerance)."""


class ProtocolError(GatecalError):
    """The ask/tell optimizer protocol was violated."""


class CalibrationShapeError(GatecalError):
    """A calibration vector does not match the model it is applied to."""


class EvaluationError(GatecalError):
    """Candidate evaluation failed; the message names the offending
    candidate or bucket item."""


class TrainingDivergedError(GatecalError):
    """Training loss became non-finite; carries the step index."""

    def __init__(self, step: int, message: str = ""):
        self.step = step
        super().__init__(message or f"training diverged at step {step}")


class ConfigError(GatecalError):
    """Config file could not be parsed or contains unknown/invalid keys."""

    def __init__(self, message: str, line: int | None = None, column: int | None = None):
        self.line = line
        self.column = column
        if line is not None:
            where = f"line {line}" + (f", column {column}" if column is not None else "")
            message = f"{message} ({where})"
        super().__init__(message)


class CheckpointError(GatecalError):
    """Checkpoint file is missing, malformed, or fails its hash check."""
