"""Shared exception types."""


class ShapeError(ValueError):
    """Operand shapes violate an operation's contract."""


class ContractError(ValueError):
    """An argument violates a documented precondition."""


class ConfigError(ValueError):
    """A configuration value is inconsistent or out of range."""


class NumericError(ArithmeticError):
    """A numeric guard tripped (non-finite gradient, zero norm, ...)."""


class DataError(ValueError):
    """A dataset record or manifest fails validation."""


class CheckpointError(ValueError):
    """A checkpoint file is malformed or fails its integrity check."""


class SequenceLengthError(ContractError):
    """A composed sequence exceeds the model's positional capacity."""
