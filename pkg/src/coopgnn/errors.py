"""Exception types shared across the package."""


class CoGnnError(Exception):
    """Base class for all package errors."""


class SizeError(CoGnnError, ValueError):
    """Shapes or lengths do not agree."""


class ValidationError(CoGnnError, ValueError):
    """Input data violates a structural precondition."""


class ParameterError(CoGnnError, ValueError):
    """A hyperparameter is outside its admissible range."""


class ContractError(CoGnnError, RuntimeError):
    """An operation was called in a state it does not support."""


class ConfigError(CoGnnError, ValueError):
    """Run configuration is inconsistent with the task or dataset."""


class DivergenceError(CoGnnError, RuntimeError):
    """Training produced a non-finite loss."""

    def __init__(self, epoch: int, loss: float):
        super().__init__(f"non-finite loss {loss!r} at epoch {epoch}")
        self.epoch = epoch
        self.loss = loss


class ParseError(CoGnnError, ValueError):
    """A text file could not be parsed."""

    def __init__(self, path, line: int, message: str):
        super().__init__(f"{path}:{line}: {message}")
        self.path = path
        self.line = line
