"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Tensor shapes do not satisfy an operation's contract."""


class ContractError(ValueError):
    """An operation was called outside its stated contract (e.g. non-scalar
    loss passed to backward, decoding past the step limit)."""


class NumericalError(ArithmeticError):
    """A forward or backward pass produced NaN/Inf, or a numeric update
    would leave the model in an invalid state."""


class ValidationError(ValueError):
    """Input data (corpus records, checkpoints, predictions) failed
    validation against its schema or invariants."""


class ConfigError(ValueError):
    """A run configuration is inconsistent or incomplete."""
