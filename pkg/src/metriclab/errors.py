"""Shared exception types. The CLI maps these onto exit codes."""


class ConfigError(ValueError):
    """Invalid configuration: bad key, bad type, or violated invariant."""


class ShapeError(ValueError):
    """Operand shapes violate an operation's contract."""


class NumericsError(ArithmeticError):
    """Non-finite values where the contract requires finite ones."""


class TrainingDivergenceError(NumericsError):
    """A loss part went NaN/inf during optimization."""

    def __init__(self, message, part_values=None, lr=None):
        super().__init__(message)
        self.part_values = dict(part_values or {})
        self.lr = lr
