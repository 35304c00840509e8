"""Exception hierarchy.

Validation problems (bad input, impossible requests) derive from
:class:`ValidationError`; failures of the numerical machinery derive from
:class:`NumericalError`. The CLI maps the two families to distinct exit codes.
"""


class BTAuditError(Exception):
    """Base class for all errors raised by this package."""


class ValidationError(BTAuditError, ValueError):
    pass


class ParseError(ValidationError):
    """A record in an input file could not be parsed."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class NotFlippableError(ValidationError):
    pass


class ActionError(ValidationError):
    pass


class NumericalError(BTAuditError, ArithmeticError):
    pass


class NonConvergenceError(NumericalError):
    def __init__(self, message: str, grad_norm: float):
        self.grad_norm = grad_norm
        super().__init__(f"{message} (last gradient inf-norm {grad_norm:.3e})")


class LeverageSaturationError(NumericalError):
    def __init__(self, row: int, leverage: float):
        self.row = row
        self.leverage = leverage
        super().__init__(f"row {row} has leverage {leverage:.12f} >= 1; one-step Newton divisor vanishes")


class IsolatedPlayerError(NumericalError):
    def __init__(self, player: int):
        self.player = player
        super().__init__(f"player {player} has zero local information (no weighted comparisons)")


class SolveError(NumericalError):
    pass
