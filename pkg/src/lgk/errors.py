"""Exception hierarchy.

Every error carries an ``exit_code`` so the CLI can map failures onto
0 / 2 (usage or config) / 3 (data validation) / 4 (numerical failure).
"""


class LGKError(Exception):
    exit_code = 1


class ConfigError(LGKError, ValueError):
    exit_code = 2


class ContractError(LGKError, ValueError):
    """A caller broke an operation precondition."""

    exit_code = 2


class DimensionError(LGKError, ValueError):
    exit_code = 4


class DegenerateRowError(LGKError, ValueError):
    exit_code = 4


class NumericalError(LGKError, ArithmeticError):
    exit_code = 4


class ValidationError(LGKError, ValueError):
    exit_code = 3


class ParseError(ValidationError):
    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class DegenerateEmbeddingError(ValidationError):
    pass


class NoCandidatesError(LGKError, LookupError):
    exit_code = 3


class UnknownViewError(LGKError, KeyError):
    exit_code = 3

    def __str__(self):
        return str(self.args[0]) if self.args else "unknown view"


class UnreachableError(LGKError, ValueError):
    exit_code = 3


class IllegalActionError(LGKError, ValueError):
    exit_code = 3


class InvariantViolation(LGKError, AssertionError):
    """Internal bug: an invariant that construction should guarantee failed."""

    exit_code = 4
