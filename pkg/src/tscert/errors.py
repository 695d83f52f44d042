"""Exception hierarchy. Each family maps to a CLI exit code."""


class TscertError(Exception):
    exit_code = 1


class ConfigError(TscertError, ValueError):
    exit_code = 2


class DataError(TscertError, ValueError):
    exit_code = 3


class FormatError(DataError):
    pass


class ParseError(DataError):
    pass


class EmptyInputError(DataError):
    pass


class CompatibilityError(DataError):
    pass


class DivergenceError(TscertError, ArithmeticError):
    exit_code = 4

    def __init__(self, epoch: int, loss: float):
        super().__init__(f"non-finite training loss {loss!r} at epoch {epoch}")
        self.epoch = epoch
        self.loss = loss


class AttackError(TscertError, ArithmeticError):
    exit_code = 4
