"""Exception hierarchy. ``exit_code`` is what the CLI returns for each kind."""


class PercollError(Exception):
    exit_code = 1


class ConfigError(PercollError):
    exit_code = 2


class DataError(PercollError):
    exit_code = 3


class DimensionError(PercollError, ValueError):
    exit_code = 3


class ParameterError(PercollError, ValueError):
    exit_code = 2


class ContractError(PercollError, ValueError):
    exit_code = 3


class DecodeError(DataError):
    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte {offset})"
        super().__init__(message)
        self.offset = offset


class SplitError(DataError):
    pass


class CheckpointError(DataError):
    pass


class NumericError(PercollError, ArithmeticError):
    exit_code = 4
