class PointflowError(Exception):
    """Base class for every failure a command reports with its own exit code."""

    exit_code = 1

    @property
    def error_class(self):
        return type(self).__name__


class ConfigError(PointflowError):
    exit_code = 2


class DataError(PointflowError):
    exit_code = 3


class ParseError(DataError):
    def __init__(self, message, line=None, path=None):
        self.line = line
        self.path = path
        where = ""
        if path is not None:
            where += f"{path}"
        if line is not None:
            where += f":{line}"
        super().__init__(f"{where}: {message}" if where else message)


class DomainError(DataError):
    """Physical inputs outside the domain of a formula (non-positive scales, points inside a body)."""


class CheckpointError(DataError):
    pass


class NumericalError(PointflowError):
    exit_code = 4


class ShapeError(NumericalError):
    pass


class DegenerateBatchError(NumericalError):
    pass


class ContractViolation(NumericalError):
    pass


class DivergenceError(NumericalError):
    def __init__(self, message, last_good_epoch=None):
        self.last_good_epoch = last_good_epoch
        super().__init__(message)
