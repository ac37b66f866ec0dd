"""Exception hierarchy. ``exit_code`` is what the CLI returns for each class."""


class SurrogateError(Exception):
    exit_code = 3


class ConfigurationError(SurrogateError, ValueError):
    exit_code = 2


class ShapeError(SurrogateError, ValueError):
    exit_code = 3


class DataError(SurrogateError):
    exit_code = 3


class ContractError(SurrogateError, RuntimeError):
    exit_code = 3


class NumericError(SurrogateError, ArithmeticError):
    exit_code = 4
