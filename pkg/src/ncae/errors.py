class NcaeError(Exception):
    exit_code = 1


class ConfigError(NcaeError, ValueError):
    exit_code = 1


class DataError(NcaeError, ValueError):
    exit_code = 2


class NumericalError(NcaeError, ArithmeticError):
    exit_code = 3
