"""Exceptions raised across the package.

Each subclasses the builtin a caller would otherwise expect, so code that
catches ValueError or RuntimeError keeps working.
"""


class ConfigError(ValueError):
    """Unknown key, wrong type or out-of-range value in a configuration"""


class DataError(ValueError):
    """Market data that cannot be used: unparsable, empty, inconsistent or
    too short"""


class ContractError(AssertionError):
    """An internal contract between components was broken"""


class TrainingFault(RuntimeError):
    """Training produced a non-finite value

    :param message: (str) description of the fault
    :param diagnostics: (dict) step counters and summary values at the fault
    """
    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = dict(diagnostics or {})


# Exit codes used by the command line
EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_TRAINING = 4
