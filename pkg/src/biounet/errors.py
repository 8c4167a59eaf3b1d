"""Exception hierarchy shared by every subsystem.

The CLI maps these onto its stable exit codes, so each class carries the
code it should produce.
"""


class BioUNetError(Exception):
    exit_code = 1


class DimensionError(BioUNetError, ValueError):
    """Tensor shapes do not satisfy an operation's contract."""

    exit_code = 3


class ContractError(BioUNetError, ValueError):
    exit_code = 3


class StateError(BioUNetError, RuntimeError):
    """An object was used in a state that forbids the requested action."""

    exit_code = 3


class NumericError(BioUNetError, ArithmeticError):
    exit_code = 4


class ConfigError(BioUNetError, ValueError):
    exit_code = 3

    def __init__(self, message, key_path=None):
        super().__init__(message if key_path is None else f"{key_path}: {message}")
        self.key_path = key_path


class CheckpointError(BioUNetError, ValueError):
    exit_code = 3


class IngestionError(BioUNetError, OSError):
    exit_code = 2
