"""Exception hierarchy shared by the library and the CLI.

Each class carries the process exit code the CLI reports for it.
"""


class HotspotError(Exception):
    exit_code = 1


class InvalidArgument(HotspotError, ValueError):
    exit_code = 2


class ConfigError(InvalidArgument):
    exit_code = 2


class FormatError(HotspotError, ValueError):
    exit_code = 3


class OutOfRange(HotspotError, ValueError):
    exit_code = 3


class EmptyDatasetError(HotspotError, ValueError):
    exit_code = 3


class EmptyHistoryError(HotspotError, ValueError):
    exit_code = 3


class NumericalError(HotspotError, ArithmeticError):
    exit_code = 4


class CheckpointError(HotspotError):
    exit_code = 4


class TrainingDiverged(NumericalError):
    """Raised when a loss goes non-finite; keeps the last finite parameter state."""

    def __init__(self, stage, epoch, last_good=None):
        super().__init__(f"non-finite loss in {stage} at epoch {epoch}")
        self.stage = stage
        self.epoch = epoch
        self.last_good = last_good
