"""Exception hierarchy shared across the package.

The CLI maps these onto process exit codes: ConfigError -> 2,
DataError (and subclasses) -> 3, NumericError -> 4.
"""


class SSLPDLError(Exception):
    """Base class for all package errors."""


class ConfigError(SSLPDLError):
    """Invalid or inconsistent configuration / arguments."""


class DataError(SSLPDLError):
    """Problems with stored or generated data."""


class GridFormatError(DataError):
    """A grid file does not carry the expected magic/layout."""


class GridCorruptionError(DataError):
    """A grid file is truncated or otherwise unreadable."""


class GridValidationError(DataError):
    """Grid contents violate invariants (non-finite values, bad shapes)."""


class SamplingError(DataError):
    """A sampling target cannot be met with the available data."""


class CheckpointError(DataError):
    """Checkpoint file is incompatible with the requested model."""


class NumericError(SSLPDLError):
    """Non-finite values encountered where finiteness is required."""


class TrainingError(NumericError):
    """Training aborted; carries the failing step index."""

    def __init__(self, message: str, step: int):
        super().__init__(f"{message} (step {step})")
        self.step = step
