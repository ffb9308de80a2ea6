"""Exception types raised across the package."""


class SalnetError(Exception):
    """Base class for every error raised by salnet."""


class InvalidShapeError(SalnetError, ValueError):
    pass


class InvalidArgumentError(SalnetError, ValueError):
    pass


class DegenerateInputError(SalnetError, ValueError):
    """A metric was asked to score an input it is undefined on (zero mass, zero variance)."""


class InconsistentTraceError(SalnetError, ValueError):
    pass


class DivergenceError(SalnetError, ArithmeticError):
    def __init__(self, epoch, loss):
        super().__init__(f"training diverged at epoch {epoch}: loss={loss!r}")
        self.epoch = epoch
        self.loss = loss


class ParseError(SalnetError, ValueError):
    pass


class FixationValidationError(SalnetError, ValueError):
    pass


class CheckpointFormatError(SalnetError, ValueError):
    pass


class IncompatibleCheckpointError(CheckpointFormatError):
    pass


class TruncatedFileError(SalnetError, OSError):
    pass
