"""Exception types shared across the package."""


class OUSError(Exception):
    pass


class ShapeError(OUSError, ValueError):
    pass


class DomainError(OUSError, ValueError):
    pass


class ContractError(OUSError, ValueError):
    pass


class NumericError(OUSError, ArithmeticError):
    """A non-finite value appeared where the contract requires finite ones."""


class FormatError(OUSError, ValueError):
    """Malformed binary container; ``offset`` is the byte offset of the fault."""

    def __init__(self, message, offset):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


class ConfigError(OUSError, ValueError):
    pass


class CheckpointMismatch(OUSError, ValueError):
    def __init__(self, message, name=None):
        super().__init__(message)
        self.name = name


class TrainingAborted(NumericError):
    def __init__(self, message, step, epoch):
        super().__init__(f"{message} (step {step}, epoch {epoch})")
        self.step = step
        self.epoch = epoch
