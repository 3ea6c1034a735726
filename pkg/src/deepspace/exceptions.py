"""Exception types raised by deepspace."""


class DeepSpaceError(Exception):
    """Base class for all package errors."""


class DegenerateDomainError(DeepSpaceError):
    pass


class DataFormatError(DeepSpaceError, ValueError):
    pass


class DivergenceError(DeepSpaceError, FloatingPointError):
    """Training produced a non-finite loss or activation."""

    def __init__(self, message, epoch=None, member=None):
        self.epoch = epoch
        self.member = member
        parts = [message]
        if member is not None:
            parts.append(f"member={member}")
        if epoch is not None:
            parts.append(f"epoch={epoch}")
        super().__init__(" ".join(parts))


class PartitionError(DeepSpaceError):
    pass


class ModelFormatError(DeepSpaceError):
    pass
